#include "fairpol/nn.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace fairpol {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Mlp::Mlp(const MlpConfig& cfg, Rng& rng) : head_(cfg.head), dropout_(cfg.dropout) {
  if (cfg.sizes.size() < 2) throw ConfigError("mlp needs at least input and output sizes");
  for (int s : cfg.sizes)
    if (s <= 0) throw ConfigError("mlp layer sizes must be positive");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  for (std::size_t l = 0; l + 1 < cfg.sizes.size(); ++l) {
    const int fan_in = cfg.sizes[l];
    const int fan_out = cfg.sizes[l + 1];
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    ParamBlock blk;
    blk.w.resize(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) blk.w(i, j) = u(rng);
    blk.b = VectorXd::Zero(fan_out);
    layers_.push_back(std::move(blk));
  }
}

MatrixXd Mlp::apply_head(const MatrixXd& z) const {
  switch (head_) {
    case OutputHead::Linear:
      return z;
    case OutputHead::Sigmoid: {
      MatrixXd p = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      return p.cwiseMax(kProbEps).cwiseMin(1.0 - kProbEps);
    }
    case OutputHead::Softmax: {
      MatrixXd p(z.rows(), z.cols());
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        Eigen::RowVectorXd e = (z.row(i).array() - m).exp();
        p.row(i) = e / e.sum();
      }
      return p;
    }
  }
  throw UsageError("unknown output head");
}

MatrixXd Mlp::run(const MatrixXd& x, bool train, Rng* rng, Cache* cache) const {
  if (layers_.empty()) throw UsageError("forward on default-constructed mlp");
  if (x.cols() != input_dim())
    throw ShapeError("input has " + std::to_string(x.cols()) + " features, expected " +
                     std::to_string(input_dim()));
  MatrixXd h = x;
  const int last = layer_count() - 1;
  for (int l = 0; l <= last; ++l) {
    if (cache) cache->inputs.push_back(h);
    MatrixXd z = h * layers_[l].w.transpose();
    z.rowwise() += layers_[l].b.transpose();
    if (l == last) {
      MatrixXd out = apply_head(z);
      if (cache) {
        cache->head_out = out;
        cache->valid = true;
      }
      return out;
    }
    if (cache) cache->pre.push_back(z);
    h = z.unaryExpr([](double v) { return elu(v); });
    if (train && dropout_ > 0.0) {
      const double keep = 1.0 - dropout_;
      std::bernoulli_distribution bern(keep);
      MatrixXd mask(h.rows(), h.cols());
      for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (Eigen::Index j = 0; j < h.cols(); ++j) mask(i, j) = bern(*rng) ? 1.0 / keep : 0.0;
      h = h.cwiseProduct(mask);
      if (cache) cache->masks.push_back(std::move(mask));
    }
  }
  return h;  // unreachable
}

MatrixXd Mlp::forward(const MatrixXd& x, Rng& rng) {
  cache_ = Cache{};
  return run(x, /*train=*/true, &rng, &cache_);
}

MatrixXd Mlp::forward_eval(const MatrixXd& x) const {
  return run(x, /*train=*/false, nullptr, nullptr);
}

ParamGrads Mlp::zero_grads() const {
  ParamGrads g;
  g.reserve(layers_.size());
  for (const auto& l : layers_)
    g.push_back({MatrixXd::Zero(l.w.rows(), l.w.cols()), VectorXd::Zero(l.b.size())});
  return g;
}

BackwardResult Mlp::backward(const MatrixXd& output_grad) {
  if (!cache_.valid) throw UsageError("backward without a cached train-mode forward");
  if (output_grad.rows() != cache_.head_out.rows() || output_grad.cols() != cache_.head_out.cols())
    throw ShapeError("output gradient shape does not match the last forward output");

  MatrixXd dz;
  switch (head_) {
    case OutputHead::Linear:
      dz = output_grad;
      break;
    case OutputHead::Sigmoid: {
      const MatrixXd& p = cache_.head_out;
      dz = output_grad.cwiseProduct(p.cwiseProduct((1.0 - p.array()).matrix()));
      break;
    }
    case OutputHead::Softmax: {
      const MatrixXd& p = cache_.head_out;
      dz.resize(p.rows(), p.cols());
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double dot = p.row(i).dot(output_grad.row(i));
        dz.row(i) = p.row(i).cwiseProduct(output_grad.row(i)).array() - p.row(i).array() * dot;
      }
      break;
    }
  }

  BackwardResult res;
  res.grads.resize(layers_.size());
  MatrixXd dh;
  for (int l = layer_count() - 1; l >= 0; --l) {
    res.grads[l].w = dz.transpose() * cache_.inputs[l];
    res.grads[l].b = dz.colwise().sum().transpose();
    dh = dz * layers_[l].w;
    if (l > 0) {
      if (!cache_.masks.empty()) dh = dh.cwiseProduct(cache_.masks[l - 1]);
      dz = dh.cwiseProduct(cache_.pre[l - 1].unaryExpr([](double v) { return elu_grad(v); }));
    }
  }
  res.input_grad = dh;
  cache_ = Cache{};
  return res;
}

std::ptrdiff_t Mlp::parameter_count() const {
  std::ptrdiff_t n = 0;
  for (const auto& l : layers_) n += l.w.size() + l.b.size();
  return n;
}

double Mlp::get_param(std::ptrdiff_t i) const {
  for (const auto& l : layers_) {
    if (i < l.w.size()) return l.w.data()[i];
    i -= l.w.size();
    if (i < l.b.size()) return l.b(i);
    i -= l.b.size();
  }
  throw UsageError("parameter index out of range");
}

void Mlp::set_param(std::ptrdiff_t i, double v) {
  for (auto& l : layers_) {
    if (i < l.w.size()) {
      l.w.data()[i] = v;
      return;
    }
    i -= l.w.size();
    if (i < l.b.size()) {
      l.b(i) = v;
      return;
    }
    i -= l.b.size();
  }
  throw UsageError("parameter index out of range");
}

std::string Mlp::to_json() const {
  nlohmann::json j;
  std::vector<int> sizes;
  sizes.push_back(input_dim());
  for (const auto& l : layers_) sizes.push_back(static_cast<int>(l.w.rows()));
  j["sizes"] = sizes;
  j["head"] = head_ == OutputHead::Linear    ? "linear"
              : head_ == OutputHead::Sigmoid ? "sigmoid"
                                             : "softmax";
  j["dropout"] = dropout_;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    std::vector<double> w;  // row-major
    w.reserve(static_cast<std::size_t>(l.w.size()));
    for (Eigen::Index r = 0; r < l.w.rows(); ++r)
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) w.push_back(l.w(r, c));
    std::vector<double> b(l.b.data(), l.b.data() + l.b.size());
    layers.push_back({{"w", w}, {"b", b}});
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

Mlp Mlp::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Mlp net;
  const auto sizes = j.at("sizes").get<std::vector<int>>();
  if (sizes.size() < 2) throw ParseError("mlp snapshot needs at least two sizes", 0, "sizes");
  const std::string head = j.at("head").get<std::string>();
  net.head_ = head == "linear"    ? OutputHead::Linear
              : head == "sigmoid" ? OutputHead::Sigmoid
              : head == "softmax" ? OutputHead::Softmax
                                  : throw ParseError("unknown head '" + head + "'", 0, "head");
  net.dropout_ = j.at("dropout").get<double>();
  const auto& layers = j.at("layers");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int rows = sizes[l + 1], cols = sizes[l];
    const auto w = layers.at(l).at("w").get<std::vector<double>>();
    const auto b = layers.at(l).at("b").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != rows * cols || static_cast<int>(b.size()) != rows)
      throw ParseError("mlp snapshot layer size mismatch", static_cast<long>(l), "layers");
    ParamBlock blk;
    blk.w.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) blk.w(r, c) = w[static_cast<std::size_t>(r) * cols + c];
    blk.b = Eigen::Map<const VectorXd>(b.data(), rows);
    net.layers_.push_back(std::move(blk));
  }
  return net;
}

AdamState::AdamState(const Mlp& net, const AdamConfig& cfg) : cfg_(cfg) {
  for (const auto& l : net.layers()) {
    m_.push_back({MatrixXd::Zero(l.w.rows(), l.w.cols()), VectorXd::Zero(l.b.size())});
    v_.push_back({MatrixXd::Zero(l.w.rows(), l.w.cols()), VectorXd::Zero(l.b.size())});
  }
}

void AdamState::step(Mlp& net, const ParamGrads& grads) {
  auto& layers = net.layers();
  if (grads.size() != layers.size() || m_.size() != layers.size())
    throw ShapeError("adam state/gradient shape mismatch");

  std::ptrdiff_t flat = 0;
  for (std::size_t l = 0; l < grads.size(); ++l) {
    for (const double* block : {grads[l].w.data(), grads[l].b.data()}) {
      const std::ptrdiff_t count =
          block == grads[l].w.data() ? grads[l].w.size() : grads[l].b.size();
      for (std::ptrdiff_t i = 0; i < count; ++i, ++flat)
        if (!std::isfinite(block[i])) throw NumericError("non-finite gradient", flat);
    }
  }

  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixXd gw = grads[l].w;
    if (cfg_.weight_decay != 0.0) gw += cfg_.weight_decay * layers[l].w;
    m_[l].w = cfg_.beta1 * m_[l].w + (1.0 - cfg_.beta1) * gw;
    v_[l].w = cfg_.beta2 * v_[l].w + (1.0 - cfg_.beta2) * gw.cwiseProduct(gw);
    layers[l].w -= cfg_.lr *
                   (m_[l].w / bc1).cwiseQuotient(((v_[l].w / bc2).cwiseSqrt().array() + cfg_.epsilon).matrix());

    const VectorXd& gb = grads[l].b;
    m_[l].b = cfg_.beta1 * m_[l].b + (1.0 - cfg_.beta1) * gb;
    v_[l].b = cfg_.beta2 * v_[l].b + (1.0 - cfg_.beta2) * gb.cwiseProduct(gb);
    layers[l].b -= cfg_.lr *
                   (m_[l].b / bc1).cwiseQuotient(((v_[l].b / bc2).cwiseSqrt().array() + cfg_.epsilon).matrix());
  }
}

}  // namespace fairpol
