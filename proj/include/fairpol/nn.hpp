#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fairpol/common.hpp"

namespace fairpol {

enum class OutputHead { Linear, Sigmoid, Softmax };

struct MlpConfig {
  std::vector<int> sizes;            // input, hidden..., output
  OutputHead head = OutputHead::Linear;
  double dropout = 0.0;              // per hidden layer, in [0,1)
};

// One dense layer's parameters, or a gradient of the same shape.
struct ParamBlock {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
};

using ParamGrads = std::vector<ParamBlock>;

struct BackwardResult {
  ParamGrads grads;
  Eigen::MatrixXd input_grad;  // n x input_dim
};

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

// Sigmoid outputs are kept strictly inside (0,1).
inline constexpr double kProbEps = 1e-12;

// Feed-forward network: dense layers, ELU hidden activations, linear /
// sigmoid / softmax output head, inverted dropout on hidden activations.
// Rows are samples throughout. Train-mode forward caches activations and
// dropout masks for one reverse pass; eval-mode forward is a pure function
// of (parameters, input).
class Mlp {
 public:
  Mlp() = default;
  // Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases.
  Mlp(const MlpConfig& cfg, Rng& rng);

  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().w.cols()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().w.rows()); }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  OutputHead head() const { return head_; }
  double dropout() const { return dropout_; }
  const std::vector<ParamBlock>& layers() const { return layers_; }
  std::vector<ParamBlock>& layers() { return layers_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Rng& rng);       // train mode
  Eigen::MatrixXd forward_eval(const Eigen::MatrixXd& x) const;      // eval mode

  // Gradients of a scalar loss w.r.t. every weight, bias and the input,
  // given dLoss/dOutput from the preceding train-mode forward. Uses the
  // cached dropout masks; invalidates the cache.
  BackwardResult backward(const Eigen::MatrixXd& output_grad);

  ParamGrads zero_grads() const;

  // Flat parameter view (layer order, w column-major then b); used by the
  // optimizer bookkeeping and by finite-difference tests.
  std::ptrdiff_t parameter_count() const;
  double get_param(std::ptrdiff_t i) const;
  void set_param(std::ptrdiff_t i, double v);

  // Snapshot: layer-size header plus row-major weights. Not wire-stable
  // across versions.
  std::string to_json() const;
  static Mlp from_json(const std::string& text);

 private:
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input of each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each hidden layer
    std::vector<Eigen::MatrixXd> masks;   // scaled dropout masks (may be empty)
    Eigen::MatrixXd head_out;
    bool valid = false;
  };

  Eigen::MatrixXd run(const Eigen::MatrixXd& x, bool train, Rng* rng, Cache* cache) const;
  Eigen::MatrixXd apply_head(const Eigen::MatrixXd& z) const;

  std::vector<ParamBlock> layers_;
  OutputHead head_ = OutputHead::Linear;
  double dropout_ = 0.0;
  Cache cache_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // L2 term added to weight gradients before the step
};

// Adam with bias correction. Moments are zero-initialized; step_count
// increments by exactly one per step.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const Mlp& net, const AdamConfig& cfg);

  // Throws NumericError (with the flat parameter index) on a non-finite
  // gradient component.
  void step(Mlp& net, const ParamGrads& grads);

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<ParamBlock> m_, v_;
  std::int64_t step_count_ = 0;
};

}  // namespace fairpol
