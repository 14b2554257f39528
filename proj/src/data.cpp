#include "fairpol/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace fairpol {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

void Dataset::validate() const {
  const int rows = n();
  if (x.rows() != rows || s.size() != rows || a.size() != rows)
    throw ShapeError("dataset columns have unequal lengths");
  if (group_count < 1) throw ConfigError("group_count must be >= 1");
  for (int i = 0; i < rows; ++i) {
    if (a(i) != 0 && a(i) != 1)
      throw ConfigError("action must be binary (row " + std::to_string(i) + ")");
    if (s(i) < 0 || s(i) >= group_count)
      throw ConfigError("sensitive attribute out of range (row " + std::to_string(i) + ")");
    if (!std::isfinite(y(i))) throw NumericError("non-finite outcome", i);
  }
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x.data()[i])) throw NumericError("non-finite covariate", i);
  if (!feature_names.empty() && static_cast<int>(feature_names.size()) != p())
    throw ShapeError("feature name count does not match covariate columns");
}

Dataset Dataset::rows(const std::vector<int>& idx) const {
  Dataset out;
  out.group_count = group_count;
  out.feature_names = feature_names;
  out.x.resize(static_cast<int>(idx.size()), x.cols());
  out.s.resize(static_cast<int>(idx.size()));
  out.a.resize(static_cast<int>(idx.size()));
  out.y.resize(static_cast<int>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.x.row(static_cast<int>(i)) = x.row(idx[i]);
    out.s(static_cast<int>(i)) = s(idx[i]);
    out.a(static_cast<int>(i)) = a(idx[i]);
    out.y(static_cast<int>(i)) = y(idx[i]);
  }
  return out;
}

MatrixXd append_onehot(const MatrixXd& x, const VectorXi& s, int group_count) {
  if (x.rows() != s.size()) throw ShapeError("x/s row mismatch in one-hot encoding");
  MatrixXd out = MatrixXd::Zero(x.rows(), x.cols() + group_count);
  out.leftCols(x.cols()) = x;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) < 0 || s(i) >= group_count) throw ShapeError("group index out of range");
    out(i, x.cols() + s(i)) = 1.0;
  }
  return out;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

double SimOracle::mu0(double, double, int) const { return 0.0; }

double SimOracle::mu1(double x_u, double x_s, int s) const {
  double v = 0.0;
  if (x_u < 0.5) v += std::sin(4.0 * x_s - 2.0);
  if (x_u > 0.5) v += 0.6 * s - 0.3;
  return v;
}

double SimOracle::propensity(double x_u, double x_s, int s) const {
  return sigmoid(std::sin(2.0 * x_u) + std::sin(2.0 * x_s) + std::sin(2.0 * s));
}

double SimOracle::ite(double x_u, double x_s, int s) const {
  return mu1(x_u, x_s, s) - mu0(x_u, x_s, s);
}

std::pair<Dataset, SimOracle> simulate(const SimConfig& cfg) {
  if (cfg.n <= 0) throw ConfigError("sample count must be positive");
  if (cfg.p_s <= 0.0 || cfg.p_s >= 1.0) throw ConfigError("p_s must be in (0,1)");
  if (cfg.noise_sd < 0.0) throw ConfigError("noise_sd must be nonnegative");

  Rng rng = make_rng(cfg.seed);
  std::bernoulli_distribution draw_s(cfg.p_s);
  std::uniform_real_distribution<double> draw_xu(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sd > 0.0 ? cfg.noise_sd : 1.0);

  SimOracle oracle;
  Dataset ds;
  ds.group_count = 2;
  ds.feature_names = {"x_u", "x_s"};
  ds.x.resize(cfg.n, 2);
  ds.s.resize(cfg.n);
  ds.a.resize(cfg.n);
  ds.y.resize(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    const int s = draw_s(rng) ? 1 : 0;
    const double x_u = draw_xu(rng);
    const double x_s = (s - 1.0) + unit(rng);  // U[s-1, s]
    std::bernoulli_distribution draw_a(oracle.propensity(x_u, x_s, s));
    const int a = draw_a(rng) ? 1 : 0;
    const double eps = cfg.noise_sd > 0.0 ? noise(rng) : 0.0;
    ds.s(i) = s;
    ds.a(i) = a;
    ds.x(i, 0) = x_u;
    ds.x(i, 1) = x_s;
    ds.y(i) = (a == 1 ? oracle.mu1(x_u, x_s, s) : 0.0) + eps;
  }
  return {std::move(ds), oracle};
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

double parse_double(const std::string& field, long row, const std::string& col) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end)
    throw ParseError("non-numeric cell '" + field + "'", row, col);
  if (!std::isfinite(v)) throw ParseError("non-finite cell '" + field + "'", row, col);
  return v;
}

}  // namespace

CsvData load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file '" + path + "'", 0, "-");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file '" + path + "'", 0, "-");

  const std::vector<std::string> header = split_line(line);
  auto col_index = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("missing column '" + name + "'", 1, name);
    return static_cast<int>(it - header.begin());
  };

  std::vector<int> x_idx;
  for (const auto& name : schema.x_columns) x_idx.push_back(col_index(name));
  const int s_idx = col_index(schema.s_column);
  const int a_idx = col_index(schema.a_column);
  const int y_idx = col_index(schema.y_column);

  std::vector<std::vector<double>> x_rows;
  std::vector<std::string> s_raw;
  std::vector<int> a_vals;
  std::vector<double> y_vals;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_line(line);
    if (fields.size() != header.size())
      throw ParseError("row has " + std::to_string(fields.size()) + " fields, header has " +
                           std::to_string(header.size()),
                       row, "-");
    std::vector<double> xr;
    for (std::size_t j = 0; j < x_idx.size(); ++j)
      xr.push_back(parse_double(fields[x_idx[j]], row, schema.x_columns[j]));
    x_rows.push_back(std::move(xr));
    s_raw.push_back(fields[s_idx]);
    const double a = parse_double(fields[a_idx], row, schema.a_column);
    if (a != 0.0 && a != 1.0)
      throw ParseError("action must be 0 or 1, got '" + fields[a_idx] + "'", row, schema.a_column);
    a_vals.push_back(static_cast<int>(a));
    y_vals.push_back(parse_double(fields[y_idx], row, schema.y_column));
  }
  if (x_rows.empty()) throw ParseError("file has a header but no data rows", row, "-");

  // Sensitive codes: first-appearance order, unless the labels already are
  // the integers 0..k-1.
  std::vector<std::string> labels;
  std::vector<int> codes(s_raw.size());
  {
    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < s_raw.size(); ++i) {
      auto [it, inserted] = seen.emplace(s_raw[i], static_cast<int>(labels.size()));
      if (inserted) {
        labels.push_back(s_raw[i]);
        if (labels.size() > 16)
          throw ParseError("more than 16 distinct sensitive values", static_cast<long>(i) + 2,
                           schema.s_column);
      }
      codes[i] = it->second;
    }
    std::vector<long long> as_int(labels.size());
    bool integer_identity = true;
    std::vector<bool> present(labels.size(), false);
    for (std::size_t k = 0; k < labels.size(); ++k) {
      long long v = 0;
      auto [ptr, ec] = std::from_chars(labels[k].data(), labels[k].data() + labels[k].size(), v);
      if (ec != std::errc{} || ptr != labels[k].data() + labels[k].size() || v < 0 ||
          v >= static_cast<long long>(labels.size())) {
        integer_identity = false;
        break;
      }
      if (present[static_cast<std::size_t>(v)]) integer_identity = false;
      present[static_cast<std::size_t>(v)] = true;
      as_int[k] = v;
    }
    if (integer_identity) {
      std::vector<std::string> sorted_labels(labels.size());
      for (std::size_t k = 0; k < labels.size(); ++k)
        sorted_labels[static_cast<std::size_t>(as_int[k])] = labels[k];
      for (auto& c : codes) c = static_cast<int>(as_int[static_cast<std::size_t>(c)]);
      labels = std::move(sorted_labels);
    }
  }

  CsvData out;
  out.s_labels = labels;
  Dataset& ds = out.data;
  ds.group_count = static_cast<int>(labels.size());
  ds.feature_names = schema.x_columns;
  const int n = static_cast<int>(x_rows.size());
  const int p = static_cast<int>(schema.x_columns.size());
  ds.x.resize(n, p);
  ds.s.resize(n);
  ds.a.resize(n);
  ds.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) ds.x(i, j) = x_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    ds.s(i) = codes[static_cast<std::size_t>(i)];
    ds.a(i) = a_vals[static_cast<std::size_t>(i)];
    ds.y(i) = y_vals[static_cast<std::size_t>(i)];
  }
  ds.validate();
  return out;
}

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  char buf[64];
  for (int j = 0; j < ds.p(); ++j) {
    const std::string name =
        ds.feature_names.empty() ? "x" + std::to_string(j + 1) : ds.feature_names[static_cast<std::size_t>(j)];
    out << name << ',';
  }
  out << "s,a,y\n";
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.p(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.x(i, j));
      out << buf << ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", ds.y(i));
    out << ds.s(i) << ',' << ds.a(i) << ',' << buf << '\n';
  }
}

SplitResult split(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be nonnegative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  const int n = ds.n();
  std::array<int, 3> counts{};
  std::array<double, 3> rema{};
  int assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = n * fractions[static_cast<std::size_t>(k)];
    counts[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(exact));
    rema[static_cast<std::size_t>(k)] = exact - counts[static_cast<std::size_t>(k)];
    assigned += counts[static_cast<std::size_t>(k)];
  }
  for (int left = n - assigned; left > 0; --left) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (rema[static_cast<std::size_t>(k)] > rema[static_cast<std::size_t>(best)]) best = k;
    ++counts[static_cast<std::size_t>(best)];
    rema[static_cast<std::size_t>(best)] = -1.0;
  }
  if (counts[0] == 0) throw ConfigError("train split is empty");

  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  SplitResult out;
  auto take = [&](int offset, int count) {
    std::vector<int> part(idx.begin() + offset, idx.begin() + offset + count);
    return ds.rows(part);
  };
  out.train = take(0, counts[0]);
  out.val = take(counts[0], counts[1]);
  out.test = take(counts[0] + counts[1], counts[2]);
  return out;
}

MatrixXd FeatureStats::apply(const MatrixXd& x) const {
  if (x.cols() != mean.size()) throw ShapeError("feature stats/covariate column mismatch");
  MatrixXd out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (constant[static_cast<std::size_t>(j)]) continue;
    out.col(j) = (x.col(j).array() - mean(j)) / sd(j);
  }
  return out;
}

FeatureStats feature_stats(const Dataset& train) {
  if (train.n() == 0) throw ConfigError("cannot standardize with an empty train set");
  const int p = train.p();
  FeatureStats st;
  st.mean.resize(p);
  st.sd.resize(p);
  st.constant.assign(static_cast<std::size_t>(p), false);
  for (int j = 0; j < p; ++j) {
    st.mean(j) = train.x.col(j).mean();
    const double ss = (train.x.col(j).array() - st.mean(j)).square().sum();
    const double sd = train.n() > 1 ? std::sqrt(ss / (train.n() - 1)) : 0.0;
    st.sd(j) = sd;
    if (sd <= 1e-12) {
      st.constant[static_cast<std::size_t>(j)] = true;
      st.sd(j) = 1.0;
    }
  }
  return st;
}

StandardizeResult standardize(const Dataset& train, const std::vector<Dataset>& others) {
  StandardizeResult out;
  out.stats = feature_stats(train);
  out.train = train;
  out.train.x = out.stats.apply(train.x);
  for (const Dataset& d : others) {
    Dataset c = d;
    if (c.n() > 0) c.x = out.stats.apply(d.x);
    out.others.push_back(std::move(c));
  }
  return out;
}

}  // namespace fairpol
