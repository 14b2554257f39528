#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fairpol/common.hpp"

namespace fairpol {

// Observational sample (x, s, a, y) columns plus the sensitive-group count.
// Immutable after construction by convention; safe to share across threads.
struct Dataset {
  Eigen::MatrixXd x;  // n x p covariates
  Eigen::VectorXi s;  // sensitive attribute in {0..group_count-1}
  Eigen::VectorXi a;  // binary action
  Eigen::VectorXd y;  // outcome
  int group_count = 1;
  std::vector<std::string> feature_names;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(x.cols()); }
  void validate() const;
  Dataset rows(const std::vector<int>& idx) const;
};

// Concatenates x with a one-hot encoding of s.
Eigen::MatrixXd append_onehot(const Eigen::MatrixXd& x, const Eigen::VectorXi& s, int group_count);

struct SimConfig {
  int n = 3000;
  double p_s = 0.5;       // Bernoulli parameter of S
  double noise_sd = 0.1;  // standard deviation of the outcome noise
  std::uint64_t seed = 0;
};

// Ground truth of the credit-lending simulator. x layout: column 0 = x_u,
// column 1 = x_s. mu0 is identically zero; at x_u == 0.5 both outcome
// indicators are zero.
struct SimOracle {
  double mu0(double x_u, double x_s, int s) const;
  double mu1(double x_u, double x_s, int s) const;
  double propensity(double x_u, double x_s, int s) const;
  double ite(double x_u, double x_s, int s) const;
};

std::pair<Dataset, SimOracle> simulate(const SimConfig& cfg);

struct CsvSchema {
  std::vector<std::string> x_columns;
  std::string s_column;
  std::string a_column;
  std::string y_column;
};

struct CsvData {
  Dataset data;
  std::vector<std::string> s_labels;  // s_labels[code] = original label
};

// Header row required, ',' separator, '.' decimal separator. Categorical s
// labels are coded in first-appearance order; integer labels that already
// form 0..k-1 are kept as-is.
CsvData load_csv(const std::string& path, const CsvSchema& schema);
void write_csv(const Dataset& ds, const std::string& path);

struct SplitResult {
  Dataset train, val, test;
};

// Disjoint row partition with sizes within +-1 of n*fraction (largest
// remainder rounding); deterministic per seed.
SplitResult split(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;               // sample standard deviation
  std::vector<bool> constant;       // flagged features pass through unscaled
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

FeatureStats feature_stats(const Dataset& train);

struct StandardizeResult {
  Dataset train;
  std::vector<Dataset> others;
  FeatureStats stats;
};

// Shifts/scales x columns of every set by the train statistics; s, a, y
// untouched.
StandardizeResult standardize(const Dataset& train, const std::vector<Dataset>& others);

}  // namespace fairpol
