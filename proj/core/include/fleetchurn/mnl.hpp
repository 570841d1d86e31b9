#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fleetchurn/features.hpp"

namespace fleetchurn {

// Non-reference alternatives in fixed order; the Kept utility is pinned at 0.
inline constexpr int kAlternatives = 2;
inline constexpr Outcome kAltClass[kAlternatives] = {Outcome::Disposed, Outcome::Replaced};

struct CoefficientTable {
  std::vector<std::string> names;  // aligned to both vectors, "const" first when present
  Eigen::VectorXd disposed;
  Eigen::VectorXd replaced;

  int size() const { return static_cast<int>(names.size()); }
};

struct MnlConfig {
  bool include_intercept = true;
  int max_iter = 200;
  double tol = 1e-8;  // gradient infinity norm
  bool small_sample_correction = true;
};

struct MnlFit {
  CoefficientTable coef;
  double log_likelihood = 0.0;
  std::vector<double> ll_trace;
  bool converged = false;
  bool separation_warning = false;
  int n_obs = 0;
  int n_clusters = 0;
  Eigen::MatrixXd cov_iid;      // inverse observed information
  Eigen::MatrixXd cov_cluster;  // household-clustered sandwich
  std::string data_hash;        // identifies the rows the fit used
  std::string spec_json;        // FeatureSpec snapshot when fitted through the pipeline

  // Parameter order: [disposed block; replaced block].
  Eigen::VectorXd stacked() const;
  double se_iid(int alt, int j) const;
  double se_cluster(int alt, int j) const;
};

// Value, gradient, and Hessian of the multinomial-logit log likelihood at
// `params` (stacked layout). The matrix must not contain an intercept column;
// pass the design exactly as fitted.
struct LikelihoodEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};
LikelihoodEval log_likelihood_grad(const Eigen::VectorXd& params, const Eigen::MatrixXd& X,
                                   const std::vector<Outcome>& labels);

MnlFit fit_mnl(const DesignMatrix& dm, const MnlConfig& config = {});

struct LrTestResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};
LrTestResult lr_test(const MnlFit& full, const MnlFit& restricted);

Eigen::MatrixXd predict_mnl(const MnlFit& fit, const DesignMatrix& dm);  // n x 3 probabilities

struct LassoStep {
  double lambda = 0.0;
  CoefficientTable coef;  // on the original scale
  std::vector<std::string> active;
  bool converged = true;
};

struct LassoPath {
  std::vector<LassoStep> steps;
};

// L1-penalized fit via FISTA on internally standardized features; intercepts
// are unpenalized. An empty grid auto-generates a geometric path from
// lambda_max down to lambda_max/1000.
LassoPath fit_lasso_path(const DesignMatrix& dm, std::vector<double> lambdas = {},
                         int n_auto_lambdas = 20);

std::string significance_stars(double p);

std::string design_matrix_hash(const DesignMatrix& dm);

}  // namespace fleetchurn
