#include "fleetchurn/mnl.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "fleetchurn/error.hpp"
#include "fleetchurn/log.hpp"
#include "fleetchurn/manifest.hpp"

namespace fleetchurn {

namespace {

// Per-row class probabilities for stacked params; Kept utility is 0.
inline std::array<double, 3> row_probs(const Eigen::VectorXd& params, const Eigen::MatrixXd& X,
                                       Eigen::Index i) {
  const Eigen::Index k = X.cols();
  double u_d = 0.0, u_r = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    u_d += X(i, j) * params(j);
    u_r += X(i, j) * params(k + j);
  }
  const double mx = std::max({0.0, u_d, u_r});
  const double ed = std::exp(u_d - mx);
  const double er = std::exp(u_r - mx);
  const double ek = std::exp(-mx);
  const double denom = ed + er + ek;
  return {ed / denom, ek / denom, er / denom};  // class order: disposed, kept, replaced
}

}  // namespace

Eigen::VectorXd MnlFit::stacked() const {
  Eigen::VectorXd v(2 * coef.size());
  v.head(coef.size()) = coef.disposed;
  v.tail(coef.size()) = coef.replaced;
  return v;
}

double MnlFit::se_iid(int alt, int j) const {
  const int k = coef.size();
  return std::sqrt(cov_iid(alt * k + j, alt * k + j));
}

double MnlFit::se_cluster(int alt, int j) const {
  const int k = coef.size();
  return std::sqrt(cov_cluster(alt * k + j, alt * k + j));
}

LikelihoodEval log_likelihood_grad(const Eigen::VectorXd& params, const Eigen::MatrixXd& X,
                                   const std::vector<Outcome>& labels) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  if (params.size() != 2 * k) throw make_error("SchemaMismatch", "parameter length != 2 * columns");

  LikelihoodEval out;
  out.gradient = Eigen::VectorXd::Zero(2 * k);
  out.hessian = Eigen::MatrixXd::Zero(2 * k, 2 * k);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = row_probs(params, X, i);
    const double p_alt[2] = {p[0], p[2]};
    const Outcome y = labels[static_cast<std::size_t>(i)];
    const double p_obs = p[static_cast<std::size_t>(y)];
    if (!(p_obs > 0.0) || !std::isfinite(p_obs))
      throw make_error("NonFiniteUtility", "log likelihood underflow at row " + std::to_string(i));
    out.value += std::log(p_obs);

    const auto xi = X.row(i);
    for (int a = 0; a < kAlternatives; ++a) {
      const double resid = (y == kAltClass[a] ? 1.0 : 0.0) - p_alt[a];
      out.gradient.segment(a * k, k) += resid * xi.transpose();
    }
    // Hessian blocks: -p_a (delta_ab - p_b) x x'
    const Eigen::MatrixXd xxt = xi.transpose() * xi;
    for (int a = 0; a < kAlternatives; ++a)
      for (int b = 0; b < kAlternatives; ++b) {
        const double w = -p_alt[a] * ((a == b ? 1.0 : 0.0) - p_alt[b]);
        out.hessian.block(a * k, b * k, k, k) += w * xxt;
      }
  }
  if (!std::isfinite(out.value)) throw make_error("NonFiniteUtility", "non-finite log likelihood");
  return out;
}

namespace {

double log_likelihood_only(const Eigen::VectorXd& params, const Eigen::MatrixXd& X,
                           const std::vector<Outcome>& labels) {
  const Eigen::Index n = X.rows();
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = row_probs(params, X, i);
    ll += std::log(std::max(p[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])], 1e-300));
  }
  return ll;
}

// Two-loop L-BFGS recursion producing an ascent direction for the log
// likelihood; used when the Newton solve is unusable.
class LbfgsHistory {
 public:
  void push(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
    const double sy = s.dot(y);
    if (sy <= 1e-12) return;
    s_.push_back(s);
    y_.push_back(y);
    if (s_.size() > 10) {
      s_.pop_front();
      y_.pop_front();
    }
  }
  Eigen::VectorXd direction(const Eigen::VectorXd& grad) const {
    Eigen::VectorXd q = grad;
    std::vector<double> alpha(s_.size());
    for (int i = static_cast<int>(s_.size()) - 1; i >= 0; --i) {
      const double rho = 1.0 / s_[static_cast<std::size_t>(i)].dot(y_[static_cast<std::size_t>(i)]);
      alpha[static_cast<std::size_t>(i)] = rho * s_[static_cast<std::size_t>(i)].dot(q);
      q -= alpha[static_cast<std::size_t>(i)] * y_[static_cast<std::size_t>(i)];
    }
    if (!s_.empty()) {
      const auto& s = s_.back();
      const auto& y = y_.back();
      q *= s.dot(y) / y.dot(y);
    }
    for (std::size_t i = 0; i < s_.size(); ++i) {
      const double rho = 1.0 / s_[i].dot(y_[i]);
      const double beta = rho * y_[i].dot(q);
      q += (alpha[i] - beta) * s_[i];
    }
    return q;
  }

 private:
  std::deque<Eigen::VectorXd> s_, y_;
};

void report_near_null_space(const Eigen::MatrixXd& info, const std::vector<std::string>& names) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
  const Eigen::VectorXd evals = es.eigenvalues();
  const Eigen::VectorXd v = es.eigenvectors().col(0);  // smallest eigenvalue
  std::string cols;
  const int k = static_cast<int>(names.size());
  for (int j = 0; j < v.size(); ++j) {
    if (std::abs(v(j)) > 0.3) {
      if (!cols.empty()) cols += ", ";
      cols += (j < k ? "disposed:" : "replaced:") + names[static_cast<std::size_t>(j % k)];
    }
  }
  throw make_error("SingularHessian",
                   "observed information is singular (min eigenvalue " +
                       std::to_string(evals(0)) + "); near-null-space columns: " + cols);
}

}  // namespace

std::string design_matrix_hash(const DesignMatrix& dm) {
  std::string blob;
  for (std::size_t i = 0; i < dm.n_rows(); ++i) {
    blob += dm.household_id[i];
    blob += '|';
    blob += std::to_string(dm.wave[i]);
    blob += '|';
    blob += dm.vehicle_key[i];
    blob += '|';
    blob += std::to_string(static_cast<int>(dm.label[i]));
    blob += '\n';
  }
  return sha256_hex(blob);
}

MnlFit fit_mnl(const DesignMatrix& dm, const MnlConfig& config) {
  const Eigen::Index n = dm.X.rows();
  if (n == 0) throw make_error("EmptySegment", "cannot fit on zero rows");
  bool has_disposed = false, has_replaced = false;
  for (Outcome y : dm.label) {
    has_disposed |= y == Outcome::Disposed;
    has_replaced |= y == Outcome::Replaced;
  }
  if (!has_disposed || !has_replaced)
    throw make_error("MissingAlternative", "both non-reference outcomes must be present");

  Eigen::MatrixXd X;
  std::vector<std::string> names;
  if (config.include_intercept) {
    X.resize(n, dm.X.cols() + 1);
    X.col(0).setOnes();
    X.rightCols(dm.X.cols()) = dm.X;
    names.push_back("const");
  } else {
    X = dm.X;
  }
  names.insert(names.end(), dm.column_names.begin(), dm.column_names.end());
  const Eigen::Index k = X.cols();

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(2 * k);
  MnlFit fit;
  LbfgsHistory history;
  LikelihoodEval eval = log_likelihood_grad(theta, X, dm.label);
  fit.ll_trace.push_back(eval.value);

  for (int iter = 0; iter < config.max_iter; ++iter) {
    if (eval.gradient.lpNorm<Eigen::Infinity>() <= config.tol) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd direction;
    bool newton_ok = false;
    {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(-eval.hessian);
      if (ldlt.info() == Eigen::Success) {
        direction = ldlt.solve(eval.gradient);
        newton_ok = direction.allFinite();
      }
    }
    if (!newton_ok) {
      direction = history.direction(eval.gradient);
      if (!direction.allFinite() || direction.dot(eval.gradient) <= 0.0) direction = eval.gradient;
    }

    double step = 1.0;
    Eigen::VectorXd theta_new;
    double ll_new = -std::numeric_limits<double>::infinity();
    bool improved = false;
    for (int h = 0; h < 60; ++h) {
      theta_new = theta + step * direction;
      ll_new = log_likelihood_only(theta_new, X, dm.label);
      if (std::isfinite(ll_new) && ll_new >= eval.value - 1e-12) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;  // flat to machine precision

    LikelihoodEval eval_new = log_likelihood_grad(theta_new, X, dm.label);
    history.push(theta_new - theta, -(eval_new.gradient - eval.gradient));
    theta = std::move(theta_new);
    eval = std::move(eval_new);
    fit.ll_trace.push_back(eval.value);
  }
  if (!fit.converged && eval.gradient.lpNorm<Eigen::Infinity>() <= config.tol) fit.converged = true;
  if (!fit.converged)
    log::warn("fit_mnl did not reach gradient tolerance after " + std::to_string(config.max_iter) +
              " iterations");

  fit.coef.names = names;
  fit.coef.disposed = theta.head(k);
  fit.coef.replaced = theta.tail(k);
  fit.log_likelihood = eval.value;
  fit.n_obs = static_cast<int>(n);
  fit.data_hash = design_matrix_hash(dm);

  for (Eigen::Index j = 0; j < theta.size(); ++j)
    if (std::abs(theta(j)) > 20.0) {
      fit.separation_warning = true;
      log::warn("possible separation: |coefficient| > 20 for " +
                names[static_cast<std::size_t>(j % k)]);
      break;
    }

  // Covariances. iid: inverse observed information. Cluster: sandwich over
  // household score sums with a G/(G-1) small-sample factor.
  Eigen::MatrixXd info = -eval.hessian;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success) report_near_null_space(info, names);
  Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(2 * k, 2 * k);
  fit.cov_iid = ldlt.solve(identity);
  if (!fit.cov_iid.allFinite() || (info * fit.cov_iid - identity).cwiseAbs().maxCoeff() > 1e-4)
    report_near_null_space(info, names);

  int n_clusters = 0;
  for (int c : dm.cluster) n_clusters = std::max(n_clusters, c + 1);
  fit.n_clusters = n_clusters;
  Eigen::MatrixXd cluster_scores = Eigen::MatrixXd::Zero(n_clusters, 2 * k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = row_probs(theta, X, i);
    const double p_alt[2] = {p[0], p[2]};
    const Outcome y = dm.label[static_cast<std::size_t>(i)];
    const int g = dm.cluster[static_cast<std::size_t>(i)];
    for (int a = 0; a < kAlternatives; ++a) {
      const double resid = (y == kAltClass[a] ? 1.0 : 0.0) - p_alt[a];
      cluster_scores.row(g).segment(a * k, k) += resid * X.row(i);
    }
  }
  Eigen::MatrixXd meat = cluster_scores.transpose() * cluster_scores;
  const double factor = config.small_sample_correction && n_clusters > 1
                            ? static_cast<double>(n_clusters) / (n_clusters - 1.0)
                            : 1.0;
  fit.cov_cluster = factor * fit.cov_iid * meat * fit.cov_iid;
  return fit;
}

LrTestResult lr_test(const MnlFit& full, const MnlFit& restricted) {
  if (full.data_hash != restricted.data_hash)
    throw make_error("RowMismatch", "fits were produced on different rows");
  std::set<std::string> full_names(full.coef.names.begin(), full.coef.names.end());
  for (const auto& nm : restricted.coef.names)
    if (!full_names.count(nm))
      throw make_error("NotNested", "restricted term '" + nm + "' missing from full model");

  LrTestResult r;
  r.statistic = 2.0 * (full.log_likelihood - restricted.log_likelihood);
  if (r.statistic < 0.0 && r.statistic > -1e-8) r.statistic = 0.0;
  r.df = 2 * (full.coef.size() - restricted.coef.size());
  if (r.df == 0 || r.statistic <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  boost::math::chi_squared dist(r.df);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

Eigen::MatrixXd predict_mnl(const MnlFit& fit, const DesignMatrix& dm) {
  const bool has_const = !fit.coef.names.empty() && fit.coef.names.front() == "const";
  const int k_fit = fit.coef.size();
  const int offset = has_const ? 1 : 0;
  if (static_cast<int>(dm.column_names.size()) != k_fit - offset)
    throw make_error("SchemaMismatch", "design matrix has " + std::to_string(dm.column_names.size()) +
                                           " columns, fit expects " + std::to_string(k_fit - offset));
  for (int j = 0; j < k_fit - offset; ++j)
    if (dm.column_names[static_cast<std::size_t>(j)] != fit.coef.names[static_cast<std::size_t>(j + offset)])
      throw make_error("SchemaMismatch", "column mismatch at " + dm.column_names[static_cast<std::size_t>(j)]);

  const Eigen::Index n = dm.X.rows();
  Eigen::MatrixXd probs(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    double u_d = has_const ? fit.coef.disposed(0) : 0.0;
    double u_r = has_const ? fit.coef.replaced(0) : 0.0;
    for (int j = 0; j < k_fit - offset; ++j) {
      u_d += dm.X(i, j) * fit.coef.disposed(j + offset);
      u_r += dm.X(i, j) * fit.coef.replaced(j + offset);
    }
    const double mx = std::max({0.0, u_d, u_r});
    const double ed = std::exp(u_d - mx), er = std::exp(u_r - mx), ek = std::exp(-mx);
    const double denom = ed + er + ek;
    probs(i, 0) = ed / denom;
    probs(i, 1) = ek / denom;
    probs(i, 2) = er / denom;
  }
  return probs;
}

namespace {

// Smooth part of the lasso objective: mean negative log likelihood.
struct SmoothObjective {
  const Eigen::MatrixXd& X;
  const std::vector<Outcome>& labels;

  double value(const Eigen::VectorXd& theta) const {
    return -log_likelihood_only(theta, X, labels) / static_cast<double>(X.rows());
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& theta) const {
    const Eigen::Index n = X.rows();
    const Eigen::Index k = X.cols();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(2 * k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto p = row_probs(theta, X, i);
      const double p_alt[2] = {p[0], p[2]};
      const Outcome y = labels[static_cast<std::size_t>(i)];
      for (int a = 0; a < kAlternatives; ++a) {
        const double resid = (y == kAltClass[a] ? 1.0 : 0.0) - p_alt[a];
        g.segment(a * k, k) -= resid * X.row(i).transpose();
      }
    }
    return g / static_cast<double>(n);
  }
};

}  // namespace

LassoPath fit_lasso_path(const DesignMatrix& dm, std::vector<double> lambdas, int n_auto_lambdas) {
  const Eigen::Index n = dm.X.rows();
  const Eigen::Index kx = dm.X.cols();
  if (n == 0) throw make_error("EmptySegment", "cannot fit on zero rows");

  // Standardize features; intercept column prepended unpenalized.
  Eigen::VectorXd mean(kx), sd(kx);
  for (Eigen::Index j = 0; j < kx; ++j) {
    mean(j) = dm.X.col(j).mean();
    const double var = (dm.X.col(j).array() - mean(j)).square().sum() / static_cast<double>(n);
    sd(j) = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  Eigen::MatrixXd X(n, kx + 1);
  X.col(0).setOnes();
  for (Eigen::Index j = 0; j < kx; ++j) X.col(j + 1) = (dm.X.col(j).array() - mean(j)) / sd(j);
  const Eigen::Index k = kx + 1;

  SmoothObjective smooth{X, dm.label};

  // Penalized-coefficient mask (intercepts of both alternatives are free).
  auto is_penalized = [&](Eigen::Index j) { return j % k != 0; };

  // Intercept-only solution for lambda_max.
  Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(2 * k);
  {
    std::array<double, 3> counts{0, 0, 0};
    for (Outcome y : dm.label) counts[static_cast<std::size_t>(y)] += 1.0;
    for (auto& c : counts) c = std::max(c, 0.5);
    theta0(0) = std::log(counts[0] / counts[1]);
    theta0(k) = std::log(counts[2] / counts[1]);
  }
  if (lambdas.empty()) {
    const Eigen::VectorXd g0 = smooth.grad(theta0);
    double lambda_max = 0.0;
    for (Eigen::Index j = 0; j < g0.size(); ++j)
      if (is_penalized(j)) lambda_max = std::max(lambda_max, std::abs(g0(j)));
    lambda_max = std::max(lambda_max, 1e-8);
    for (int i = 0; i < n_auto_lambdas; ++i)
      lambdas.push_back(lambda_max * std::pow(1e-3, static_cast<double>(i) /
                                                        std::max(1, n_auto_lambdas - 1)));
  }

  LassoPath path;
  Eigen::VectorXd theta = theta0;
  for (double lambda : lambdas) {
    auto prox = [&](const Eigen::VectorXd& v, double t) {
      Eigen::VectorXd out = v;
      for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (!is_penalized(j)) continue;
        const double thr = t * lambda;
        out(j) = v(j) > thr ? v(j) - thr : (v(j) < -thr ? v(j) + thr : 0.0);
      }
      return out;
    };

    // FISTA with backtracking.
    double lips = 1.0;
    Eigen::VectorXd y = theta;
    Eigen::VectorXd theta_prev = theta;
    double t_mom = 1.0;
    bool converged = false;
    double prev_obj = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 5000; ++iter) {
      const double fy = smooth.value(y);
      const Eigen::VectorXd gy = smooth.grad(y);
      Eigen::VectorXd theta_new;
      for (;;) {
        theta_new = prox(y - gy / lips, 1.0 / lips);
        const Eigen::VectorXd d = theta_new - y;
        const double quad = fy + gy.dot(d) + 0.5 * lips * d.squaredNorm();
        if (smooth.value(theta_new) <= quad + 1e-12) break;
        lips *= 2.0;
        if (lips > 1e12) break;
      }
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom));
      y = theta_new + ((t_mom - 1.0) / t_new) * (theta_new - theta_prev);
      theta_prev = theta_new;
      t_mom = t_new;
      theta = theta_new;

      double obj = smooth.value(theta);
      for (Eigen::Index j = 0; j < theta.size(); ++j)
        if (is_penalized(j)) obj += lambda * std::abs(theta(j));
      if (std::abs(prev_obj - obj) <= 1e-10 * std::max(1.0, std::abs(obj))) {
        converged = true;
        break;
      }
      prev_obj = obj;
    }
    if (!converged) log::warn("lasso path did not fully converge at lambda=" + std::to_string(lambda));

    LassoStep step;
    step.lambda = lambda;
    step.converged = converged;
    step.coef.names.push_back("const");
    step.coef.names.insert(step.coef.names.end(), dm.column_names.begin(), dm.column_names.end());
    step.coef.disposed.resize(k);
    step.coef.replaced.resize(k);
    // Back-transform to the original scale.
    for (int a = 0; a < 2; ++a) {
      Eigen::VectorXd& dst = a == 0 ? step.coef.disposed : step.coef.replaced;
      double intercept = theta(a * k);
      for (Eigen::Index j = 0; j < kx; ++j) {
        const double b = theta(a * k + j + 1) / sd(j);
        dst(j + 1) = b;
        intercept -= b * mean(j);
      }
      dst(0) = intercept;
    }
    for (Eigen::Index j = 0; j < kx; ++j) {
      const double mag = std::max(std::abs(theta(j + 1)), std::abs(theta(k + j + 1)));
      if (mag > 1e-8) step.active.push_back(dm.column_names[static_cast<std::size_t>(j)]);
    }
    path.steps.push_back(std::move(step));
  }
  return path;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

}  // namespace fleetchurn
