#include "springtwin/cma_es.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "springtwin/rng.hpp"

namespace springtwin {

std::vector<double> Bounds::clamp(std::span<const double> x) const {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lower[i], upper[i]);
  return out;
}

CmaState::CmaState(std::span<const double> init, double sigma0, std::size_t lambda_override)
    : n(init.size()) {
  if (n == 0) throw std::invalid_argument("cma_es: empty search space");
  if (!(sigma0 > 0.0)) throw std::invalid_argument("cma_es: sigma0 must be > 0");
  const double dn = static_cast<double>(n);
  lambda = lambda_override > 0 ? lambda_override
                               : 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(dn)));
  lambda = std::max<std::size_t>(lambda, 2);
  mu = lambda / 2;
  weights.resize(static_cast<Eigen::Index>(mu));
  for (std::size_t i = 0; i < mu; ++i) {
    weights[static_cast<Eigen::Index>(i)] =
        std::log(static_cast<double>(mu) + 0.5) - std::log(static_cast<double>(i + 1));
  }
  weights /= weights.sum();
  mu_eff = 1.0 / weights.squaredNorm();

  c_sigma = (mu_eff + 2.0) / (dn + mu_eff + 5.0);
  d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (dn + 1.0)) - 1.0) + c_sigma;
  c_c = (4.0 + mu_eff / dn) / (dn + 4.0 + 2.0 * mu_eff / dn);
  c_1 = 2.0 / ((dn + 1.3) * (dn + 1.3) + mu_eff);
  c_mu = std::min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((dn + 2.0) * (dn + 2.0) + mu_eff));
  chi_n = std::sqrt(dn) * (1.0 - 1.0 / (4.0 * dn) + 1.0 / (21.0 * dn * dn));

  mean = Eigen::Map<const Eigen::VectorXd>(init.data(), static_cast<Eigen::Index>(n));
  sigma = sigma0;
  cov = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  basis = cov;
  axis_len = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  path_sigma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  path_c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
}

namespace {

double penalised(const Objective& objective, const Bounds& bounds, const Eigen::VectorXd& x,
                 const CmaOptions& opt, double& raw, std::vector<double>& clamped) {
  clamped = bounds.clamp(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  double violation = 0.0;
  for (std::size_t i = 0; i < clamped.size(); ++i) {
    const double d = x[static_cast<Eigen::Index>(i)] - clamped[i];
    violation += d * d;
  }
  try {
    raw = objective(clamped);
  } catch (const std::exception&) {
    raw = std::numeric_limits<double>::quiet_NaN();
  }
  if (!std::isfinite(raw)) {
    raw = opt.failure_fitness;
    return opt.failure_fitness + opt.penalty_weight * violation;
  }
  return raw + opt.penalty_weight * violation;
}

}  // namespace

CmaResult cma_es(const Objective& objective, std::span<const double> init, const Bounds& bounds,
                 const CmaOptions& options) {
  if (bounds.size() != init.size()) throw std::invalid_argument("cma_es: bounds dimension mismatch");
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    if (!std::isfinite(bounds.lower[i]) || !std::isfinite(bounds.upper[i]) ||
        bounds.lower[i] > bounds.upper[i]) {
      throw std::invalid_argument("cma_es: bounds must be finite with lower <= upper");
    }
  }
  if (options.max_generations < 1) throw std::invalid_argument("cma_es: budget must be >= 1 generation");

  CmaResult result{{}, std::numeric_limits<double>::infinity(), 0, {}, CmaState(init, options.sigma0, options.lambda)};
  CmaState& st = result.state;
  const auto n = static_cast<Eigen::Index>(st.n);
  const auto lambda = static_cast<Eigen::Index>(st.lambda);
  Rng rng(options.seed);

  Eigen::MatrixXd z(n, lambda), y(n, lambda), x(n, lambda);
  std::vector<double> fitness(st.lambda), raw(st.lambda);
  std::vector<std::vector<double>> clamped(st.lambda);
  std::vector<std::size_t> order(st.lambda);

  for (std::size_t gen = 0; gen < options.max_generations; ++gen) {
    if (options.max_evaluations > 0 && result.evaluations + st.lambda > options.max_evaluations && gen > 0) break;

    for (Eigen::Index k = 0; k < lambda; ++k)
      for (Eigen::Index i = 0; i < n; ++i) z(i, k) = rng.normal();
    y = st.basis * st.axis_len.asDiagonal() * z;
    x = (st.sigma * y).colwise() + st.mean;

#pragma omp parallel for schedule(dynamic)
    for (Eigen::Index k = 0; k < lambda; ++k) {
      const auto idx = static_cast<std::size_t>(k);
      fitness[idx] = penalised(objective, bounds, x.col(k), options, raw[idx], clamped[idx]);
    }
    result.evaluations += st.lambda;

    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });
    for (std::size_t k = 0; k < st.lambda; ++k) {
      if (raw[k] < result.best_value) {
        result.best_value = raw[k];
        result.best_x = clamped[k];
      }
    }

    // Recombination.
    const Eigen::VectorXd old_mean = st.mean;
    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < st.mu; ++i) {
      y_w += st.weights[static_cast<Eigen::Index>(i)] * y.col(static_cast<Eigen::Index>(order[i]));
    }
    st.mean = old_mean + st.sigma * y_w;

    // Step-size path, using C^{-1/2} y_w = B z_w.
    Eigen::VectorXd z_w = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < st.mu; ++i) {
      z_w += st.weights[static_cast<Eigen::Index>(i)] * z.col(static_cast<Eigen::Index>(order[i]));
    }
    st.path_sigma = (1.0 - st.c_sigma) * st.path_sigma +
                    std::sqrt(st.c_sigma * (2.0 - st.c_sigma) * st.mu_eff) * (st.basis * z_w);
    const double ps_norm = st.path_sigma.norm();
    const double decay = 1.0 - std::pow(1.0 - st.c_sigma, 2.0 * static_cast<double>(st.generation + 1));
    const bool h_sigma =
        ps_norm / std::sqrt(decay) < (1.4 + 2.0 / (static_cast<double>(st.n) + 1.0)) * st.chi_n;
    st.path_c = (1.0 - st.c_c) * st.path_c +
                (h_sigma ? std::sqrt(st.c_c * (2.0 - st.c_c) * st.mu_eff) : 0.0) * y_w;

    // Covariance: rank-one + rank-mu.
    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < st.mu; ++i) {
      const auto col = y.col(static_cast<Eigen::Index>(order[i]));
      rank_mu += st.weights[static_cast<Eigen::Index>(i)] * col * col.transpose();
    }
    const double h_corr = h_sigma ? 0.0 : st.c_c * (2.0 - st.c_c);
    st.cov = (1.0 - st.c_1 - st.c_mu) * st.cov +
             st.c_1 * (st.path_c * st.path_c.transpose() + h_corr * st.cov) + st.c_mu * rank_mu;
    st.cov = 0.5 * (st.cov + st.cov.transpose());

    st.sigma *= std::exp((st.c_sigma / st.d_sigma) * (ps_norm / st.chi_n - 1.0));
    ++st.generation;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(st.cov);
    Eigen::VectorXd evals = eig.eigenvalues().cwiseMax(1e-300);
    st.basis = eig.eigenvectors();
    st.axis_len = evals.cwiseSqrt();

    CmaGeneration record;
    record.generation = gen;
    record.evaluations = result.evaluations;
    record.best_fitness = fitness[order.front()];
    record.best_so_far = result.best_value;
    record.sigma = st.sigma;
    record.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(st.mu));
    result.history.push_back(std::move(record));

    if (result.best_value <= options.target_value) break;
    if (!(st.sigma > 0.0) || !std::isfinite(st.sigma) || st.sigma * st.axis_len.maxCoeff() < 1e-300) break;
  }
  return result;
}

}  // namespace springtwin
