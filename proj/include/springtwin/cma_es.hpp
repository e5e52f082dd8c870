#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace springtwin {

struct Bounds {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t size() const { return lower.size(); }
  std::vector<double> clamp(std::span<const double> x) const;
};

struct CmaOptions {
  std::size_t max_generations = 100;
  std::size_t max_evaluations = 0;  // 0: no evaluation cap
  std::size_t lambda = 0;           // 0: 4 + floor(3 ln n)
  double sigma0 = 0.3;
  std::uint64_t seed = 0;
  // fitness = f(clamp(x)) + penalty_weight * ||x - clamp(x)||^2
  double penalty_weight = 1.0;
  // Fitness assigned when the objective returns a non-finite value or throws.
  double failure_fitness = 1e10;
  // Stop once the best value is at or below this.
  double target_value = -1e300;
};

// (mu/mu_w, lambda)-CMA-ES state with the standard default strategy parameters.
struct CmaState {
  std::size_t n = 0;
  std::size_t lambda = 0;
  std::size_t mu = 0;
  Eigen::VectorXd weights;
  double mu_eff = 0.0;
  double c_sigma = 0.0, d_sigma = 0.0, c_c = 0.0, c_1 = 0.0, c_mu = 0.0;
  double chi_n = 0.0;  // E||N(0, I)||

  Eigen::VectorXd mean;
  double sigma = 0.0;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd basis;      // eigenvectors of cov
  Eigen::VectorXd axis_len;   // sqrt of eigenvalues
  Eigen::VectorXd path_sigma;
  Eigen::VectorXd path_c;
  std::size_t generation = 0;

  CmaState(std::span<const double> init, double sigma0, std::size_t lambda_override = 0);
};

struct CmaGeneration {
  std::size_t generation = 0;
  std::size_t evaluations = 0;
  double best_fitness = 0.0;     // best penalised fitness this generation
  double best_so_far = 0.0;      // best objective value seen so far
  double sigma = 0.0;            // after the update
  std::vector<std::size_t> selected;  // candidate indices of the mu parents, best first
};

struct CmaResult {
  std::vector<double> best_x;  // clamped into bounds
  double best_value = 0.0;     // objective at best_x
  std::size_t evaluations = 0;
  std::vector<CmaGeneration> history;
  CmaState state;
};

using Objective = std::function<double(std::span<const double>)>;

// Minimises `objective` over the box. Candidates of a generation are sampled
// sequentially from one seeded stream, then evaluated in parallel; the
// objective must be safe to call concurrently. Deterministic per seed.
CmaResult cma_es(const Objective& objective, std::span<const double> init, const Bounds& bounds,
                 const CmaOptions& options);

}  // namespace springtwin
