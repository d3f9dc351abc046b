#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "forestlab/dataset.hpp"
#include "forestlab/forest.hpp"
#include "forestlab/rng.hpp"

namespace forestlab {

double mse(std::span<const double> predictions, std::span<const double> targets);

/// (err_bagging - err_other) / err_bagging * 100; positive favours `other`.
double percent_decrease(double err_bagging, double err_other);

/// Variance of an average of B identically distributed variables with
/// variance sigma2 and pairwise correlation gamma.
double eq1_ensemble_variance(double gamma, double sigma2, std::size_t B);

struct DofEstimate {
    double dof = 0.0;
    std::size_t replications = 0;
    double standard_error = 0.0;  // jackknife over replications (nan if R < 3)
};

/// Fits on `train` and returns in-sample predictions, one per training row.
using FitProcedure = std::function<std::vector<double>(const Dataset& train, RngStream& rng)>;

/// Monte-Carlo effective degrees of freedom, (1/sigma2) sum_i Cov(yhat_i, y_i),
/// with the design X and truth f(X) held fixed and fresh N(0, sigma2) noise
/// per replication. Replication r uses rng.child(r).
DofEstimate effective_dof(const FitProcedure& procedure, const Dataset& design, double sigma2,
                          std::size_t replications, const RngStream& rng, std::size_t workers = 1);

/// Procedure that fits a regression forest (seeded from the replication
/// stream) and predicts on its own training rows.
FitProcedure forest_procedure(ForestConfig config);

struct DofMatch {
    std::size_t maxnodes = 0;
    /// Every grid value that was evaluated, in grid order.
    std::vector<std::pair<std::size_t, DofEstimate>> audit;
    /// Whether the audited DoF values were non-decreasing along the grid.
    bool monotone = true;
};

/// Walks an ascending grid, stopping once an estimate exceeds `target`, and
/// returns the value minimising |dof - target| (ties to the smaller value).
/// Throws if the target lies below the first estimate or above every one.
DofMatch match_dof_on_grid(double target, std::span<const std::size_t> grid,
                           const std::function<DofEstimate(std::size_t)>& dof_at);

struct TrimDofContext {
    Dataset design;  // fixed X with truth
    double sigma2 = 1.0;
    std::size_t n_trees = 100;
    std::size_t min_samples_leaf = 1;
    std::size_t min_samples_split = 2;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

/// Chooses maxnodes for a bagging ensemble (mtry = 1) whose effective DoF
/// best matches `target_dof`.
DofMatch match_trim_dof(double target_dof, const TrimDofContext& context,
                        std::span<const std::size_t> maxnodes_grid, std::size_t replications);

std::vector<std::size_t> default_maxnodes_grid();

struct Decomposition {
    double bias2 = 0.0;
    double variance = 0.0;
    double noise = 0.0;
    double total_mse = 0.0;
};

/// trial_predictions[t][i] is trial t's prediction at test point i. Per
/// point: bias^2 = (f - mean_t pred)^2, variance = unbiased variance over
/// trials; both are averaged over points. total_mse = bias2 + variance + noise.
Decomposition bias_variance_decompose(const std::vector<std::vector<double>>& trial_predictions,
                                      std::span<const double> truth, double sigma2);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace forestlab
