#include "forestlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "forestlab/parallel.hpp"

namespace forestlab {

double mse(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size()) throw std::invalid_argument("mse: length mismatch");
    if (predictions.empty()) throw std::invalid_argument("mse: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - targets[i];
        sum += d * d;
    }
    return sum / static_cast<double>(predictions.size());
}

double percent_decrease(double err_bagging, double err_other) {
    if (!(err_bagging > 0.0)) throw std::invalid_argument("percent_decrease: bagging error must be positive");
    return (err_bagging - err_other) / err_bagging * 100.0;
}

double eq1_ensemble_variance(double gamma, double sigma2, std::size_t B) {
    if (B == 0) throw std::invalid_argument("eq1_ensemble_variance: B must be positive");
    return gamma * sigma2 + (1.0 - gamma) / static_cast<double>(B) * sigma2;
}

DofEstimate effective_dof(const FitProcedure& procedure, const Dataset& design, double sigma2,
                          std::size_t replications, const RngStream& rng, std::size_t workers) {
    if (replications < 2) throw std::invalid_argument("effective_dof: need at least 2 replications");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("effective_dof: sigma2 must be positive");
    if (!design.truth()) throw std::invalid_argument("effective_dof: design needs known truth f(X)");
    const std::size_t n = design.n();
    const std::size_t R = replications;
    const auto& truth = *design.truth();
    const double sd = std::sqrt(sigma2);

    std::vector<std::vector<double>> ys(R);
    std::vector<std::vector<double>> preds(R);
    parallel_for(R, workers, [&](std::size_t r) {
        RngStream rep = rng.child(r);
        RngStream noise_rng = rep.child(0);
        RngStream fit_rng = rep.child(1);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = truth[i] + sd * noise_rng.normal();
        auto yhat = procedure(design.with_response(y), fit_rng);
        if (yhat.size() != n) throw std::runtime_error("effective_dof: procedure returned wrong length");
        ys[r] = std::move(y);
        preds[r] = std::move(yhat);
    });

    // Per point: centred cross-products, plus the pieces needed for
    // leave-one-replication-out covariances.
    const double Rd = static_cast<double>(R);
    double total_cov = 0.0;
    std::vector<double> loo(R, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double mean_y = 0.0;
        double mean_p = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            mean_y += ys[r][i];
            mean_p += preds[r][i];
        }
        mean_y /= Rd;
        mean_p /= Rd;
        double sxy = 0.0;
        for (std::size_t r = 0; r < R; ++r) sxy += (ys[r][i] - mean_y) * (preds[r][i] - mean_p);
        total_cov += sxy / (Rd - 1.0);
        if (R >= 3) {
            for (std::size_t r = 0; r < R; ++r) {
                const double dy = ys[r][i] - mean_y;
                const double dp = preds[r][i] - mean_p;
                // Centred sums without replicate r: sum dy = -dy, sum dp = -dp.
                loo[r] += (sxy - dy * dp - dy * dp / (Rd - 1.0)) / (Rd - 2.0);
            }
        }
    }
    DofEstimate out;
    out.replications = R;
    out.dof = total_cov / sigma2;
    if (R >= 3) {
        double mean_loo = 0.0;
        for (double& v : loo) {
            v /= sigma2;
            mean_loo += v;
        }
        mean_loo /= Rd;
        double ss = 0.0;
        for (double v : loo) ss += (v - mean_loo) * (v - mean_loo);
        out.standard_error = std::sqrt((Rd - 1.0) / Rd * ss);
    } else {
        out.standard_error = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

FitProcedure forest_procedure(ForestConfig config) {
    config.tree.task = Task::kRegression;
    config.validate();
    return [config](const Dataset& train, RngStream& rng) {
        ForestConfig c = config;
        c.master_seed = rng.key();
        return fit_forest(train, c).predict(train);
    };
}

DofMatch match_dof_on_grid(double target, std::span<const std::size_t> grid,
                           const std::function<DofEstimate(std::size_t)>& dof_at) {
    if (grid.empty()) throw std::invalid_argument("match_dof: empty maxnodes grid");
    if (!std::is_sorted(grid.begin(), grid.end())) throw std::invalid_argument("match_dof: grid must be ascending");
    DofMatch match;
    bool exceeded = false;
    for (std::size_t value : grid) {
        const DofEstimate est = dof_at(value);
        if (!match.audit.empty() && est.dof < match.audit.back().second.dof) match.monotone = false;
        match.audit.emplace_back(value, est);
        if (est.dof > target) {
            exceeded = true;
            break;
        }
    }
    const auto& first = match.audit.front();
    if (first.second.dof > target) {
        std::ostringstream msg;
        msg << "match_dof: target DoF " << target << " is below the DoF " << first.second.dof
            << " at the smallest grid value " << first.first;
        throw std::runtime_error(msg.str());
    }
    if (!exceeded && match.audit.back().second.dof < target) {
        std::ostringstream msg;
        msg << "match_dof: target DoF " << target << " exceeds the DoF " << match.audit.back().second.dof
            << " at the largest grid value " << match.audit.back().first;
        throw std::runtime_error(msg.str());
    }
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& [value, est] : match.audit) {
        const double gap = std::abs(est.dof - target);
        if (gap < best_gap) {
            best_gap = gap;
            match.maxnodes = value;
        }
    }
    return match;
}

DofMatch match_trim_dof(double target_dof, const TrimDofContext& context,
                        std::span<const std::size_t> maxnodes_grid, std::size_t replications) {
    const RngStream root(context.seed);
    return match_dof_on_grid(target_dof, maxnodes_grid, [&](std::size_t maxnodes) {
        ForestConfig config;
        config.n_trees = context.n_trees;
        config.tree.mtry = 1.0;
        config.tree.max_leaf_nodes = maxnodes;
        config.tree.min_samples_leaf = context.min_samples_leaf;
        config.tree.min_samples_split = context.min_samples_split;
        // Common random numbers across grid values: same noise draws.
        return effective_dof(forest_procedure(config), context.design, context.sigma2, replications, root,
                             context.workers);
    });
}

std::vector<std::size_t> default_maxnodes_grid() { return {2, 5, 10, 20, 35, 50, 75, 100, 140, 200}; }

Decomposition bias_variance_decompose(const std::vector<std::vector<double>>& trial_predictions,
                                      std::span<const double> truth, double sigma2) {
    const std::size_t T = trial_predictions.size();
    if (T < 2) throw std::invalid_argument("bias_variance_decompose: need at least 2 trials");
    const std::size_t n = truth.size();
    if (n == 0) throw std::invalid_argument("bias_variance_decompose: no test points");
    for (const auto& row : trial_predictions) {
        if (row.size() != n) throw std::invalid_argument("bias_variance_decompose: prediction length mismatch");
    }
    if (sigma2 < 0.0) throw std::invalid_argument("bias_variance_decompose: negative noise variance");
    const double Td = static_cast<double>(T);
    double bias_sum = 0.0;
    double var_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t t = 0; t < T; ++t) mean += trial_predictions[t][i];
        mean /= Td;
        double ss = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double d = trial_predictions[t][i] - mean;
            ss += d * d;
        }
        bias_sum += (truth[i] - mean) * (truth[i] - mean);
        var_sum += ss / (Td - 1.0);
    }
    Decomposition out;
    out.bias2 = bias_sum / static_cast<double>(n);
    out.variance = var_sum / static_cast<double>(n);
    out.noise = sigma2;
    out.total_mse = out.bias2 + out.variance + out.noise;
    return out;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> out(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) out[idx[k]] = avg;
        i = j + 1;
    }
    return out;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need equal lengths >= 2");
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace forestlab
