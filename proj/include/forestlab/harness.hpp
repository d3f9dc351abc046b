#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forestlab/dgp.hpp"

namespace forestlab {

enum class Recipe {
    kTrimVsSfs,
    kHidden2DSingle,
    kHidden2DSweep,
    kHMarsSweep,
    kBvdSweep,
    kMtryNoiseFeatures,
    kFirstDepth,
    kSphereDemo,
    kBand2DDemo,
};

std::string to_string(Recipe recipe);
Recipe recipe_from_string(const std::string& text);

/// One campaign. JSON keys: recipe, dgp, snr, mtry, n, extra_noise_features,
/// n_trees, maxnodes (null = full depth), min_samples_leaf,
/// min_samples_split, trials, master_seed, output_dir,
/// train_fraction, dof_replications, maxnodes_grid, test_points,
/// grid_resolution. Omitted keys take the recipe's defaults; unknown keys
/// are rejected.
struct ExperimentConfig {
    Recipe recipe = Recipe::kTrimVsSfs;
    std::vector<DgpName> dgps;
    std::vector<double> snrs;
    std::vector<double> mtrys;
    std::vector<std::size_t> ns;
    std::vector<std::size_t> extra_noise_features{0};
    std::size_t n_trees = 100;
    std::optional<std::size_t> maxnodes = 200;
    std::size_t min_samples_leaf = 1;
    std::size_t min_samples_split = 2;
    std::size_t trials = 100;
    std::uint64_t master_seed = 1;
    std::string output_dir = "results";
    double train_fraction = 0.5;
    std::size_t dof_replications = 50;
    std::vector<std::size_t> maxnodes_grid;
    std::size_t test_points = 2000;
    std::size_t grid_resolution = 200;

    static ExperimentConfig defaults(Recipe recipe);
    static ExperimentConfig from_json(const nlohmann::json& json);
    static ExperimentConfig load(const std::string& path);

    nlohmann::json to_json() const;
    /// 16 hex digits identifying everything except output_dir.
    std::string hash() const;
    void validate() const;
};

/// 10 points evenly spaced in log10 between 0.042 and 6, endpoints included.
std::vector<double> default_snr_grid();

struct RunOptions {
    std::size_t workers = 1;
    /// Keep completed units of an existing results table and run the rest.
    bool resume = false;
    /// Stop after this many new units (used to exercise interruption).
    std::optional<std::size_t> max_units;
};

struct RunSummary {
    std::string directory;  // <output_dir>/<recipe>/<config_hash>
    std::size_t units_total = 0;
    std::size_t units_run = 0;
    std::size_t units_skipped = 0;
    bool complete = false;
};

/// Column layout of results.csv for the recipe (leading config_hash, unit).
std::vector<std::string> results_columns(Recipe recipe);

/// Checks header, column count, config hash and numeric fields. Throws on
/// the first violation.
void validate_results_csv(const std::string& path, Recipe recipe, const std::string& config_hash);

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// Recipe-specific entry points; each checks its preconditions and then
// delegates to run_experiment.
RunSummary run_trim_vs_sfs(const ExperimentConfig& config, const RunOptions& options = {});
RunSummary run_hidden2d_single(const ExperimentConfig& config, const RunOptions& options = {});
RunSummary run_snr_sweep(const ExperimentConfig& config, const RunOptions& options = {});
RunSummary run_bvd_sweep(const ExperimentConfig& config, const RunOptions& options = {});
RunSummary run_first_depth(const ExperimentConfig& config, const RunOptions& options = {});
RunSummary run_classification_demos(const ExperimentConfig& config, const RunOptions& options = {});

std::string build_version();

}  // namespace forestlab
