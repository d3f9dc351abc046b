#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forestlab/dataset.hpp"
#include "forestlab/tree.hpp"

namespace forestlab {

/// Bagged tree ensemble settings. mtry = 1 gives plain bagging, mtry < 1 a
/// random forest, and a bounded leaf count with mtry = 1 a trimmed (TRIM)
/// bagging ensemble.
struct ForestConfig {
    std::size_t n_trees = 100;
    TreeConfig tree;
    std::uint64_t master_seed = 0;

    void validate() const;
};

class Forest {
public:
    Forest(ForestConfig config, std::vector<Tree> trees);

    const ForestConfig& config() const { return config_; }
    const std::vector<Tree>& trees() const { return trees_; }
    Task task() const { return config_.tree.task; }
    std::size_t p() const { return trees_.front().p(); }

    /// Mean of tree outputs (regression) or plurality vote with ties going
    /// to the lowest label (classification).
    double predict(std::span<const double> x) const;
    std::vector<double> predict(const Dataset& data) const;

    void serialize(std::ostream& out) const;
    std::string serialize() const;
    static Forest deserialize(std::istream& in);
    static Forest deserialize(const std::string& text);

private:
    double combine(std::span<const double> tree_outputs) const;

    ForestConfig config_;
    std::vector<Tree> trees_;
};

/// Tree k uses the stream (master_seed, [k]): child 0 draws its bootstrap
/// sample, child 1 drives split-feature subsetting. Results therefore do not
/// depend on `workers`.
Forest fit_forest(const Dataset& data, const ForestConfig& config, std::size_t workers = 1);

struct FirstDepthSummary {
    std::optional<double> mean_depth;  // missing when no tree uses the feature
    double usage_fraction = 0.0;
};

FirstDepthSummary average_first_depth(const Forest& forest, std::size_t feature);

/// Columns: feature, mean_first_depth, usage_fraction.
void write_first_depth_csv(const std::string& path, const Forest& forest,
                           const std::vector<std::string>& feature_names);

/// Mean pairwise sample correlation of tree predictions on `data`. Trees
/// with constant predictions contribute 0.
double pairwise_tree_correlation(const Forest& forest, const Dataset& data);

}  // namespace forestlab
