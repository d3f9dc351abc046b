#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forestlab/dataset.hpp"
#include "forestlab/rng.hpp"

namespace forestlab {

struct TreeConfig {
    /// Fraction of features drawn (without replacement) at every split.
    double mtry = 1.0;
    /// Leaf budget; nullopt grows the tree to full depth.
    std::optional<std::size_t> max_leaf_nodes;
    std::size_t min_samples_leaf = 1;
    /// Nodes weighing less than this stay leaves.
    std::size_t min_samples_split = 2;
    Task task = Task::kRegression;

    void validate() const;

    /// ceil(mtry * p), clamped to [1, p].
    std::size_t features_per_split(std::size_t p) const;
};

struct TreeNode {
    static constexpr std::int32_t kNone = -1;

    std::int32_t feature = kNone;  // kNone marks a leaf
    double threshold = 0.0;        // x[feature] <= threshold goes left
    std::int32_t left = kNone;
    std::int32_t right = kNone;
    /// Leaf prediction: mean response (regression) or majority label.
    /// Internal nodes carry the same statistic for their sample.
    double value = 0.0;
    /// Training rows reaching the node, counted with bootstrap multiplicity.
    double weight = 0.0;
    std::uint32_t depth = 0;
    std::vector<double> class_counts;  // classification only

    bool is_leaf() const { return feature == kNone; }
};

struct SplitCandidate {
    std::size_t feature = 0;
    double threshold = 0.0;
    double impurity_decrease = 0.0;
};

/// Binary CART tree. Immutable once built.
class Tree {
public:
    Tree(Task task, std::size_t p, std::size_t class_count, std::vector<TreeNode> nodes,
         std::uint64_t seed = 0, std::vector<std::uint64_t> stream_path = {});

    Task task() const { return task_; }
    std::size_t p() const { return p_; }
    std::size_t class_count() const { return class_count_; }
    const std::vector<TreeNode>& nodes() const { return nodes_; }
    std::uint64_t seed() const { return seed_; }
    const std::vector<std::uint64_t>& stream_path() const { return stream_path_; }

    std::size_t leaf_count() const;
    std::size_t max_depth() const;

    /// Routes x to its leaf and returns the leaf value (mean or class label).
    double predict(std::span<const double> x) const;
    double predict_row(const Dataset& data, std::size_t row) const;
    std::vector<double> predict(const Dataset& data) const;
    std::size_t leaf_index(std::span<const double> x) const;

    /// Depth (root = 0) of the shallowest split on `feature`, if any.
    std::optional<std::size_t> first_use_depth(std::size_t feature) const;

    /// Line-oriented text form:
    ///   tree task=<task> p=<p> classes=<K> nodes=<N> seed=<s> path=<a.b.c>
    ///   <id> <split|leaf> <feature> <threshold> <value> <left> <right> <weight> [counts...]
    void serialize(std::ostream& out) const;
    std::string serialize() const;
    static Tree deserialize(std::istream& in);
    static Tree deserialize(const std::string& text);

private:
    Task task_;
    std::size_t p_;
    std::size_t class_count_;
    std::vector<TreeNode> nodes_;
    std::uint64_t seed_;
    std::vector<std::uint64_t> stream_path_;
};

/// Exhaustive search over the candidate features and all midpoints between
/// consecutive distinct values of `rows` (a multiset). Minimises weighted
/// child impurity (SSE or Gini). Ties go to the lowest feature index, then
/// the lowest threshold. Returns nothing for pure nodes or when no threshold
/// leaves both children non-empty.
std::optional<SplitCandidate> best_split(const Dataset& data, std::span<const std::size_t> rows,
                                         std::span<const std::size_t> candidate_features, Task task,
                                         std::size_t min_samples_leaf = 1);

/// Grows a CART tree on the row multiset. Unbounded trees grow depth-first
/// until no valid split remains; bounded trees grow best-first, always
/// expanding the frontier leaf with the largest impurity decrease (ties to
/// the earliest-created leaf). A fresh feature subset is drawn for each
/// node from `rng` unless mtry selects all features.
Tree fit_tree(const Dataset& data, std::span<const std::size_t> rows, const TreeConfig& config,
              RngStream& rng);

}  // namespace forestlab
