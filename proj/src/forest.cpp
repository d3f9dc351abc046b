#include "forestlab/forest.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "forestlab/csv.hpp"
#include "forestlab/parallel.hpp"

namespace forestlab {

void ForestConfig::validate() const {
    if (n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
    tree.validate();
}

Forest::Forest(ForestConfig config, std::vector<Tree> trees)
    : config_(std::move(config)), trees_(std::move(trees)) {
    if (trees_.size() != config_.n_trees) throw std::invalid_argument("Forest: tree count != n_trees");
    for (const auto& t : trees_) {
        if (t.p() != trees_.front().p()) throw std::invalid_argument("Forest: trees disagree on p");
        if (t.task() != config_.tree.task) throw std::invalid_argument("Forest: tree task mismatch");
    }
}

double Forest::combine(std::span<const double> outputs) const {
    if (task() == Task::kRegression) {
        double sum = 0.0;
        for (double v : outputs) sum += v;
        return sum / static_cast<double>(outputs.size());
    }
    std::size_t classes = 0;
    for (const auto& t : trees_) classes = std::max(classes, t.class_count());
    std::vector<std::size_t> votes(std::max<std::size_t>(classes, 1), 0);
    for (double v : outputs) {
        const auto label = static_cast<std::size_t>(v);
        if (label >= votes.size()) votes.resize(label + 1, 0);
        ++votes[label];
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < votes.size(); ++k) {
        if (votes[k] > votes[best]) best = k;
    }
    return static_cast<double>(best);
}

double Forest::predict(std::span<const double> x) const {
    std::vector<double> outputs;
    outputs.reserve(trees_.size());
    for (const auto& t : trees_) outputs.push_back(t.predict(x));
    return combine(outputs);
}

std::vector<double> Forest::predict(const Dataset& data) const {
    if (data.p() != p()) {
        throw std::invalid_argument("Forest::predict: dataset has " + std::to_string(data.p()) +
                                    " features, model expects " + std::to_string(p()));
    }
    std::vector<double> out(data.n());
    if (task() == Task::kRegression) {
        // Tree-major accumulation; the summation order per point is still tree order.
        std::vector<double> sums(data.n(), 0.0);
        for (const auto& t : trees_) {
            for (std::size_t i = 0; i < data.n(); ++i) sums[i] += t.predict_row(data, i);
        }
        for (std::size_t i = 0; i < data.n(); ++i) out[i] = sums[i] / static_cast<double>(trees_.size());
        return out;
    }
    std::vector<double> outputs(trees_.size());
    for (std::size_t i = 0; i < data.n(); ++i) {
        for (std::size_t k = 0; k < trees_.size(); ++k) outputs[k] = trees_[k].predict_row(data, i);
        out[i] = combine(outputs);
    }
    return out;
}

void Forest::serialize(std::ostream& out) const {
    out << "forest task=" << to_string(task()) << " trees=" << config_.n_trees
        << " mtry=" << format_double(config_.tree.mtry) << " max_leaf_nodes="
        << (config_.tree.max_leaf_nodes ? std::to_string(*config_.tree.max_leaf_nodes) : "none")
        << " min_samples_leaf=" << config_.tree.min_samples_leaf
        << " min_samples_split=" << config_.tree.min_samples_split << " seed=" << config_.master_seed << '\n';
    for (const auto& t : trees_) t.serialize(out);
}

std::string Forest::serialize() const {
    std::ostringstream out;
    serialize(out);
    return out.str();
}

namespace {

std::string field(std::istringstream& in, const std::string& key) {
    std::string token;
    if (!(in >> token) || token.rfind(key + "=", 0) != 0) {
        throw std::runtime_error("forest header: expected field '" + key + "'");
    }
    return token.substr(key.size() + 1);
}

}  // namespace

Forest Forest::deserialize(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("forest: empty model");
    std::istringstream header(line);
    std::string tag;
    header >> tag;
    if (tag != "forest") throw std::runtime_error("forest: bad header '" + line + "'");
    ForestConfig config;
    config.tree.task = task_from_string(field(header, "task"));
    config.n_trees = std::stoull(field(header, "trees"));
    config.tree.mtry = parse_double(field(header, "mtry"));
    const std::string leaves = field(header, "max_leaf_nodes");
    if (leaves != "none") config.tree.max_leaf_nodes = std::stoull(leaves);
    config.tree.min_samples_leaf = std::stoull(field(header, "min_samples_leaf"));
    config.tree.min_samples_split = std::stoull(field(header, "min_samples_split"));
    config.master_seed = std::stoull(field(header, "seed"));
    config.validate();
    std::vector<Tree> trees;
    trees.reserve(config.n_trees);
    for (std::size_t k = 0; k < config.n_trees; ++k) trees.push_back(Tree::deserialize(in));
    return Forest(config, std::move(trees));
}

Forest Forest::deserialize(const std::string& text) {
    std::istringstream in(text);
    return deserialize(in);
}

Forest fit_forest(const Dataset& data, const ForestConfig& config, std::size_t workers) {
    config.validate();
    const RngStream root(config.master_seed);
    std::vector<std::optional<Tree>> slots(config.n_trees);
    parallel_for(config.n_trees, workers, [&](std::size_t k) {
        const RngStream tree_stream = root.child(k);
        RngStream bag_rng = tree_stream.child(0);
        RngStream split_rng = tree_stream.child(1);
        const auto rows = bootstrap_sample(data, bag_rng);
        slots[k].emplace(fit_tree(data, rows, config.tree, split_rng));
    });
    std::vector<Tree> trees;
    trees.reserve(config.n_trees);
    for (auto& t : slots) trees.push_back(std::move(*t));
    return Forest(config, std::move(trees));
}

FirstDepthSummary average_first_depth(const Forest& forest, std::size_t feature) {
    if (feature >= forest.p()) throw std::out_of_range("average_first_depth: feature out of range");
    double depth_sum = 0.0;
    std::size_t used = 0;
    for (const auto& t : forest.trees()) {
        if (auto d = t.first_use_depth(feature)) {
            depth_sum += static_cast<double>(*d);
            ++used;
        }
    }
    FirstDepthSummary out;
    out.usage_fraction = static_cast<double>(used) / static_cast<double>(forest.trees().size());
    if (used > 0) out.mean_depth = depth_sum / static_cast<double>(used);
    return out;
}

void write_first_depth_csv(const std::string& path, const Forest& forest,
                           const std::vector<std::string>& feature_names) {
    if (feature_names.size() != forest.p()) throw std::invalid_argument("feature name count != p");
    CsvWriter writer(path, {"feature", "mean_first_depth", "usage_fraction"});
    for (std::size_t j = 0; j < forest.p(); ++j) {
        const auto s = average_first_depth(forest, j);
        writer.write_row({feature_names[j], s.mean_depth ? format_double(*s.mean_depth) : "nan",
                          format_double(s.usage_fraction)});
    }
    writer.close();
}

double pairwise_tree_correlation(const Forest& forest, const Dataset& data) {
    if (forest.task() != Task::kRegression) {
        throw std::invalid_argument("pairwise_tree_correlation: regression forests only");
    }
    const auto& trees = forest.trees();
    if (trees.size() < 2) throw std::invalid_argument("pairwise_tree_correlation: need at least 2 trees");
    if (data.n() < 2) throw std::invalid_argument("pairwise_tree_correlation: need at least 2 points");
    const std::size_t n = data.n();
    // Centred, unit-norm prediction vectors; a zero vector marks a constant tree.
    std::vector<std::vector<double>> unit(trees.size());
    for (std::size_t k = 0; k < trees.size(); ++k) {
        auto pred = trees[k].predict(data);
        double mean = 0.0;
        for (double v : pred) mean += v;
        mean /= static_cast<double>(n);
        double norm = 0.0;
        for (double& v : pred) {
            v -= mean;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : pred) v = norm > 0.0 ? v / norm : 0.0;
        unit[k] = std::move(pred);
    }
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < trees.size(); ++a) {
        for (std::size_t b = a + 1; b < trees.size(); ++b) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += unit[a][i] * unit[b][i];
            total += std::clamp(dot, -1.0, 1.0);
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

}  // namespace forestlab
