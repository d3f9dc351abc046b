#include "forestlab/tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "forestlab/csv.hpp"

namespace forestlab {

void TreeConfig::validate() const {
    if (!(mtry > 0.0 && mtry <= 1.0)) {
        throw std::invalid_argument("mtry must lie in (0, 1], got " + format_double(mtry));
    }
    if (max_leaf_nodes && *max_leaf_nodes < 2) {
        throw std::invalid_argument("max_leaf_nodes must be >= 2 when bounded");
    }
    if (min_samples_leaf < 1) throw std::invalid_argument("min_samples_leaf must be >= 1");
    if (min_samples_split < 2) throw std::invalid_argument("min_samples_split must be >= 2");
}

std::size_t TreeConfig::features_per_split(std::size_t p) const {
    // The slack absorbs representation error such as 0.3 * 10 = 3.0000000000000004.
    const double raw = std::ceil(mtry * static_cast<double>(p) - 1e-9);
    const auto count = static_cast<std::size_t>(std::max(raw, 1.0));
    return std::min(count, p);
}

namespace {

double midpoint(double lo, double hi) {
    const double mid = lo + (hi - lo) / 2.0;
    // Adjacent doubles: the midpoint may round up to hi, which would send hi left.
    return mid < hi ? mid : lo;
}

std::size_t majority_label(const std::vector<double>& counts) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < counts.size(); ++k) {
        if (counts[k] > counts[best]) best = k;
    }
    return best;
}

/// Growth state shared by best_split and fit_tree. The bag is compressed to
/// unique rows ("slots") with integer weights; each feature keeps its slots
/// in sorted order, and every node owns the same [begin, end) range in all
/// per-feature arrays.
class Grower {
public:
    Grower(const Dataset& data, std::span<const std::size_t> rows, Task task,
           std::size_t min_samples_leaf)
        : task_(task), min_leaf_(static_cast<double>(min_samples_leaf)), p_(data.p()) {
        if (rows.empty()) throw std::invalid_argument("fit_tree: empty row sample");
        const std::size_t n = data.n();
        std::vector<std::int32_t> slot_of(n, -1);
        for (std::size_t r : rows) {
            if (r >= n) throw std::out_of_range("fit_tree: row index out of range");
            if (slot_of[r] < 0) {
                slot_of[r] = static_cast<std::int32_t>(slot_row_.size());
                slot_row_.push_back(r);
                weight_.push_back(0.0);
            }
            weight_[static_cast<std::size_t>(slot_of[r])] += 1.0;
        }
        m_ = slot_row_.size();
        y_.resize(m_);
        for (std::size_t s = 0; s < m_; ++s) y_[s] = data.response()[slot_row_[s]];
        if (task_ == Task::kClassification) {
            class_count_ = data.class_count();
            label_.resize(m_);
            for (std::size_t s = 0; s < m_; ++s) label_[s] = static_cast<std::uint32_t>(y_[s]);
        }

        order_.resize(p_ * m_);
        xs_.resize(p_ * m_);
        for (std::size_t j = 0; j < p_; ++j) {
            std::size_t k = j * m_;
            const auto col = data.column(j);
            for (std::uint32_t r : data.sorted_rows(j)) {
                const std::int32_t s = slot_of[r];
                if (s < 0) continue;
                order_[k] = static_cast<std::uint32_t>(s);
                xs_[k] = col[r];
                ++k;
            }
        }
        goes_left_.assign(m_, 0);
        scratch_order_.resize(m_);
        scratch_x_.resize(m_);
    }

    std::size_t slot_count() const { return m_; }
    std::size_t class_count() const { return class_count_; }

    struct Stats {
        double weight = 0.0;
        double sum = 0.0;  // weighted response sum (regression)
        std::vector<double> counts;
        bool pure = true;
    };

    Stats stats(std::size_t begin, std::size_t end) const {
        Stats st;
        if (task_ == Task::kClassification) st.counts.assign(class_count_, 0.0);
        // Slot order of feature 0 within the range; any feature would do.
        const std::uint32_t* ord = order_.data();
        const double first_y = y_[ord[begin]];
        for (std::size_t k = begin; k < end; ++k) {
            const std::uint32_t s = ord[k];
            st.weight += weight_[s];
            if (task_ == Task::kRegression) {
                st.sum += weight_[s] * y_[s];
            } else {
                st.counts[label_[s]] += weight_[s];
            }
            if (y_[s] != first_y) st.pure = false;
        }
        return st;
    }

    double node_value(const Stats& st) const {
        if (task_ == Task::kRegression) return st.sum / st.weight;
        return static_cast<double>(majority_label(st.counts));
    }

    /// Best split of the range over `features` (ascending). Pure nodes and
    /// ranges with no admissible threshold yield nothing.
    std::optional<SplitCandidate> find_split(std::size_t begin, std::size_t end, const Stats& st,
                                             std::span<const std::size_t> features) const {
        if (st.pure || end - begin < 2) return std::nullopt;
        std::optional<SplitCandidate> best;
        double best_gain = -std::numeric_limits<double>::infinity();
        for (std::size_t j : features) {
            if (task_ == Task::kRegression) {
                scan_regression(j, begin, end, st, best, best_gain);
            } else {
                scan_gini(j, begin, end, st, best, best_gain);
            }
        }
        return best;
    }

    /// Partitions every feature's range so the left child occupies
    /// [begin, begin + left_count). Returns left_count.
    std::size_t apply_split(std::size_t begin, std::size_t end, const SplitCandidate& split) {
        const std::size_t f = split.feature;
        std::size_t left_count = 0;
        for (std::size_t k = begin; k < end; ++k) {
            const bool left = xs_[f * m_ + k] <= split.threshold;
            goes_left_[order_[f * m_ + k]] = left ? 1 : 0;
            left_count += left ? 1 : 0;
        }
        for (std::size_t j = 0; j < p_; ++j) {
            std::uint32_t* ord = order_.data() + j * m_;
            double* xv = xs_.data() + j * m_;
            std::size_t l = begin;
            std::size_t r = 0;
            for (std::size_t k = begin; k < end; ++k) {
                if (goes_left_[ord[k]]) {
                    ord[l] = ord[k];
                    xv[l] = xv[k];
                    ++l;
                } else {
                    scratch_order_[r] = ord[k];
                    scratch_x_[r] = xv[k];
                    ++r;
                }
            }
            std::copy_n(scratch_order_.begin(), r, ord + l);
            std::copy_n(scratch_x_.begin(), r, xv + l);
        }
        return left_count;
    }

private:
    void scan_regression(std::size_t j, std::size_t begin, std::size_t end, const Stats& st,
                         std::optional<SplitCandidate>& best, double& best_gain) const {
        const std::uint32_t* ord = order_.data() + j * m_;
        const double* xv = xs_.data() + j * m_;
        const double parent_term = st.sum * st.sum / st.weight;
        double wl = 0.0;
        double sl = 0.0;
        for (std::size_t k = begin; k + 1 < end; ++k) {
            const std::uint32_t s = ord[k];
            wl += weight_[s];
            sl += weight_[s] * y_[s];
            if (!(xv[k] < xv[k + 1])) continue;
            const double wr = st.weight - wl;
            if (wl < min_leaf_ || wr < min_leaf_) continue;
            const double sr = st.sum - sl;
            const double gain = sl * sl / wl + sr * sr / wr - parent_term;
            if (gain > best_gain) {
                best_gain = gain;
                best = SplitCandidate{j, midpoint(xv[k], xv[k + 1]), gain};
            }
        }
    }

    void scan_gini(std::size_t j, std::size_t begin, std::size_t end, const Stats& st,
                   std::optional<SplitCandidate>& best, double& best_gain) const {
        const std::uint32_t* ord = order_.data() + j * m_;
        const double* xv = xs_.data() + j * m_;
        // Weighted Gini impurity is W - sum_k c_k^2 / W, so the decrease is
        // sum(cl^2)/wl + sum(cr^2)/wr - sum(c^2)/W.
        std::vector<double> left(class_count_, 0.0);
        std::vector<double> right = st.counts;
        double sq_left = 0.0;
        double sq_right = 0.0;
        for (double c : right) sq_right += c * c;
        const double parent_term = sq_right / st.weight;
        double wl = 0.0;
        for (std::size_t k = begin; k + 1 < end; ++k) {
            const std::uint32_t s = ord[k];
            const double w = weight_[s];
            const std::uint32_t c = label_[s];
            sq_left += 2.0 * w * left[c] + w * w;
            sq_right += -2.0 * w * right[c] + w * w;
            left[c] += w;
            right[c] -= w;
            wl += w;
            if (!(xv[k] < xv[k + 1])) continue;
            const double wr = st.weight - wl;
            if (wl < min_leaf_ || wr < min_leaf_) continue;
            const double gain = sq_left / wl + sq_right / wr - parent_term;
            if (gain > best_gain) {
                best_gain = gain;
                best = SplitCandidate{j, midpoint(xv[k], xv[k + 1]), gain};
            }
        }
    }

    Task task_;
    double min_leaf_;
    std::size_t p_;
    std::size_t m_ = 0;
    std::size_t class_count_ = 0;
    std::vector<std::size_t> slot_row_;
    std::vector<double> weight_;
    std::vector<double> y_;
    std::vector<std::uint32_t> label_;
    std::vector<std::uint32_t> order_;
    std::vector<double> xs_;
    std::vector<std::uint8_t> goes_left_;
    std::vector<std::uint32_t> scratch_order_;
    std::vector<double> scratch_x_;
};

std::vector<std::size_t> draw_features(std::size_t p, std::size_t k, RngStream& rng,
                                       std::vector<std::size_t>& pool) {
    std::vector<std::size_t> chosen;
    if (k >= p) {
        chosen.resize(p);
        std::iota(chosen.begin(), chosen.end(), std::size_t{0});
        return chosen;
    }
    pool.resize(p);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t pick = i + static_cast<std::size_t>(rng.below(p - i));
        std::swap(pool[i], pool[pick]);
    }
    chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

struct Frontier {
    std::size_t node_id;
    std::size_t begin;
    std::size_t end;
    SplitCandidate split;
    std::size_t sequence;
};

struct FrontierOrder {
    bool operator()(const Frontier& a, const Frontier& b) const {
        if (a.split.impurity_decrease != b.split.impurity_decrease) {
            return a.split.impurity_decrease < b.split.impurity_decrease;
        }
        return a.sequence > b.sequence;
    }
};

}  // namespace

std::optional<SplitCandidate> best_split(const Dataset& data, std::span<const std::size_t> rows,
                                         std::span<const std::size_t> candidate_features, Task task,
                                         std::size_t min_samples_leaf) {
    if (rows.size() < 2) throw std::invalid_argument("best_split: need at least 2 rows");
    if (candidate_features.empty()) throw std::invalid_argument("best_split: no candidate features");
    std::vector<std::size_t> features(candidate_features.begin(), candidate_features.end());
    for (std::size_t j : features) {
        if (j >= data.p()) throw std::out_of_range("best_split: feature index out of range");
    }
    std::sort(features.begin(), features.end());
    features.erase(std::unique(features.begin(), features.end()), features.end());
    Grower grower(data, rows, task, min_samples_leaf);
    const auto st = grower.stats(0, grower.slot_count());
    return grower.find_split(0, grower.slot_count(), st, features);
}

Tree fit_tree(const Dataset& data, std::span<const std::size_t> rows, const TreeConfig& config,
              RngStream& rng) {
    config.validate();
    Grower grower(data, rows, config.task, config.min_samples_leaf);
    const std::size_t p = data.p();
    const std::size_t k = config.features_per_split(p);
    std::vector<std::size_t> pool;
    std::vector<TreeNode> nodes;

    struct Range {
        std::size_t node_id;
        std::size_t begin;
        std::size_t end;
    };

    auto make_node = [&](std::size_t begin, std::size_t end, std::uint32_t depth) {
        const auto st = grower.stats(begin, end);
        TreeNode node;
        node.value = grower.node_value(st);
        node.weight = st.weight;
        node.depth = depth;
        node.class_counts = st.counts;
        nodes.push_back(std::move(node));
        return st;
    };
    auto evaluate = [&](const Range& r) -> std::optional<SplitCandidate> {
        const auto st = grower.stats(r.begin, r.end);
        if (st.pure || r.end - r.begin < 2) return std::nullopt;
        if (st.weight < static_cast<double>(config.min_samples_split)) return std::nullopt;
        const auto features = draw_features(p, k, rng, pool);
        return grower.find_split(r.begin, r.end, st, features);
    };
    // Turns a leaf into a split node and appends its two children.
    auto split_node = [&](const Range& r, const SplitCandidate& split) {
        const std::size_t left_count = grower.apply_split(r.begin, r.end, split);
        const std::uint32_t depth = nodes[r.node_id].depth + 1;
        const Range left{nodes.size(), r.begin, r.begin + left_count};
        make_node(left.begin, left.end, depth);
        const Range right{nodes.size(), r.begin + left_count, r.end};
        make_node(right.begin, right.end, depth);
        TreeNode& parent = nodes[r.node_id];
        parent.feature = static_cast<std::int32_t>(split.feature);
        parent.threshold = split.threshold;
        parent.left = static_cast<std::int32_t>(left.node_id);
        parent.right = static_cast<std::int32_t>(right.node_id);
        return std::pair{left, right};
    };

    make_node(0, grower.slot_count(), 0);
    const Range root{0, 0, grower.slot_count()};

    if (!config.max_leaf_nodes) {
        std::vector<Range> stack{root};
        while (!stack.empty()) {
            const Range r = stack.back();
            stack.pop_back();
            const auto split = evaluate(r);
            if (!split) continue;
            const auto [left, right] = split_node(r, *split);
            stack.push_back(right);
            stack.push_back(left);
        }
    } else {
        const std::size_t budget = *config.max_leaf_nodes;
        std::priority_queue<Frontier, std::vector<Frontier>, FrontierOrder> frontier;
        std::size_t sequence = 0;
        auto offer = [&](const Range& r) {
            const auto split = evaluate(r);
            if (split) frontier.push(Frontier{r.node_id, r.begin, r.end, *split, sequence});
            ++sequence;
        };
        offer(root);
        std::size_t leaves = 1;
        while (leaves < budget && !frontier.empty()) {
            const Frontier top = frontier.top();
            frontier.pop();
            const auto [left, right] = split_node(Range{top.node_id, top.begin, top.end}, top.split);
            ++leaves;
            offer(left);
            offer(right);
        }
    }
    return Tree(config.task, p, grower.class_count(), std::move(nodes), rng.master_seed(), rng.path());
}

// ---------------------------------------------------------------------------
// Tree

Tree::Tree(Task task, std::size_t p, std::size_t class_count, std::vector<TreeNode> nodes,
           std::uint64_t seed, std::vector<std::uint64_t> stream_path)
    : task_(task),
      p_(p),
      class_count_(class_count),
      nodes_(std::move(nodes)),
      seed_(seed),
      stream_path_(std::move(stream_path)) {
    if (nodes_.empty()) throw std::invalid_argument("Tree: no nodes");
    const auto count = static_cast<std::int32_t>(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& node = nodes_[i];
        if (node.is_leaf()) continue;
        if (node.feature < 0 || static_cast<std::size_t>(node.feature) >= p_) {
            throw std::invalid_argument("Tree: split feature out of range");
        }
        if (node.left <= static_cast<std::int32_t>(i) || node.right <= static_cast<std::int32_t>(i) ||
            node.left >= count || node.right >= count) {
            throw std::invalid_argument("Tree: child index must point forward and stay in range");
        }
    }
}

std::size_t Tree::leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

std::size_t Tree::max_depth() const {
    std::size_t depth = 0;
    for (const auto& n : nodes_) depth = std::max<std::size_t>(depth, n.depth);
    return depth;
}

std::size_t Tree::leaf_index(std::span<const double> x) const {
    if (x.size() != p_) {
        throw std::invalid_argument("Tree::predict: expected " + std::to_string(p_) + " features, got " +
                                    std::to_string(x.size()));
    }
    std::size_t id = 0;
    while (!nodes_[id].is_leaf()) {
        const auto& n = nodes_[id];
        id = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return id;
}

double Tree::predict(std::span<const double> x) const { return nodes_[leaf_index(x)].value; }

double Tree::predict_row(const Dataset& data, std::size_t row) const {
    std::size_t id = 0;
    while (!nodes_[id].is_leaf()) {
        const auto& n = nodes_[id];
        const double v = data.feature(row, static_cast<std::size_t>(n.feature));
        id = static_cast<std::size_t>(v <= n.threshold ? n.left : n.right);
    }
    return nodes_[id].value;
}

std::vector<double> Tree::predict(const Dataset& data) const {
    if (data.p() != p_) {
        throw std::invalid_argument("Tree::predict: dataset has " + std::to_string(data.p()) +
                                    " features, tree expects " + std::to_string(p_));
    }
    std::vector<double> out(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) out[i] = predict_row(data, i);
    return out;
}

std::optional<std::size_t> Tree::first_use_depth(std::size_t feature) const {
    std::optional<std::size_t> best;
    for (const auto& n : nodes_) {
        if (n.is_leaf() || static_cast<std::size_t>(n.feature) != feature) continue;
        if (!best || n.depth < *best) best = n.depth;
    }
    return best;
}

void Tree::serialize(std::ostream& out) const {
    out << "tree task=" << to_string(task_) << " p=" << p_ << " classes=" << class_count_
        << " nodes=" << nodes_.size() << " seed=" << seed_ << " path=";
    for (std::size_t i = 0; i < stream_path_.size(); ++i) out << (i ? "." : "") << stream_path_[i];
    if (stream_path_.empty()) out << "-";
    out << '\n';
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        out << i << ' ' << (n.is_leaf() ? "leaf" : "split") << ' ' << n.feature << ' '
            << format_double(n.threshold) << ' ' << format_double(n.value) << ' ' << n.left << ' ' << n.right
            << ' ' << format_double(n.weight);
        for (double c : n.class_counts) out << ' ' << format_double(c);
        out << '\n';
    }
}

std::string Tree::serialize() const {
    std::ostringstream out;
    serialize(out);
    return out.str();
}

namespace {

std::string header_field(std::istringstream& in, const std::string& key) {
    std::string token;
    if (!(in >> token) || token.rfind(key + "=", 0) != 0) {
        throw std::runtime_error("tree header: expected field '" + key + "'");
    }
    return token.substr(key.size() + 1);
}

}  // namespace

Tree Tree::deserialize(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("tree: missing header");
    std::istringstream header(line);
    std::string tag;
    header >> tag;
    if (tag != "tree") throw std::runtime_error("tree: bad header '" + line + "'");
    const Task task = task_from_string(header_field(header, "task"));
    const auto p = static_cast<std::size_t>(std::stoull(header_field(header, "p")));
    const auto classes = static_cast<std::size_t>(std::stoull(header_field(header, "classes")));
    const auto count = static_cast<std::size_t>(std::stoull(header_field(header, "nodes")));
    const auto seed = static_cast<std::uint64_t>(std::stoull(header_field(header, "seed")));
    const std::string path_text = header_field(header, "path");
    std::vector<std::uint64_t> path;
    if (path_text != "-") {
        std::istringstream ps(path_text);
        std::string part;
        while (std::getline(ps, part, '.')) path.push_back(std::stoull(part));
    }

    std::vector<TreeNode> nodes(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("tree: truncated node list");
        std::istringstream row(line);
        std::size_t id;
        std::string kind, threshold, value, weight;
        TreeNode& n = nodes[i];
        if (!(row >> id >> kind >> n.feature >> threshold >> value >> n.left >> n.right >> weight) || id != i) {
            throw std::runtime_error("tree: malformed node line '" + line + "'");
        }
        n.threshold = parse_double(threshold);
        n.value = parse_double(value);
        n.weight = parse_double(weight);
        if ((kind == "leaf") != (n.feature == TreeNode::kNone)) {
            throw std::runtime_error("tree: node kind disagrees with feature in '" + line + "'");
        }
        if (task == Task::kClassification) {
            n.class_counts.resize(classes);
            for (auto& c : n.class_counts) {
                std::string cell;
                if (!(row >> cell)) throw std::runtime_error("tree: missing class counts in '" + line + "'");
                c = parse_double(cell);
            }
        }
    }
    // Depth is not stored; recompute from the (forward-pointing) child links.
    for (std::size_t i = 0; i < count; ++i) {
        const auto& n = nodes[i];
        if (n.is_leaf()) continue;
        if (n.left < 0 || n.right < 0 || static_cast<std::size_t>(n.left) >= count ||
            static_cast<std::size_t>(n.right) >= count) {
            throw std::runtime_error("tree: child index out of range");
        }
        nodes[static_cast<std::size_t>(n.left)].depth = n.depth + 1;
        nodes[static_cast<std::size_t>(n.right)].depth = n.depth + 1;
    }
    return Tree(task, p, classes, std::move(nodes), seed, std::move(path));
}

Tree Tree::deserialize(const std::string& text) {
    std::istringstream in(text);
    return deserialize(in);
}

}  // namespace forestlab
