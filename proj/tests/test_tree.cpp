#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "cart_oracle.hpp"
#include "forestlab/analysis.hpp"
#include "forestlab/tree.hpp"

using namespace forestlab;

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return rows;
}

std::vector<oracle::Rows> leaf_partition(const Tree& tree, const Dataset& d, const std::vector<std::size_t>& rows) {
    std::map<std::size_t, oracle::Rows> groups;
    for (auto r : rows) groups[tree.leaf_index(d.row(r))].push_back(r);
    std::vector<oracle::Rows> out;
    for (auto& [leaf, g] : groups) {
        std::sort(g.begin(), g.end());
        out.push_back(g);
    }
    std::sort(out.begin(), out.end());
    return out;
}

double training_sse(const Tree& tree, const Dataset& d, const std::vector<std::size_t>& rows) {
    double s = 0.0;
    for (auto r : rows) {
        const double e = tree.predict(d.row(r)) - d.response()[r];
        s += e * e;
    }
    return s;
}

Dataset random_instance(RngStream& rng, std::size_t n, std::size_t p, bool discrete) {
    std::vector<std::vector<double>> rows(n, std::vector<double>(p));
    std::vector<double> y(n);
    for (auto& row : rows) {
        for (auto& v : row) v = discrete ? static_cast<double>(rng.below(5)) : rng.uniform();
    }
    for (auto& v : y) v = rng.normal();
    return Dataset::from_rows(rows, y);
}

TreeConfig regression(std::optional<std::size_t> leaves = std::nullopt, double mtry = 1.0) {
    TreeConfig c;
    c.mtry = mtry;
    c.max_leaf_nodes = leaves;
    return c;
}

}  // namespace

TEST_CASE("TreeConfig validation and feature counts") {
    TreeConfig c;
    c.mtry = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.mtry = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.mtry = 0.33;
    c.max_leaf_nodes = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    TreeConfig f;
    f.mtry = 0.3;
    CHECK(f.features_per_split(10) == 3);  // 0.3 * 10 is 3.0000000000000004 in binary
    f.mtry = 0.33;
    CHECK(f.features_per_split(5) == 2);
    CHECK(f.features_per_split(7) == 3);
    f.mtry = 0.01;
    CHECK(f.features_per_split(12) == 1);
    f.mtry = 1.0;
    CHECK(f.features_per_split(12) == 12);
}

TEST_CASE("best_split finds the brute-force threshold") {
    const auto d = Dataset::from_rows({{1}, {2}, {3}, {4}}, {0, 0, 10, 10});
    const std::vector<std::size_t> features{0};
    const auto split = best_split(d, all_rows(4), features, Task::kRegression);
    REQUIRE(split);
    CHECK(split->feature == 0);
    CHECK(split->threshold == doctest::Approx(2.5));
    CHECK(split->impurity_decrease == doctest::Approx(100.0));
}

TEST_CASE("best_split on a pure node returns nothing") {
    const auto d = Dataset::from_rows({{1}, {2}, {3}}, {4, 4, 4});
    const std::vector<std::size_t> features{0};
    CHECK_FALSE(best_split(d, all_rows(3), features, Task::kRegression));
}

TEST_CASE("best_split ties go to the lowest feature index") {
    const auto d = Dataset::from_rows({{1, 1}, {2, 2}, {3, 3}, {4, 4}}, {0, 1, 5, 6});
    const std::vector<std::size_t> features{1, 0};
    const auto split = best_split(d, all_rows(4), features, Task::kRegression);
    REQUIRE(split);
    CHECK(split->feature == 0);
}

TEST_CASE("best_split with only duplicate rows has no admissible threshold") {
    const auto d = Dataset::from_rows({{1}, {1}, {1}}, {0, 1, 2});
    const std::vector<std::size_t> features{0};
    CHECK_FALSE(best_split(d, all_rows(3), features, Task::kRegression));
}

TEST_CASE("best_split uses Gini for classification") {
    const auto d = Dataset::from_rows({{1, 0.3}, {2, 0.1}, {3, 0.4}, {4, 0.2}}, {0, 0, 1, 1});
    const std::vector<std::size_t> features{0, 1};
    const auto split = best_split(d, all_rows(4), features, Task::kClassification);
    REQUIRE(split);
    CHECK(split->feature == 0);
    CHECK(split->threshold == doctest::Approx(2.5));
    // Weighted Gini 4 * 0.5 = 2 drops to 0.
    CHECK(split->impurity_decrease == doctest::Approx(2.0));
}

TEST_CASE("constant response gives a single leaf") {
    const auto d = Dataset::from_rows({{0.1, 3}, {0.5, 2}, {0.9, 1}}, {2.5, 2.5, 2.5});
    RngStream rng(3);
    const auto tree = fit_tree(d, all_rows(3), regression(), rng);
    CHECK(tree.nodes().size() == 1);
    CHECK(tree.predict(std::vector<double>{7.0, -1.0}) == 2.5);
    CHECK_FALSE(tree.first_use_depth(0));
    CHECK_FALSE(tree.first_use_depth(1));
}

TEST_CASE("narrow band is isolated by two splits on one path") {
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (int i = 0; i < 50; ++i) {
        const double x = i / 50.0 + 0.005;
        rows.push_back({x});
        y.push_back(x >= 0.6 && x <= 0.65 ? 1.0 : 0.0);
    }
    const auto d = Dataset::from_rows(rows, y);
    RngStream rng(1);
    const auto tree = fit_tree(d, all_rows(50), regression(), rng);
    CHECK(mse(tree.predict(d), d.response()) == 0.0);

    // Every band row goes right at some threshold below 0.6 and left at some
    // threshold above 0.65 on its way down.
    for (std::size_t i = 0; i < 50; ++i) {
        if (y[i] != 1.0) continue;
        bool lower = false, upper = false;
        std::size_t id = 0;
        while (!tree.nodes()[id].is_leaf()) {
            const auto& n = tree.nodes()[id];
            const bool left = rows[i][0] <= n.threshold;
            if (!left && n.threshold < 0.6) lower = true;
            if (left && n.threshold > 0.65) upper = true;
            id = static_cast<std::size_t>(left ? n.left : n.right);
        }
        CHECK(lower);
        CHECK(upper);
    }
    const auto trace = oracle::grow(d, all_rows(50));
    CHECK(trace.total_sse.back() == 0.0);
}

TEST_CASE("a budget of two leaves makes exactly the root best split") {
    RngStream data_rng(11);
    const auto d = random_instance(data_rng, 40, 3, false);
    RngStream rng(2);
    const auto tree = fit_tree(d, all_rows(40), regression(2), rng);
    REQUIRE(tree.nodes().size() == 3);
    const std::vector<std::size_t> features{0, 1, 2};
    const auto split = best_split(d, all_rows(40), features, Task::kRegression);
    REQUIRE(split);
    CHECK(tree.nodes()[0].feature == static_cast<int>(split->feature));
    CHECK(tree.nodes()[0].threshold == split->threshold);
}

TEST_CASE("best-first growth matches the exhaustive oracle at every expansion") {
    RngStream gen(20240611);
    int compared = 0;
    for (int instance = 0; instance < 60; ++instance) {
        const std::size_t n = 2 + gen.below(29);
        const std::size_t p = 1 + gen.below(3);
        const auto d = random_instance(gen, n, p, instance % 2 == 1);
        const auto rows = all_rows(n);
        const auto trace = oracle::grow(d, rows);
        for (std::size_t k = 1; k < trace.partitions.size(); ++k) {
            RngStream rng(instance);
            const auto tree = fit_tree(d, rows, regression(k + 1), rng);
            CHECK(leaf_partition(tree, d, rows) == trace.partitions[k]);
            CHECK(training_sse(tree, d, rows) == doctest::Approx(trace.total_sse[k]).epsilon(1e-9));
            ++compared;
        }
        RngStream rng(instance);
        const auto full = fit_tree(d, rows, regression(), rng);
        CHECK(leaf_partition(full, d, rows) == trace.partitions.back());
    }
    CHECK(compared > 100);
}

TEST_CASE("bootstrap multisets are handled as weighted rows") {
    RngStream gen(5);
    const auto d = random_instance(gen, 25, 2, true);
    RngStream bag_rng(9);
    const auto rows = bootstrap_sample(d, bag_rng);
    const auto trace = oracle::grow(d, rows);
    for (std::size_t k = 1; k < trace.partitions.size(); ++k) {
        RngStream rng(0);
        const auto tree = fit_tree(d, rows, regression(k + 1), rng);
        CHECK(training_sse(tree, d, rows) == doctest::Approx(trace.total_sse[k]).epsilon(1e-9));
    }
}

TEST_CASE("tree invariants on random data") {
    RngStream gen(77);
    for (int instance = 0; instance < 20; ++instance) {
        const std::size_t n = 20 + gen.below(60);
        const auto d = random_instance(gen, n, 3, false);
        const auto rows = all_rows(n);

        SUBCASE("full depth interpolates unique rows") {
            RngStream rng(instance);
            const auto tree = fit_tree(d, rows, regression(std::nullopt, 0.34), rng);
            CHECK(mse(tree.predict(d), d.response()) == 0.0);
            CHECK(tree.leaf_count() == n);
        }
        SUBCASE("training SSE is non-increasing in the leaf budget") {
            double previous = std::numeric_limits<double>::infinity();
            for (std::size_t leaves = 2; leaves <= n; leaves += 3) {
                RngStream rng(0);
                const double s = training_sse(fit_tree(d, rows, regression(leaves), rng), d, rows);
                CHECK(s <= previous + 1e-9);
                previous = s;
            }
        }
        SUBCASE("mtry = 1 ignores the random stream") {
            RngStream a(1), b(999, {4, 5});
            auto body = [](const Tree& t) {
                const auto text = t.serialize();
                return text.substr(text.find('\n'));
            };
            CHECK(body(fit_tree(d, rows, regression(10), a)) == body(fit_tree(d, rows, regression(10), b)));
            RngStream c(1), e(2);
            const auto ta = fit_tree(d, rows, regression(), c);
            const auto tb = fit_tree(d, rows, regression(), e);
            CHECK(ta.nodes().size() == tb.nodes().size());
            for (std::size_t i = 0; i < ta.nodes().size(); ++i) {
                CHECK(ta.nodes()[i].threshold == tb.nodes()[i].threshold);
                CHECK(ta.nodes()[i].feature == tb.nodes()[i].feature);
            }
        }
        SUBCASE("every leaf holds at least min_samples_leaf rows") {
            TreeConfig c = regression();
            c.min_samples_leaf = 4;
            RngStream rng(instance);
            const auto tree = fit_tree(d, rows, c, rng);
            for (const auto& node : tree.nodes()) {
                if (node.is_leaf()) CHECK(node.weight >= 4.0);
            }
        }
        SUBCASE("nodes lighter than min_samples_split are never split") {
            TreeConfig c = regression();
            c.min_samples_split = 6;
            RngStream rng(instance);
            const auto tree = fit_tree(d, rows, c, rng);
            std::size_t small_leaves = 0;
            for (const auto& node : tree.nodes()) {
                if (!node.is_leaf()) CHECK(node.weight >= 6.0);
                small_leaves += node.is_leaf() && node.weight < 6.0;
            }
            CHECK(small_leaves > 0);
        }
    }
}

TEST_CASE("classification trees interpolate and vote by majority") {
    RngStream gen(8);
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (int i = 0; i < 60; ++i) {
        rows.push_back({gen.uniform(), gen.uniform()});
        y.push_back(static_cast<double>(gen.below(3)));
    }
    const auto d = Dataset::from_rows(rows, y);
    TreeConfig c;
    c.task = Task::kClassification;
    RngStream rng(1);
    const auto tree = fit_tree(d, all_rows(60), c, rng);
    CHECK(tree.class_count() == 3);
    CHECK(mse(tree.predict(d), d.response()) == 0.0);

    // Leaf with counts {2, 2}: tie goes to label 0.
    const auto tied = Dataset::from_rows({{1}, {1}, {1}, {1}}, {1, 0, 1, 0});
    RngStream r2(1);
    const auto leaf = fit_tree(tied, all_rows(4), c, r2);
    REQUIRE(leaf.nodes().size() == 1);
    CHECK(leaf.predict(std::vector<double>{1.0}) == 0.0);
}

TEST_CASE("prediction on hand-built trees") {
    std::vector<TreeNode> nodes(3);
    nodes[0].feature = 0;
    nodes[0].threshold = 0.5;
    nodes[0].left = 1;
    nodes[0].right = 2;
    nodes[1].value = 0.0;
    nodes[1].depth = 1;
    nodes[2].value = 1.0;
    nodes[2].depth = 1;
    const Tree tree(Task::kRegression, 1, 0, nodes);
    CHECK(tree.predict(std::vector<double>{0.7}) == 1.0);
    CHECK(tree.predict(std::vector<double>{0.5}) == 0.0);
    CHECK_THROWS_AS(tree.predict(std::vector<double>{0.7, 0.1}), std::invalid_argument);
    CHECK(tree.first_use_depth(0) == 0u);

    std::vector<TreeNode> single(1);
    single[0].value = 3.2;
    const Tree constant(Task::kRegression, 4, 0, single);
    CHECK(constant.predict(std::vector<double>{1, 2, 3, 4}) == 3.2);
}

TEST_CASE("first_use_depth scans every split node") {
    // root(f0) -> L(f1), R(f1); LL(f2), RR(f2) at depth 2; leaves below.
    std::vector<TreeNode> nodes(11);
    auto split = [&](int id, int feature, int left, int right, std::uint32_t depth) {
        nodes[id].feature = feature;
        nodes[id].threshold = 0.5;
        nodes[id].left = left;
        nodes[id].right = right;
        nodes[id].depth = depth;
        nodes[left].depth = depth + 1;
        nodes[right].depth = depth + 1;
    };
    split(0, 0, 1, 2, 0);
    split(1, 1, 3, 4, 1);
    split(2, 1, 5, 6, 1);
    split(3, 2, 7, 8, 2);
    split(6, 2, 9, 10, 2);
    const Tree tree(Task::kRegression, 4, 0, nodes);
    CHECK(tree.first_use_depth(0) == 0u);
    CHECK(tree.first_use_depth(1) == 1u);
    CHECK(tree.first_use_depth(2) == 2u);
    CHECK_FALSE(tree.first_use_depth(3));
}

TEST_CASE("tree text serialization round-trips") {
    RngStream gen(4);
    const auto d = random_instance(gen, 30, 3, false);
    RngStream rng(12, {3, 1});
    const auto tree = fit_tree(d, all_rows(30), regression(std::nullopt, 0.5), rng);
    const auto text = tree.serialize();
    const auto back = Tree::deserialize(text);
    CHECK(back.serialize() == text);
    CHECK(back.stream_path() == std::vector<std::uint64_t>{3, 1});
    CHECK(back.predict(d) == tree.predict(d));
    CHECK(back.max_depth() == tree.max_depth());

    CHECK_THROWS(Tree::deserialize(std::string("tree task=regression p=1\n")));
}

TEST_CASE("fit_tree rejects an empty sample") {
    const auto d = Dataset::from_rows({{1}}, {1});
    RngStream rng(1);
    CHECK_THROWS_AS(fit_tree(d, std::vector<std::size_t>{}, regression(), rng), std::invalid_argument);
}
