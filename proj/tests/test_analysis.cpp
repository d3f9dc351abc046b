#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <map>

#include "forestlab/analysis.hpp"
#include "forestlab/dgp.hpp"

using namespace forestlab;

namespace {

Dataset mars_design(std::size_t n, std::uint64_t seed) {
    DgpSpec spec;
    spec.name = DgpName::kMars;
    spec.n = n;
    spec.seed = seed;
    return sample_noiseless(spec);
}

Eigen::MatrixXd design_matrix(const Dataset& d) {
    Eigen::MatrixXd X(d.n(), d.p() + 1);
    for (std::size_t i = 0; i < d.n(); ++i) {
        X(i, 0) = 1.0;
        for (std::size_t j = 0; j < d.p(); ++j) X(i, j + 1) = d.feature(i, j);
    }
    return X;
}

std::vector<double> ols_fit(const Dataset& d) {
    const Eigen::MatrixXd X = design_matrix(d);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(d.response().data(), d.n());
    const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
    const Eigen::VectorXd fitted = X * beta;
    return {fitted.data(), fitted.data() + fitted.size()};
}

DofEstimate fake(double dof) { return DofEstimate{dof, 10, 0.1}; }

}  // namespace

TEST_CASE("mse") {
    CHECK(mse(std::vector<double>{1, 2}, std::vector<double>{1, 2}) == 0.0);
    CHECK(mse(std::vector<double>{0, 0}, std::vector<double>{1, 1}) == 1.0);
    CHECK(mse(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 1}) == doctest::Approx(5.0 / 3));
    CHECK_THROWS(mse(std::vector<double>{1}, std::vector<double>{1, 2}));
    CHECK_THROWS(mse(std::vector<double>{}, std::vector<double>{}));
}

TEST_CASE("percent_decrease") {
    CHECK(percent_decrease(0.046, 0.029) == doctest::Approx(36.96).epsilon(1e-3));
    CHECK(percent_decrease(0.007, 0.005) == doctest::Approx(28.57).epsilon(1e-3));
    CHECK(percent_decrease(2.0, 2.0) == 0.0);
    CHECK(percent_decrease(1.0, 1.5) == doctest::Approx(-50.0));
    CHECK_THROWS(percent_decrease(0.0, 1.0));
}

TEST_CASE("eq1_ensemble_variance") {
    CHECK(eq1_ensemble_variance(1.0, 3.0, 17) == doctest::Approx(3.0));
    CHECK(eq1_ensemble_variance(0.0, 3.0, 4) == doctest::Approx(0.75));
    CHECK(eq1_ensemble_variance(0.5, 2.0, 4) == doctest::Approx(1.25));
}

TEST_CASE("effective_dof of procedures with known answers") {
    const std::size_t n = 200;
    const auto design = mars_design(n, 21);
    const double sigma2 = 4.0;

    SUBCASE("OLS matches the hat-matrix trace") {
        const Eigen::MatrixXd X = design_matrix(design);
        const Eigen::MatrixXd H = X * (X.transpose() * X).inverse() * X.transpose();
        const double trace = H.trace();
        CHECK(trace == doctest::Approx(6.0).epsilon(1e-9));
        const auto est = effective_dof([](const Dataset& d, RngStream&) { return ols_fit(d); }, design, sigma2, 500,
                                       RngStream(5));
        CAPTURE(est.dof);
        CAPTURE(est.standard_error);
        CHECK(est.replications == 500);
        CHECK(std::abs(est.dof - trace) < 3 * est.standard_error);
    }
    SUBCASE("constant predictor") {
        const auto est = effective_dof(
            [](const Dataset& d, RngStream&) { return std::vector<double>(d.n(), 0.0); }, design, sigma2, 50,
            RngStream(6));
        CHECK(est.dof == 0.0);
        CHECK(std::abs(est.dof) <= 3 * est.standard_error);
    }
    SUBCASE("a predictor that ignores y") {
        const auto est = effective_dof(
            [](const Dataset& d, RngStream& rng) {
                std::vector<double> out(d.n());
                for (auto& v : out) v = 3.0 * rng.normal();
                return out;
            },
            design, sigma2, 200, RngStream(7));
        CHECK(est.standard_error > 0.0);
        CHECK(std::abs(est.dof) < 3 * est.standard_error);
    }
    SUBCASE("identity predictor") {
        const auto est = effective_dof([](const Dataset& d, RngStream&) { return d.response(); }, design, sigma2, 200,
                                       RngStream(8));
        CHECK(std::abs(est.dof - static_cast<double>(n)) < 3 * est.standard_error);
    }
    SUBCASE("worker count does not change the estimate") {
        const auto proc = forest_procedure([] {
            ForestConfig c;
            c.n_trees = 5;
            c.tree.mtry = 0.5;
            return c;
        }());
        const auto small = mars_design(40, 2);
        const auto a = effective_dof(proc, small, 1.0, 6, RngStream(1), 1);
        const auto b = effective_dof(proc, small, 1.0, 6, RngStream(1), 3);
        CHECK(a.dof == b.dof);
        CHECK(a.standard_error == b.standard_error);
    }
    SUBCASE("errors") {
        const auto id = [](const Dataset& d, RngStream&) { return d.response(); };
        CHECK_THROWS(effective_dof(id, design, sigma2, 1, RngStream(1)));
        CHECK_THROWS(effective_dof(id, design, 0.0, 10, RngStream(1)));
        const auto no_truth = Dataset::from_rows({{0.1}, {0.2}}, {0, 1});
        CHECK_THROWS(effective_dof(id, no_truth, sigma2, 10, RngStream(1)));
        const auto short_output = [](const Dataset&, RngStream&) { return std::vector<double>{1.0}; };
        CHECK_THROWS(effective_dof(short_output, design, sigma2, 10, RngStream(1)));
    }
    SUBCASE("two replications give no standard error") {
        const auto est = effective_dof([](const Dataset& d, RngStream&) { return d.response(); }, design, sigma2, 2,
                                       RngStream(9));
        CHECK(std::isnan(est.standard_error));
    }
}

TEST_CASE("forest DoF does not increase as mtry grows smaller") {
    const auto design = mars_design(200, 44);
    const double sigma2 = calibrate_sigma2(DgpName::kMars, 3.0);
    std::map<double, DofEstimate> est;
    for (double mtry : {0.33, 0.66, 1.0}) {
        ForestConfig c;
        c.n_trees = 50;
        c.tree.mtry = mtry;
        c.tree.max_leaf_nodes = 200;
        c.tree.min_samples_leaf = 5;
        est[mtry] = effective_dof(forest_procedure(c), design, sigma2, 100, RngStream(12));
    }
    auto joint_se = [&](double a, double b) {
        return std::hypot(est[a].standard_error, est[b].standard_error);
    };
    CHECK(est[0.33].dof <= est[0.66].dof + 2 * joint_se(0.33, 0.66));
    CHECK(est[0.66].dof <= est[1.0].dof + 2 * joint_se(0.66, 1.0));
}

TEST_CASE("match_dof_on_grid") {
    const std::vector<std::size_t> grid{2, 5, 10, 20, 35, 50, 75, 100, 140, 200};
    const std::map<std::size_t, double> table{{2, 3},   {5, 8},   {10, 14}, {20, 22}, {35, 30},
                                              {50, 37}, {75, 44}, {100, 50}, {140, 55}, {200, 58}};
    std::vector<std::size_t> visited;
    const auto dof_at = [&](std::size_t m) {
        visited.push_back(m);
        return fake(table.at(m));
    };

    SUBCASE("exact hit") {
        const auto m = match_dof_on_grid(37.0, grid, dof_at);
        CHECK(m.maxnodes == 50);
        CHECK(m.monotone);
        // stops after the first estimate above the target
        CHECK(visited == std::vector<std::size_t>{2, 5, 10, 20, 35, 50, 75});
        CHECK(m.audit.size() == visited.size());
    }
    SUBCASE("nearest value wins, ties to the smaller maxnodes") {
        CHECK(match_dof_on_grid(20.9, grid, dof_at).maxnodes == 20);
        CHECK(match_dof_on_grid(18.0, grid, dof_at).maxnodes == 10);
        CHECK(match_dof_on_grid(18.1, grid, dof_at).maxnodes == 20);
    }
    SUBCASE("chosen value brackets the target") {
        const auto m = match_dof_on_grid(41.0, grid, dof_at);
        CHECK(m.maxnodes == 75);
        CHECK(table.at(50) <= 41.0);
        CHECK(table.at(75) >= 41.0);
    }
    SUBCASE("out of range") {
        CHECK_THROWS(match_dof_on_grid(1.0, grid, dof_at));
        CHECK_THROWS(match_dof_on_grid(60.0, grid, dof_at));
        const std::vector<std::size_t> unsorted{5, 2};
        CHECK_THROWS(match_dof_on_grid(4.0, unsorted, dof_at));
    }
    SUBCASE("non-monotone audits are flagged") {
        const auto bumpy = [](std::size_t m) { return fake(m == 5 ? 1.0 : static_cast<double>(m)); };
        const auto m = match_dof_on_grid(15.0, grid, bumpy);
        CHECK_FALSE(m.monotone);
    }
}

TEST_CASE("match_trim_dof recovers a grid value") {
    TrimDofContext ctx{mars_design(60, 3), calibrate_sigma2(DgpName::kMars, 2.0), 10, 1, 2, 99, 1};
    const std::vector<std::size_t> grid{2, 5, 10, 20};
    ForestConfig c;
    c.n_trees = 10;
    c.tree.max_leaf_nodes = 10;
    const auto at10 = effective_dof(forest_procedure(c), ctx.design, ctx.sigma2, 8, RngStream(99));
    const auto m = match_trim_dof(at10.dof, ctx, grid, 8);
    CHECK(m.maxnodes == 10);
    REQUIRE(m.audit.size() >= 3);
    CHECK(m.audit[2].second.dof == at10.dof);
}

TEST_CASE("bias_variance_decompose") {
    SUBCASE("perfect model") {
        const std::vector<double> truth{1, 2, 3};
        const auto d = bias_variance_decompose({truth, truth, truth}, truth, 0.5);
        CHECK(d.bias2 == 0.0);
        CHECK(d.variance == 0.0);
        CHECK(d.total_mse == 0.5);
    }
    SUBCASE("constant zero predictor") {
        const std::vector<double> truth{2, 2};
        const auto d = bias_variance_decompose({{0, 0}, {0, 0}}, truth, 0.0);
        CHECK(d.bias2 == 4.0);
        CHECK(d.variance == 0.0);
    }
    SUBCASE("two trials at one point") {
        const auto d = bias_variance_decompose({{0}, {2}}, std::vector<double>{1}, 0.0);
        CHECK(d.bias2 == 0.0);
        CHECK(d.variance == 2.0);
    }
    SUBCASE("identity holds exactly on random inputs") {
        RngStream rng(4);
        for (int rep = 0; rep < 50; ++rep) {
            const std::size_t T = 2 + rng.below(6), n = 1 + rng.below(20);
            std::vector<std::vector<double>> preds(T, std::vector<double>(n));
            std::vector<double> truth(n);
            for (auto& v : truth) v = rng.normal();
            for (auto& row : preds)
                for (auto& v : row) v = rng.normal();
            const double s2 = rng.uniform();
            const auto d = bias_variance_decompose(preds, truth, s2);
            CHECK(d.bias2 + d.variance + d.noise == d.total_mse);
            CHECK(d.noise == s2);
            CHECK(d.bias2 >= 0.0);
            CHECK(d.variance >= 0.0);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS(bias_variance_decompose({{1.0}}, std::vector<double>{1}, 0.0));
        CHECK_THROWS(bias_variance_decompose({{1.0}, {1.0, 2.0}}, std::vector<double>{1}, 0.0));
    }
}

TEST_CASE("spearman") {
    CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 1, 0, -7}) == doctest::Approx(-1.0));
    CHECK(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 2}) == doctest::Approx(std::sqrt(3.0) / 2));
}
