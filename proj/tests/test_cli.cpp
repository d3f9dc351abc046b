#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

#include "forestlab/csv.hpp"
#include "forestlab/dataset.hpp"
#include "forestlab/forest.hpp"
#include "forestlab/harness.hpp"

using namespace forestlab;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string output;
};

Result run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + FORESTLAB_CLI + std::string(" ") + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[4096];
    while (std::size_t k = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, k);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

struct Workdir {
    fs::path path;
    explicit Workdir(const std::string& name) : path(fs::temp_directory_path() / ("forestlab_cli_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~Workdir() { fs::remove_all(path); }
    std::string operator/(const std::string& file) const { return (path / file).string(); }
};

}  // namespace

TEST_CASE("version and usage errors") {
    const auto v = run("--version");
    CHECK(v.code == 0);
    CHECK(v.output.find(build_version()) != std::string::npos);
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("generate --n 10").code == 2);
}

TEST_CASE("generate") {
    Workdir w("generate");
    const auto a = run("generate --dgp hidden2d --n 1000 --snr 6 --seed 1 --out " + (w / "a.csv"));
    REQUIRE(a.code == 0);
    const auto t = read_csv(w / "a.csv");
    CHECK(t.header == std::vector<std::string>{"x1", "x2", "y", "f_true"});
    CHECK(t.rows.size() == 1000);
    CHECK(fs::exists(w / "a.csv.json"));

    REQUIRE(run("generate --dgp hidden2d --n 1000 --snr 6 --seed 1 --out " + (w / "b.csv")).code == 0);
    CHECK(read_file(w / "a.csv") == read_file(w / "b.csv"));
    CHECK(read_file(w / "a.csv.json") == read_file(w / "b.csv.json"));

    const auto bad = run("generate --dgp hidden2d --n 1000 --snr 0 --seed 1 --out " + (w / "c.csv"));
    CHECK(bad.code == 2);
    CHECK(bad.output.find("--snr") != std::string::npos);
    CHECK_FALSE(fs::exists(w / "c.csv"));
    CHECK(run("generate --dgp nosuch --n 10 --out " + (w / "d.csv")).code == 2);
    CHECK_FALSE(fs::exists(w / "d.csv"));

    const auto env = run("generate --dgp mars --n 20 --snr 1 --seed 3", "FORESTLAB_OUTPUT_DIR=" + (w / "env"));
    CHECK(env.code == 0);
    CHECK(fs::exists(w / "env/MARS_n20_seed3.csv"));
}

TEST_CASE("fit, predict and inspect") {
    Workdir w("fit");
    REQUIRE(run("generate --dgp mars --n 200 --snr 2 --seed 4 --out " + (w / "train.csv")).code == 0);
    REQUIRE(run("generate --dgp mars --n 100 --snr 2 --seed 5 --out " + (w / "test.csv")).code == 0);

    const auto fit = run("fit --data " + (w / "train.csv") + " --mtry 1.0 --trees 1 --seed 9 --model-out " +
                         (w / "one.txt"));
    REQUIRE(fit.code == 0);
    CHECK(fit.output.find("train_mse") != std::string::npos);

    const auto full = run("fit --data " + (w / "train.csv") + " --mtry 1.0 --trees 50 --seed 9 --model-out " +
                          (w / "m.txt"));
    REQUIRE(full.code == 0);
    REQUIRE(run("predict --model " + (w / "m.txt") + " --data " + (w / "test.csv") + " --out " + (w / "p.csv"))
                .code == 0);
    const auto preds = read_csv(w / "p.csv");
    CHECK(preds.header == std::vector<std::string>{"row", "prediction"});
    REQUIRE(preds.rows.size() == 100);

    // Same predictions as the library on a deserialized copy.
    const auto forest = Forest::deserialize(read_file(w / "m.txt"));
    const auto expected = forest.predict(read_dataset_csv(w / "test.csv"));
    for (std::size_t i = 0; i < 100; ++i) CHECK(parse_double(preds.rows[i][1]) == expected[i]);

    // And the same forest as fitting in-process with the same flags.
    ForestConfig config;
    config.n_trees = 50;
    config.master_seed = 9;
    CHECK(fit_forest(read_dataset_csv(w / "train.csv"), config).serialize() == read_file(w / "m.txt"));

    const auto bad = run("fit --data " + (w / "train.csv") + " --mtry 1.5 --model-out " + (w / "bad.txt"));
    CHECK(bad.code == 2);
    CHECK(bad.output.find("--mtry") != std::string::npos);
    CHECK_FALSE(fs::exists(w / "bad.txt"));

    REQUIRE(run("generate --dgp hidden2d --n 30 --snr 1 --out " + (w / "narrow.csv")).code == 0);
    CHECK(run("predict --model " + (w / "m.txt") + " --data " + (w / "narrow.csv") + " --out " + (w / "q.csv")).code ==
          2);
    CHECK_FALSE(fs::exists(w / "q.csv"));

    const auto depths = run("inspect --model " + (w / "m.txt") + " --feature-depths --out " + (w / "depths.csv"));
    REQUIRE(depths.code == 0);
    const auto dt = read_csv(w / "depths.csv");
    CHECK(dt.header == std::vector<std::string>{"feature", "mean_first_depth", "usage_fraction"});
    CHECK(dt.rows.size() == 5);

    const auto tree = run("inspect --model " + (w / "m.txt") + " --tree 3");
    CHECK(tree.code == 0);
    CHECK(tree.output.rfind("tree task=regression", 0) == 0);
    CHECK(run("inspect --model " + (w / "m.txt") + " --tree 50").code == 2);
    CHECK(run("inspect --model " + (w / "m.txt")).code == 2);
}

TEST_CASE("full-depth fit on unique rows has zero training error") {
    Workdir w("interp");
    // A single full-depth tree reproduces every row of its bag.
    REQUIRE(run("generate --dgp mars --n 60 --snr 1 --seed 2 --out " + (w / "d.csv")).code == 0);
    const auto d = read_dataset_csv(w / "d.csv");
    RngStream bag_rng = RngStream(5).child(0).child(0);
    auto bag = bootstrap_sample(d, bag_rng);
    std::sort(bag.begin(), bag.end());
    bag.erase(std::unique(bag.begin(), bag.end()), bag.end());
    write_dataset_csv(w / "bag.csv", d.subset(bag));
    REQUIRE(run("fit --data " + (w / "d.csv") + " --trees 1 --seed 5 --model-out " + (w / "m.txt")).code == 0);
    const auto p = run("predict --model " + (w / "m.txt") + " --data " + (w / "bag.csv") + " --out " + (w / "p.csv"));
    REQUIRE(p.code == 0);
    CHECK(p.output.find("mse 0\n") != std::string::npos);
}

TEST_CASE("inspect on a single-tree forest rooted on x1") {
    Workdir w("inspect");
    write_file_atomic(w / "stump.txt",
                      "forest task=regression trees=1 mtry=1 max_leaf_nodes=none min_samples_leaf=1 min_samples_split=2 seed=0\n"
                      "tree task=regression p=2 classes=0 nodes=3 seed=0 path=-\n"
                      "0 split 0 0.5 0 1 2 2\n"
                      "1 leaf -1 0 1 -1 -1 1\n"
                      "2 leaf -1 0 2 -1 -1 1\n");
    const auto r = run("inspect --model " + (w / "stump.txt") + " --feature-depths");
    REQUIRE(r.code == 0);
    CHECK(r.output == "feature,mean_first_depth,usage_fraction\nx1,0,1\nx2,nan,0\n");
}

TEST_CASE("experiment subcommand") {
    Workdir w("experiment");
    write_file_atomic(w / "c.json",
                      R"({"recipe": "HIDDEN2D_SWEEP", "trials": 2, "n": [200], "snr": [6, 0.5], "n_trees": 6})");
    const auto one = run("experiment --config " + (w / "c.json") + " --workers 1 --output-dir " + (w / "a"));
    REQUIRE(one.code == 0);
    const auto four = run("experiment --config " + (w / "c.json") + " --workers 4 --output-dir " + (w / "b"));
    REQUIRE(four.code == 0);
    const auto hash = ExperimentConfig::load(w / "c.json").hash();
    const auto a = w / ("a/HIDDEN2D_SWEEP/" + hash + "/results.csv");
    const auto b = w / ("b/HIDDEN2D_SWEEP/" + hash + "/results.csv");
    CHECK(read_file(a) == read_file(b));
    CHECK_NOTHROW(validate_results_csv(a, Recipe::kHidden2DSweep, hash));
    CHECK(read_csv(a).rows.size() == 2 * 2 * 2);

    const auto again = run("experiment --config " + (w / "c.json") + " --resume --output-dir " + (w / "a"));
    CHECK(again.code == 0);
    CHECK(again.output.find("run 0 skipped 4") != std::string::npos);
    CHECK(run("experiment --config " + (w / "c.json") + " --output-dir " + (w / "a")).code == 1);

    const auto env = run("experiment --config " + (w / "c.json"), "FORESTLAB_OUTPUT_DIR=" + (w / "env"));
    CHECK(env.code == 0);
    CHECK(fs::exists(w / ("env/HIDDEN2D_SWEEP/" + hash + "/results.csv")));

    write_file_atomic(w / "bad.json", R"({"recipe": "HIDDEN2D_SWEEP", "trails": 2})");
    const auto bad = run("experiment --config " + (w / "bad.json") + " --output-dir " + (w / "c"));
    CHECK(bad.code == 2);
    CHECK(bad.output.find("trails") != std::string::npos);
    CHECK_FALSE(fs::exists(w / "c"));
}

TEST_CASE("dof and bvd subcommands") {
    Workdir w("dof");
    const auto d = run("dof --dgp mars --n 40 --snr 2 --trees 5 --replications 5 --out " + (w / "dof.csv"));
    REQUIRE(d.code == 0);
    const auto t = read_csv(w / "dof.csv");
    CHECK(t.header.back() == "standard_error");
    CHECK(run("dof --dgp band2d_class --n 40").code == 2);
    CHECK(run("dof --dgp mars --replications 1").code == 2);

    const auto b = run("bvd --dgp hmars --n 60 --snr 6 --mtry 0.3 1.0 --trees 5 --trials 3 --test-points 50 --out " +
                       (w / "bvd.csv"));
    REQUIRE(b.code == 0);
    const auto bt = read_csv(w / "bvd.csv");
    CHECK(bt.rows.size() == 2);
    CHECK(run("bvd --dgp hmars --trials 1").code == 2);
}
