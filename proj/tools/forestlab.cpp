// forestlab command-line tool.
//
// Exit codes: 0 success, 2 invalid flags or inputs, 1 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "forestlab/analysis.hpp"
#include "forestlab/csv.hpp"
#include "forestlab/dataset.hpp"
#include "forestlab/dgp.hpp"
#include "forestlab/forest.hpp"
#include "forestlab/harness.hpp"

namespace fs = std::filesystem;
using namespace forestlab;

namespace {

/// Thrown for bad user input detected after flag parsing.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string default_output_dir() {
    const char* env = std::getenv("FORESTLAB_OUTPUT_DIR");
    return env && *env ? env : "results";
}

const CLI::Validator kFraction(
    [](std::string& text) -> std::string {
        double v = 0;
        try {
            v = std::stod(text);
        } catch (...) {
            return "must be a number in (0, 1]";
        }
        return v > 0.0 && v <= 1.0 ? "" : "must lie in (0, 1], got " + text;
    },
    "FRACTION in (0,1]");

const CLI::Validator kAtLeastTwo(
    [](std::string& text) -> std::string {
        try {
            return std::stoll(text) >= 2 ? "" : "must be >= 2";
        } catch (...) {
            return "must be an integer >= 2";
        }
    },
    "INT >= 2");

DgpName parse_dgp(const std::string& text) {
    try {
        return dgp_from_string(text);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--dgp: ") + e.what());
    }
}

Task parse_task(const std::string& text) {
    try {
        return task_from_string(text);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--task: ") + e.what());
    }
}

void require_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

/// Reads a dataset CSV; a missing `y` column is allowed and filled with 0.
Dataset read_features(const std::string& path, bool& has_response) {
    const CsvTable table = read_csv(path);
    has_response = std::find(table.header.begin(), table.header.end(), "y") != table.header.end();
    if (has_response) return read_dataset_csv(path);
    std::vector<std::size_t> cols;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (table.header[c] == "f_true") continue;
        cols.push_back(c);
        names.push_back(table.header[c]);
    }
    const std::size_t n = table.rows.size();
    if (n == 0 || cols.empty()) throw std::runtime_error(path + ": no data");
    std::vector<double> values(n * cols.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) values[j * n + i] = parse_double(table.rows[i][cols[j]]);
    }
    return Dataset(n, cols.size(), std::move(values), std::vector<double>(n, 0.0), std::nullopt, std::move(names));
}

Forest load_forest(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("--model: no such file " + path);
    return Forest::deserialize(read_file(path));
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string dgp;
    std::size_t n = 0;
    double snr = 1.0;
    std::size_t noise_features = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_generate(const GenerateArgs& a) {
    DgpSpec spec;
    spec.name = parse_dgp(a.dgp);
    spec.n = a.n;
    spec.snr = a.snr;
    spec.extra_noise_features = a.noise_features;
    spec.seed = a.seed;
    std::string out = a.out;
    if (out.empty()) {
        out = (fs::path(default_output_dir()) /
               (to_string(spec.name) + "_n" + std::to_string(a.n) + "_seed" + std::to_string(a.seed) + ".csv"))
                  .string();
    }
    const GeneratedData data = generate(spec);
    require_parent(out);
    write_generated(out, data);
    std::cout << "wrote " << out << " (n=" << data.dataset.n() << ", p=" << data.dataset.p()
              << ", sigma2=" << format_double(data.sigma2) << ")\n";
    return 0;
}

struct FitArgs {
    std::string data;
    std::string task = "regression";
    double mtry = 1.0;
    std::size_t trees = 100;
    std::optional<std::size_t> maxnodes;
    std::size_t min_leaf = 1;
    std::size_t min_split = 2;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string model_out;
};

int cmd_fit(const FitArgs& a) {
    if (!fs::exists(a.data)) throw UsageError("--data: no such file " + a.data);
    ForestConfig config;
    config.n_trees = a.trees;
    config.tree.task = parse_task(a.task);
    config.tree.mtry = a.mtry;
    config.tree.max_leaf_nodes = a.maxnodes;
    config.tree.min_samples_leaf = a.min_leaf;
    config.tree.min_samples_split = a.min_split;
    config.master_seed = a.seed;
    try {
        config.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const Dataset data = read_dataset_csv(a.data);
    const Forest forest = fit_forest(data, config, a.workers);
    require_parent(a.model_out);
    write_file_atomic(a.model_out, forest.serialize());
    const auto pred = forest.predict(data);
    if (config.tree.task == Task::kRegression) {
        std::cout << "train_mse " << format_double(mse(pred, data.response())) << "\n";
    } else {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < data.n(); ++i) hits += pred[i] == data.response()[i];
        std::cout << "train_accuracy " << format_double(static_cast<double>(hits) / static_cast<double>(data.n()))
                  << "\n";
    }
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& data_path, const std::string& out) {
    if (!fs::exists(data_path)) throw UsageError("--data: no such file " + data_path);
    const Forest forest = load_forest(model_path);
    bool has_response = false;
    const Dataset data = read_features(data_path, has_response);
    if (data.p() != forest.p()) {
        throw UsageError("model expects " + std::to_string(forest.p()) + " features but " + data_path + " has " +
                         std::to_string(data.p()));
    }
    const auto pred = forest.predict(data);
    require_parent(out);
    CsvWriter writer(out, {"row", "prediction"});
    for (std::size_t i = 0; i < pred.size(); ++i) writer.write_row({std::to_string(i), format_double(pred[i])});
    writer.close();
    if (has_response && forest.task() == Task::kRegression) {
        std::cout << "mse " << format_double(mse(pred, data.response())) << "\n";
    }
    return 0;
}

struct DofArgs {
    std::string dgp;
    std::size_t n = 200;
    double snr = 1.0;
    std::size_t noise_features = 0;
    double mtry = 1.0;
    std::size_t trees = 100;
    std::optional<std::size_t> maxnodes;
    std::size_t min_leaf = 1;
    std::size_t min_split = 2;
    std::size_t replications = 50;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string out;
};

int cmd_dof(const DofArgs& a) {
    DgpSpec spec;
    spec.name = parse_dgp(a.dgp);
    if (is_classification(spec.name)) throw UsageError("--dgp: effective DoF needs a regression DGP");
    spec.n = a.n;
    spec.snr = a.snr;
    spec.extra_noise_features = a.noise_features;
    spec.seed = a.seed;
    ForestConfig config;
    config.n_trees = a.trees;
    config.tree.mtry = a.mtry;
    config.tree.max_leaf_nodes = a.maxnodes;
    config.tree.min_samples_leaf = a.min_leaf;
    config.tree.min_samples_split = a.min_split;
    try {
        spec.validate();
        config.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const Dataset design = sample_noiseless(spec);
    const double sigma2 = calibrate_sigma2(spec.name, a.snr);
    const auto est =
        effective_dof(forest_procedure(config), design, sigma2, a.replications, RngStream(a.seed, {1}), a.workers);
    const std::vector<std::string> header = {"dgp", "n", "snr", "mtry", "maxnodes", "n_trees", "seed",
                                             "replications", "dof", "standard_error"};
    const std::vector<std::string> row = {to_string(spec.name), std::to_string(a.n), format_double(a.snr),
                                          format_double(a.mtry), a.maxnodes ? std::to_string(*a.maxnodes) : "none",
                                          std::to_string(a.trees), std::to_string(a.seed),
                                          std::to_string(est.replications), format_double(est.dof),
                                          format_double(est.standard_error)};
    if (!a.out.empty()) {
        require_parent(a.out);
        CsvWriter writer(a.out, header);
        writer.write_row(row);
        writer.close();
    }
    std::cout << join_csv(header) << "\n" << join_csv(row) << "\n";
    return 0;
}

struct BvdArgs {
    std::string dgp;
    std::size_t n = 500;
    double snr = 1.0;
    std::size_t noise_features = 0;
    std::vector<double> mtrys{1.0};
    std::size_t trees = 100;
    std::optional<std::size_t> maxnodes;
    std::size_t trials = 20;
    std::size_t test_points = 2000;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string out;
};

int cmd_bvd(const BvdArgs& a) {
    const DgpName name = parse_dgp(a.dgp);
    if (is_classification(name)) throw UsageError("--dgp: bias-variance decomposition needs a regression DGP");
    for (double m : a.mtrys) {
        if (!(m > 0.0 && m <= 1.0)) throw UsageError("--mtry: values must lie in (0, 1]");
    }
    DgpSpec test_spec;
    test_spec.name = name;
    test_spec.n = a.test_points;
    test_spec.snr = a.snr;
    test_spec.extra_noise_features = a.noise_features;
    test_spec.seed = RngStream(a.seed, {0}).key();
    try {
        test_spec.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const Dataset test = sample_noiseless(test_spec);
    const double sigma2 = calibrate_sigma2(name, a.snr);

    const std::vector<std::string> header = {"dgp", "n", "snr", "mtry", "maxnodes", "trials",
                                             "bias2", "variance", "noise", "total_mse"};
    std::vector<std::vector<std::string>> rows;
    for (double mtry : a.mtrys) {
        std::vector<std::vector<double>> preds(a.trials);
        for (std::size_t t = 0; t < a.trials; ++t) {
            DgpSpec spec = test_spec;
            spec.n = a.n;
            spec.seed = RngStream(a.seed, {1, t}).key();
            const GeneratedData g = generate(spec);
            ForestConfig config;
            config.n_trees = a.trees;
            config.tree.mtry = mtry;
            config.tree.max_leaf_nodes = a.maxnodes;
            config.master_seed = RngStream(a.seed, {2, t}).key();
            preds[t] = fit_forest(g.dataset, config, a.workers).predict(test);
        }
        const auto d = bias_variance_decompose(preds, *test.truth(), sigma2);
        rows.push_back({to_string(name), std::to_string(a.n), format_double(a.snr), format_double(mtry),
                        a.maxnodes ? std::to_string(*a.maxnodes) : "none", std::to_string(a.trials),
                        format_double(d.bias2), format_double(d.variance), format_double(d.noise),
                        format_double(d.total_mse)});
    }
    if (!a.out.empty()) {
        require_parent(a.out);
        CsvWriter writer(a.out, header);
        for (const auto& r : rows) writer.write_row(r);
        writer.close();
    }
    std::cout << join_csv(header) << "\n";
    for (const auto& r : rows) std::cout << join_csv(r) << "\n";
    return 0;
}

int cmd_experiment(const std::string& config_path, std::size_t workers, bool resume,
                   const std::string& output_dir, std::optional<std::size_t> max_units) {
    if (!fs::exists(config_path)) throw UsageError("--config: no such file " + config_path);
    ExperimentConfig config;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(config_path));
        if (j.is_object() && !j.contains("output_dir")) j["output_dir"] = default_output_dir();
        config = ExperimentConfig::from_json(j);
    } catch (const std::exception& e) {
        throw UsageError(std::string("--config: ") + e.what());
    }
    if (!output_dir.empty()) config.output_dir = output_dir;
    RunOptions options;
    options.workers = workers;
    options.resume = resume;
    options.max_units = max_units;
    const RunSummary s = run_experiment(config, options);
    std::cout << "recipe " << to_string(config.recipe) << " config " << config.hash() << "\n"
              << "units " << s.units_total << " run " << s.units_run << " skipped " << s.units_skipped
              << (s.complete ? " complete" : " incomplete") << "\n"
              << "output " << s.directory << "\n";
    return 0;
}

int cmd_inspect(const std::string& model_path, bool depths, std::optional<std::size_t> tree_index,
                const std::string& out) {
    const Forest forest = load_forest(model_path);
    std::string text;
    if (depths) {
        std::ostringstream body;
        body << "feature,mean_first_depth,usage_fraction\n";
        for (std::size_t j = 0; j < forest.p(); ++j) {
            const auto s = average_first_depth(forest, j);
            body << default_feature_names(forest.p())[j] << ','
                 << (s.mean_depth ? format_double(*s.mean_depth) : "nan") << ',' << format_double(s.usage_fraction)
                 << '\n';
        }
        text = body.str();
    } else {
        if (*tree_index >= forest.trees().size()) {
            throw UsageError("--tree: index " + std::to_string(*tree_index) + " out of range (forest has " +
                             std::to_string(forest.trees().size()) + " trees)");
        }
        text = forest.trees()[*tree_index].serialize();
    }
    if (out.empty()) {
        std::cout << text;
    } else {
        require_parent(out);
        write_file_atomic(out, text);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bagging, random forests and hidden-pattern experiments"};
    app.set_version_flag("--version", build_version());
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate_cmd = app.add_subcommand("generate", "Sample a synthetic dataset");
    generate_cmd->add_option("--dgp", gen.dgp, "MARS, MARSADD, HMARS, HMARSADD, HIDDEN2D, BAND2D_CLASS, SPHERE3D_CLASS")
        ->required();
    generate_cmd->add_option("--n", gen.n, "Number of rows")->required()->check(CLI::PositiveNumber);
    generate_cmd->add_option("--snr", gen.snr, "Signal-to-noise ratio")->check(CLI::PositiveNumber);
    generate_cmd->add_option("--noise-features", gen.noise_features, "Appended U(0,1) features")
        ->check(CLI::NonNegativeNumber);
    generate_cmd->add_option("--seed", gen.seed, "Data seed");
    generate_cmd->add_option("--out", gen.out, "Output CSV (default under $FORESTLAB_OUTPUT_DIR)");

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "Fit a forest and save it");
    fit_cmd->add_option("--data", fit.data, "Training CSV")->required();
    fit_cmd->add_option("--task", fit.task, "regression or classification");
    fit_cmd->add_option("--mtry", fit.mtry, "Fraction of features per split")->check(kFraction);
    fit_cmd->add_option("--trees", fit.trees, "Number of trees")->check(CLI::PositiveNumber);
    fit_cmd->add_option("--maxnodes", fit.maxnodes, "Leaf budget per tree (default: full depth)")->check(kAtLeastTwo);
    fit_cmd->add_option("--min-samples-leaf", fit.min_leaf, "Minimum rows per leaf")->check(CLI::PositiveNumber);
    fit_cmd->add_option("--min-samples-split", fit.min_split, "Smallest node that may be split")
        ->check(CLI::Range(std::size_t{2}, std::numeric_limits<std::size_t>::max()));
    fit_cmd->add_option("--seed", fit.seed, "Forest seed");
    fit_cmd->add_option("--workers", fit.workers, "Threads")->check(CLI::PositiveNumber);
    fit_cmd->add_option("--model-out", fit.model_out, "Where to write the model")->required();

    std::string predict_model, predict_data, predict_out;
    auto* predict_cmd = app.add_subcommand("predict", "Predict with a saved forest");
    predict_cmd->add_option("--model", predict_model, "Model file")->required();
    predict_cmd->add_option("--data", predict_data, "Feature CSV")->required();
    predict_cmd->add_option("--out", predict_out, "Predictions CSV")->required();

    DofArgs dof;
    auto* dof_cmd = app.add_subcommand("dof", "Monte-Carlo effective degrees of freedom of a forest");
    dof_cmd->add_option("--dgp", dof.dgp, "Regression DGP")->required();
    dof_cmd->add_option("--n", dof.n, "Design rows")->check(CLI::PositiveNumber);
    dof_cmd->add_option("--snr", dof.snr, "Signal-to-noise ratio")->check(CLI::PositiveNumber);
    dof_cmd->add_option("--noise-features", dof.noise_features, "Appended U(0,1) features");
    dof_cmd->add_option("--mtry", dof.mtry, "Fraction of features per split")->check(kFraction);
    dof_cmd->add_option("--trees", dof.trees, "Number of trees")->check(CLI::PositiveNumber);
    dof_cmd->add_option("--maxnodes", dof.maxnodes, "Leaf budget per tree")->check(kAtLeastTwo);
    dof_cmd->add_option("--min-samples-leaf", dof.min_leaf, "Minimum rows per leaf")->check(CLI::PositiveNumber);
    dof_cmd->add_option("--min-samples-split", dof.min_split, "Smallest node that may be split")
        ->check(CLI::Range(std::size_t{2}, std::numeric_limits<std::size_t>::max()));
    dof_cmd->add_option("--replications", dof.replications, "Noise replications")->check(kAtLeastTwo);
    dof_cmd->add_option("--seed", dof.seed, "Seed");
    dof_cmd->add_option("--workers", dof.workers, "Threads")->check(CLI::PositiveNumber);
    dof_cmd->add_option("--out", dof.out, "Optional CSV");

    BvdArgs bvd;
    auto* bvd_cmd = app.add_subcommand("bvd", "Bias-variance decomposition over training draws");
    bvd_cmd->add_option("--dgp", bvd.dgp, "Regression DGP")->required();
    bvd_cmd->add_option("--n", bvd.n, "Training rows per trial")->check(CLI::PositiveNumber);
    bvd_cmd->add_option("--snr", bvd.snr, "Signal-to-noise ratio")->check(CLI::PositiveNumber);
    bvd_cmd->add_option("--noise-features", bvd.noise_features, "Appended U(0,1) features");
    bvd_cmd->add_option("--mtry", bvd.mtrys, "One or more mtry fractions")->check(kFraction);
    bvd_cmd->add_option("--trees", bvd.trees, "Number of trees")->check(CLI::PositiveNumber);
    bvd_cmd->add_option("--maxnodes", bvd.maxnodes, "Leaf budget per tree")->check(kAtLeastTwo);
    bvd_cmd->add_option("--trials", bvd.trials, "Training draws")->check(kAtLeastTwo);
    bvd_cmd->add_option("--test-points", bvd.test_points, "Shared test points")->check(CLI::PositiveNumber);
    bvd_cmd->add_option("--seed", bvd.seed, "Seed");
    bvd_cmd->add_option("--workers", bvd.workers, "Threads")->check(CLI::PositiveNumber);
    bvd_cmd->add_option("--out", bvd.out, "Optional CSV");

    std::string config_path, output_dir;
    std::size_t workers = 1;
    bool resume = false;
    std::optional<std::size_t> max_units;
    auto* experiment_cmd = app.add_subcommand("experiment", "Run a configured campaign");
    experiment_cmd->add_option("--config", config_path, "JSON config")->required();
    experiment_cmd->add_option("--workers", workers, "Concurrent units")->check(CLI::PositiveNumber);
    experiment_cmd->add_flag("--resume", resume, "Continue an existing results table");
    experiment_cmd->add_option("--output-dir", output_dir, "Overrides the config's output_dir");
    experiment_cmd->add_option("--max-units", max_units, "Stop after this many new units");

    std::string inspect_model, inspect_out;
    bool feature_depths = false;
    std::optional<std::size_t> tree_index;
    auto* inspect_cmd = app.add_subcommand("inspect", "Feature depth table or a tree dump");
    inspect_cmd->add_option("--model", inspect_model, "Model file")->required();
    auto* depth_flag = inspect_cmd->add_flag("--feature-depths", feature_depths, "Average first depth per feature");
    auto* tree_opt = inspect_cmd->add_option("--tree", tree_index, "Dump tree k");
    depth_flag->excludes(tree_opt);
    inspect_cmd->add_option("--out", inspect_out, "Output file (default stdout)");

    try {
        app.parse(argc, argv);
        if (*inspect_cmd && !feature_depths && !tree_index) {
            throw CLI::ValidationError("inspect", "one of --feature-depths or --tree is required");
        }
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*generate_cmd) return cmd_generate(gen);
        if (*fit_cmd) return cmd_fit(fit);
        if (*predict_cmd) return cmd_predict(predict_model, predict_data, predict_out);
        if (*dof_cmd) return cmd_dof(dof);
        if (*bvd_cmd) return cmd_bvd(bvd);
        if (*experiment_cmd) return cmd_experiment(config_path, workers, resume, output_dir, max_units);
        if (*inspect_cmd) return cmd_inspect(inspect_model, feature_depths, tree_index, inspect_out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
