#include "forestlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>

#include "forestlab/analysis.hpp"
#include "forestlab/csv.hpp"
#include "forestlab/forest.hpp"
#include "forestlab/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace forestlab {

std::string build_version() { return std::string("forestlab ") + FORESTLAB_VERSION; }

// ---------------------------------------------------------------------------
// Recipes and configuration

namespace {

constexpr Recipe kAllRecipes[] = {
    Recipe::kTrimVsSfs,  Recipe::kHidden2DSingle,    Recipe::kHidden2DSweep,
    Recipe::kHMarsSweep, Recipe::kBvdSweep,          Recipe::kMtryNoiseFeatures,
    Recipe::kFirstDepth, Recipe::kSphereDemo,        Recipe::kBand2DDemo,
};

std::vector<double> mtry_tenths() {
    std::vector<double> out;
    for (int k = 1; k <= 10; ++k) out.push_back(k / 10.0);
    return out;
}

}  // namespace

std::string to_string(Recipe recipe) {
    switch (recipe) {
        case Recipe::kTrimVsSfs: return "TRIM_VS_SFS";
        case Recipe::kHidden2DSingle: return "HIDDEN2D_SINGLE";
        case Recipe::kHidden2DSweep: return "HIDDEN2D_SWEEP";
        case Recipe::kHMarsSweep: return "HMARS_SWEEP";
        case Recipe::kBvdSweep: return "BVD_SWEEP";
        case Recipe::kMtryNoiseFeatures: return "MTRY_NOISE_FEATURES";
        case Recipe::kFirstDepth: return "FIRST_DEPTH";
        case Recipe::kSphereDemo: return "SPHERE_DEMO";
        case Recipe::kBand2DDemo: return "BAND2D_DEMO";
    }
    throw std::logic_error("unknown Recipe");
}

Recipe recipe_from_string(const std::string& text) {
    std::string upper;
    for (char c : text) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    for (Recipe r : kAllRecipes) {
        if (to_string(r) == upper) return r;
    }
    throw std::invalid_argument("unknown recipe '" + text + "'");
}

std::vector<double> default_snr_grid() {
    std::vector<double> grid;
    const double lo = std::log10(0.042);
    const double hi = std::log10(6.0);
    for (int k = 0; k < 10; ++k) grid.push_back(std::pow(10.0, lo + (hi - lo) * k / 9.0));
    grid.front() = 0.042;
    grid.back() = 6.0;
    return grid;
}

ExperimentConfig ExperimentConfig::defaults(Recipe recipe) {
    ExperimentConfig c;
    c.recipe = recipe;
    c.snrs = default_snr_grid();
    c.ns = {200, 1000};
    c.mtrys = {0.33};
    c.maxnodes_grid = default_maxnodes_grid();
    switch (recipe) {
        case Recipe::kTrimVsSfs:
            c.dgps = {DgpName::kMars, DgpName::kMarsAdd};
            c.min_samples_split = 6;
            break;
        case Recipe::kHidden2DSingle:
            c.dgps = {DgpName::kHidden2D};
            c.snrs = {6.0, 0.042};
            c.ns = {1000};
            c.mtrys = {0.5};
            c.n_trees = 500;
            c.maxnodes.reset();
            c.trials = 1;
            break;
        case Recipe::kHidden2DSweep:
            c.dgps = {DgpName::kHidden2D};
            break;
        case Recipe::kHMarsSweep:
            c.dgps = {DgpName::kHMars, DgpName::kHMarsAdd};
            break;
        case Recipe::kBvdSweep:
            c.dgps = {DgpName::kMars, DgpName::kMarsAdd, DgpName::kHMars, DgpName::kHMarsAdd};
            c.snrs = {6.0, 0.042};
            c.ns = {1000};
            c.mtrys = mtry_tenths();
            break;
        case Recipe::kMtryNoiseFeatures:
            c.dgps = {DgpName::kHMars, DgpName::kHMarsAdd};
            c.snrs = {6.0};
            c.ns = {1000};
            c.mtrys = mtry_tenths();
            c.extra_noise_features = {1, 3, 5};
            break;
        case Recipe::kFirstDepth:
            c.dgps = {DgpName::kHMars, DgpName::kHMarsAdd};
            c.snrs = {6.0};
            c.ns = {1000};
            c.mtrys = mtry_tenths();
            c.extra_noise_features = {1, 3, 5};
            c.trials = 20;
            break;
        case Recipe::kSphereDemo:
            c.dgps = {DgpName::kSphere3DClass};
            c.snrs = {1.0};
            c.ns = {10000};
            c.mtrys = {0.33};
            c.maxnodes = 10;
            c.trials = 1;
            break;
        case Recipe::kBand2DDemo:
            c.dgps = {DgpName::kBand2DClass};
            c.snrs = {1.0};
            c.ns = {10000};
            c.mtrys = {0.5};
            c.maxnodes = 10;
            c.trials = 1;
            break;
    }
    return c;
}

namespace {

template <typename T>
std::vector<T> as_list(const json& value) {
    if (value.is_array()) return value.get<std::vector<T>>();
    return {value.get<T>()};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("experiment config must be a JSON object");
    if (!j.contains("recipe")) throw std::invalid_argument("experiment config: missing 'recipe'");
    static const std::set<std::string> known = {
        "recipe", "dgp", "snr", "mtry", "n", "extra_noise_features", "n_trees", "maxnodes", "min_samples_leaf", "min_samples_split", "trials",
        "master_seed", "output_dir", "train_fraction", "dof_replications", "maxnodes_grid", "test_points",
        "grid_resolution"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw std::invalid_argument("experiment config: unknown key '" + key + "'");
    }
    ExperimentConfig c = defaults(recipe_from_string(j.at("recipe").get<std::string>()));
    try {
        if (j.contains("dgp")) {
            c.dgps.clear();
            for (const auto& name : as_list<std::string>(j.at("dgp"))) c.dgps.push_back(dgp_from_string(name));
        }
        if (j.contains("snr")) c.snrs = as_list<double>(j.at("snr"));
        if (j.contains("mtry")) c.mtrys = as_list<double>(j.at("mtry"));
        if (j.contains("n")) c.ns = as_list<std::size_t>(j.at("n"));
        if (j.contains("extra_noise_features")) c.extra_noise_features = as_list<std::size_t>(j.at("extra_noise_features"));
        if (j.contains("n_trees")) c.n_trees = j.at("n_trees").get<std::size_t>();
        if (j.contains("maxnodes")) {
            const auto& m = j.at("maxnodes");
            if (m.is_null()) {
                c.maxnodes.reset();
            } else {
                c.maxnodes = m.get<std::size_t>();
            }
        }
        if (j.contains("min_samples_leaf")) c.min_samples_leaf = j.at("min_samples_leaf").get<std::size_t>();
        if (j.contains("min_samples_split")) c.min_samples_split = j.at("min_samples_split").get<std::size_t>();
        if (j.contains("trials")) c.trials = j.at("trials").get<std::size_t>();
        if (j.contains("master_seed")) c.master_seed = j.at("master_seed").get<std::uint64_t>();
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("train_fraction")) c.train_fraction = j.at("train_fraction").get<double>();
        if (j.contains("dof_replications")) c.dof_replications = j.at("dof_replications").get<std::size_t>();
        if (j.contains("maxnodes_grid")) c.maxnodes_grid = as_list<std::size_t>(j.at("maxnodes_grid"));
        if (j.contains("test_points")) c.test_points = j.at("test_points").get<std::size_t>();
        if (j.contains("grid_resolution")) c.grid_resolution = j.at("grid_resolution").get<std::size_t>();
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json j;
    j["recipe"] = to_string(recipe);
    std::vector<std::string> names;
    for (auto d : dgps) names.push_back(to_string(d));
    j["dgp"] = names;
    j["snr"] = snrs;
    j["mtry"] = mtrys;
    j["n"] = ns;
    j["extra_noise_features"] = extra_noise_features;
    j["n_trees"] = n_trees;
    j["maxnodes"] = maxnodes ? json(*maxnodes) : json(nullptr);
    j["min_samples_leaf"] = min_samples_leaf;
    j["min_samples_split"] = min_samples_split;
    j["trials"] = trials;
    j["master_seed"] = master_seed;
    j["output_dir"] = output_dir;
    j["train_fraction"] = train_fraction;
    j["dof_replications"] = dof_replications;
    j["maxnodes_grid"] = maxnodes_grid;
    j["test_points"] = test_points;
    j["grid_resolution"] = grid_resolution;
    return j;
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("output_dir");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("experiment config: " + msg); };
    if (dgps.empty() || snrs.empty() || mtrys.empty() || ns.empty() || extra_noise_features.empty()) {
        fail("all grids must be non-empty");
    }
    if (trials < 1) fail("trials must be >= 1");
    if (n_trees < 1) fail("n_trees must be >= 1");
    if (maxnodes && *maxnodes < 2) fail("maxnodes must be >= 2 or null");
    if (min_samples_leaf < 1) fail("min_samples_leaf must be >= 1");
    if (min_samples_split < 2) fail("min_samples_split must be >= 2");
    for (double m : mtrys) {
        if (!(m > 0.0 && m <= 1.0)) fail("mtry values must lie in (0, 1]");
    }
    for (double s : snrs) {
        if (!(s > 0.0 && std::isfinite(s))) fail("snr values must be positive");
    }
    for (std::size_t n : ns) {
        if (n < 4) fail("n values must be >= 4");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction must lie in (0, 1)");
    if (test_points < 1) fail("test_points must be >= 1");
    if (grid_resolution < 2) fail("grid_resolution must be >= 2");

    const bool all_regression =
        std::all_of(dgps.begin(), dgps.end(), [](DgpName d) { return !is_classification(d); });
    switch (recipe) {
        case Recipe::kTrimVsSfs:
            for (auto d : dgps) {
                if (d != DgpName::kMars && d != DgpName::kMarsAdd && d != DgpName::kHMars &&
                    d != DgpName::kHMarsAdd) {
                    fail("TRIM_VS_SFS supports MARS, MARSADD, HMARS and HMARSADD only");
                }
            }
            if (maxnodes_grid.empty() || !std::is_sorted(maxnodes_grid.begin(), maxnodes_grid.end())) {
                fail("maxnodes_grid must be non-empty and ascending");
            }
            if (dof_replications < 3) fail("dof_replications must be >= 3");
            break;
        case Recipe::kHidden2DSingle:
            for (auto d : dgps) {
                if (d != DgpName::kHidden2D) fail("HIDDEN2D_SINGLE requires dgp HIDDEN2D");
            }
            break;
        case Recipe::kHidden2DSweep:
        case Recipe::kHMarsSweep:
            if (!all_regression) fail("SNR sweeps need regression DGPs");
            break;
        case Recipe::kBvdSweep:
        case Recipe::kMtryNoiseFeatures:
            if (!all_regression) fail("bias-variance sweeps need regression DGPs");
            if (trials < 2) fail("bias-variance sweeps need trials >= 2");
            break;
        case Recipe::kFirstDepth:
            for (auto d : dgps) {
                if (d != DgpName::kHMars && d != DgpName::kHMarsAdd) fail("FIRST_DEPTH requires HMARS or HMARSADD");
            }
            break;
        case Recipe::kSphereDemo:
        case Recipe::kBand2DDemo:
            for (auto d : dgps) {
                if (!is_classification(d)) fail("classification demos need BAND2D_CLASS or SPHERE3D_CLASS");
            }
            if (!maxnodes) fail("classification demos need a bounded maxnodes for the TRIM model");
            break;
    }
}

// ---------------------------------------------------------------------------
// Campaign plumbing

namespace {

using Row = std::vector<std::string>;

enum StreamTag : std::uint64_t { kDataTag = 1, kSplitTag = 2, kModelTag = 3, kDofTag = 4, kTestTag = 5 };

std::uint64_t bits_of(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, sizeof b);
    return b;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt_maxnodes(std::optional<std::size_t> m) { return m ? std::to_string(*m) : "none"; }

/// Grid coordinates of one unit. Fields a recipe does not iterate stay 0.
struct Point {
    std::size_t dgp = 0, n = 0, snr = 0, extra = 0, mtry = 0, trial = 0;
};

/// Mixed-radix enumeration; later axes vary fastest.
struct Grid {
    std::vector<std::pair<std::size_t Point::*, std::size_t>> axes;

    std::size_t size() const {
        std::size_t s = 1;
        for (const auto& a : axes) s *= a.second;
        return s;
    }
    Point at(std::size_t index) const {
        Point p;
        for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
            p.*(it->first) = index % it->second;
            index /= it->second;
        }
        return p;
    }
};

struct UnitOutput {
    std::vector<Row> rows;
};

struct Plan {
    std::vector<std::string> columns;  // after config_hash, unit
    Grid grid;
    std::size_t rows_per_unit = 1;
    std::function<void(std::size_t workers)> prepare;  // runs once before pending units
    std::function<UnitOutput(std::size_t unit)> run_unit;
    std::function<void()> finalize;  // runs when every unit is complete
};

ForestConfig make_forest(const ExperimentConfig& c, Task task, double mtry, std::optional<std::size_t> maxnodes,
                         std::uint64_t seed) {
    ForestConfig f;
    f.n_trees = c.n_trees;
    f.tree.task = task;
    f.tree.mtry = mtry;
    f.tree.max_leaf_nodes = maxnodes;
    f.tree.min_samples_leaf = c.min_samples_leaf;
    f.tree.min_samples_split = c.min_samples_split;
    f.master_seed = seed;
    return f;
}

std::uint64_t stream_key(const ExperimentConfig& c, std::initializer_list<std::uint64_t> path) {
    return RngStream(c.master_seed, std::vector<std::uint64_t>(path)).key();
}

struct SplitData {
    GeneratedData generated;
    Dataset train;
    Dataset test;
};

/// Generates a dataset for a unit and splits it 50-50 (or train_fraction).
SplitData generate_split(const ExperimentConfig& c, DgpName dgp, std::size_t n, double snr,
                         std::size_t extra, std::size_t trial, std::uint64_t& seed_out) {
    const std::uint64_t data_seed = stream_key(
        c, {static_cast<std::uint64_t>(c.recipe), kDataTag, static_cast<std::uint64_t>(dgp), n, bits_of(snr), extra, trial});
    seed_out = data_seed;
    DgpSpec spec;
    spec.name = dgp;
    spec.n = n;
    spec.snr = snr;
    spec.extra_noise_features = extra;
    spec.seed = data_seed;
    GeneratedData g = generate(spec);
    RngStream split_rng(c.master_seed, {static_cast<std::uint64_t>(c.recipe), kSplitTag, data_seed});
    const auto split = train_test_split(g.dataset, c.train_fraction, split_rng);
    Dataset train = g.dataset.subset(split.train);
    Dataset test = g.dataset.subset(split.test);
    return SplitData{std::move(g), std::move(train), std::move(test)};
}

std::uint64_t model_seed(const ExperimentConfig& c, std::uint64_t data_seed, std::uint64_t model, double mtry) {
    return stream_key(c, {static_cast<std::uint64_t>(c.recipe), kModelTag, data_seed, model, bits_of(mtry)});
}

struct Fitted {
    double train_mse;
    double test_mse;
    std::vector<double> train_pred;
    std::vector<double> test_pred;
    Forest forest;
};

Fitted fit_and_score(const Dataset& train, const Dataset& test, const ForestConfig& config) {
    Forest forest = fit_forest(train, config);
    auto train_pred = forest.predict(train);
    auto test_pred = forest.predict(test);
    const double tr = mse(train_pred, train.response());
    const double te = mse(test_pred, test.response());
    return Fitted{tr, te, std::move(train_pred), std::move(test_pred), std::move(forest)};
}

std::string mtry_label(double mtry) { return "mtry" + fmt(mtry); }

// ----- TRIM vs SFS and SNR sweeps -----------------------------------------

const std::vector<std::string> kCompareColumns = {
    "dgp", "n", "snr", "extra_noise_features", "trial", "seed", "model", "mtry", "ref_mtry", "maxnodes",
    "dof", "train_mse", "test_mse", "err_diff", "pct_test_decrease", "pct_train_decrease"};

struct TrimMatch {
    std::size_t maxnodes = 0;
    double target = std::nan("");
    double dof = std::nan("");
};

Plan compare_plan(const ExperimentConfig& c, const std::string& dir, bool with_trim) {
    Plan plan;
    plan.columns = kCompareColumns;
    plan.grid.axes = {{&Point::dgp, c.dgps.size()},   {&Point::n, c.ns.size()},
                      {&Point::snr, c.snrs.size()},   {&Point::extra, c.extra_noise_features.size()},
                      {&Point::trial, c.trials}};
    plan.rows_per_unit = 1 + c.mtrys.size() * (with_trim ? 2 : 1);

    // (dgp, n, snr, extra, mtry) -> matched TRIM maxnodes.
    auto matches = std::make_shared<std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t>, TrimMatch>>();

    if (with_trim) {
        plan.prepare = [c, dir, matches](std::size_t workers) {
            const std::string path = dir + "/dof.csv";
            const std::vector<std::string> header = {"config_hash", "dgp", "n", "snr", "extra_noise_features",
                                                     "model", "mtry", "ref_mtry", "maxnodes", "replications",
                                                     "dof", "standard_error", "chosen", "monotone"};
            const std::string hash = c.hash();
            if (fs::exists(path)) {
                const auto table = read_csv(path);
                if (table.header == header) {
                    bool ok = true;
                    for (const auto& row : table.rows) ok = ok && row[0] == hash;
                    if (!ok) throw std::runtime_error(path + ": rows from a different configuration");
                    std::map<std::tuple<std::string, std::string, std::string, std::string, std::string>, TrimMatch> found;
                    for (const auto& row : table.rows) {
                        if (row[5] == "sfs") found[{row[1], row[2], row[3], row[4], row[6]}].target = parse_double(row[10]);
                        if (row[5] == "trim" && row[12] == "1") {
                            auto& m = found[{row[1], row[2], row[3], row[4], row[7]}];
                            m.maxnodes = std::stoull(row[8]);
                            m.dof = parse_double(row[10]);
                        }
                    }
                    for (std::size_t d = 0; d < c.dgps.size(); ++d)
                        for (std::size_t ni = 0; ni < c.ns.size(); ++ni)
                            for (std::size_t s = 0; s < c.snrs.size(); ++s)
                                for (std::size_t e = 0; e < c.extra_noise_features.size(); ++e)
                                    for (std::size_t m = 0; m < c.mtrys.size(); ++m) {
                                        auto it = found.find({to_string(c.dgps[d]), fmt(c.ns[ni]), fmt(c.snrs[s]),
                                                              fmt(c.extra_noise_features[e]), fmt(c.mtrys[m])});
                                        if (it != found.end() && it->second.maxnodes > 0) (*matches)[{d, ni, s, e, m}] = it->second;
                                    }
                    const std::size_t expected =
                        c.dgps.size() * c.ns.size() * c.snrs.size() * c.extra_noise_features.size() * c.mtrys.size();
                    if (matches->size() == expected) return;
                    matches->clear();
                }
            }
            struct Job {
                std::size_t d, ni, s, e, m;
            };
            std::vector<Job> jobs;
            for (std::size_t d = 0; d < c.dgps.size(); ++d)
                for (std::size_t ni = 0; ni < c.ns.size(); ++ni)
                    for (std::size_t s = 0; s < c.snrs.size(); ++s)
                        for (std::size_t e = 0; e < c.extra_noise_features.size(); ++e)
                            for (std::size_t m = 0; m < c.mtrys.size(); ++m) jobs.push_back({d, ni, s, e, m});
            std::vector<std::vector<Row>> job_rows(jobs.size());
            std::vector<TrimMatch> job_match(jobs.size());
            parallel_for(jobs.size(), workers, [&](std::size_t k) {
                const Job& job = jobs[k];
                const DgpName dgp = c.dgps[job.d];
                const double snr = c.snrs[job.s];
                const std::size_t n_train =
                    static_cast<std::size_t>(std::llround(c.train_fraction * static_cast<double>(c.ns[job.ni])));
                const std::uint64_t design_seed =
                    stream_key(c, {static_cast<std::uint64_t>(c.recipe), kDofTag, static_cast<std::uint64_t>(dgp),
                                   c.ns[job.ni], bits_of(snr), c.extra_noise_features[job.e]});
                DgpSpec spec;
                spec.name = dgp;
                spec.n = n_train;
                spec.snr = snr;
                spec.extra_noise_features = c.extra_noise_features[job.e];
                spec.seed = design_seed;
                const Dataset design = sample_noiseless(spec);
                const double sigma2 = calibrate_sigma2(dgp, snr);
                const RngStream noise_root(design_seed);
                const double mtry = c.mtrys[job.m];

                const auto sfs = effective_dof(
                    forest_procedure(make_forest(c, Task::kRegression, mtry, c.maxnodes, 0)), design, sigma2,
                    c.dof_replications, noise_root);
                TrimDofContext ctx{design, sigma2, c.n_trees, c.min_samples_leaf, c.min_samples_split, design_seed, 1};
                DofMatch match;
                try {
                    match = match_trim_dof(sfs.dof, ctx, c.maxnodes_grid, c.dof_replications);
                } catch (const std::exception& e) {
                    std::ostringstream msg;
                    msg << "DoF matching failed for " << to_string(dgp) << " n=" << c.ns[job.ni] << " snr=" << snr
                        << " mtry=" << mtry << ": " << e.what();
                    throw std::runtime_error(msg.str());
                }
                const Row key = {to_string(dgp), fmt(c.ns[job.ni]), fmt(snr), fmt(c.extra_noise_features[job.e])};
                auto row = [&](const std::string& model, double m, std::size_t maxnodes_value, bool bounded,
                               const DofEstimate& est, bool chosen) {
                    Row r = {c.hash()};
                    r.insert(r.end(), key.begin(), key.end());
                    r.insert(r.end(), {model, fmt(m), fmt(mtry), bounded ? fmt(maxnodes_value) : "none",
                                       fmt(est.replications), fmt(est.dof), fmt(est.standard_error),
                                       chosen ? "1" : "0", match.monotone ? "1" : "0"});
                    return r;
                };
                job_rows[k].push_back(row("sfs", mtry, c.maxnodes.value_or(0), c.maxnodes.has_value(), sfs, false));
                for (const auto& [value, est] : match.audit) {
                    job_rows[k].push_back(row("trim", 1.0, value, true, est, value == match.maxnodes));
                }
                double chosen_dof = std::nan("");
                for (const auto& [value, est] : match.audit) {
                    if (value == match.maxnodes) chosen_dof = est.dof;
                }
                job_match[k] = TrimMatch{match.maxnodes, sfs.dof, chosen_dof};
            });
            CsvWriter writer(path, header);
            for (std::size_t k = 0; k < jobs.size(); ++k) {
                for (const auto& r : job_rows[k]) writer.write_row(r);
                (*matches)[{jobs[k].d, jobs[k].ni, jobs[k].s, jobs[k].e, jobs[k].m}] = job_match[k];
            }
            writer.close();
        };
    }

    plan.run_unit = [c, plan_grid = plan.grid, with_trim, matches](std::size_t unit) {
        const Point pt = plan_grid.at(unit);
        const DgpName dgp = c.dgps[pt.dgp];
        const std::size_t n = c.ns[pt.n];
        const double snr = c.snrs[pt.snr];
        const std::size_t extra = c.extra_noise_features[pt.extra];
        std::uint64_t seed = 0;
        const SplitData data = generate_split(c, dgp, n, snr, extra, pt.trial, seed);

        const auto bag = fit_and_score(data.train, data.test,
                                       make_forest(c, Task::kRegression, 1.0, c.maxnodes, model_seed(c, seed, 0, 1.0)));
        UnitOutput out;
        auto emit = [&](const std::string& model, double mtry, double ref_mtry, std::optional<std::size_t> maxnodes,
                        double dof, double train_mse, double test_mse) {
            out.rows.push_back({to_string(dgp), fmt(n), fmt(snr), fmt(extra), fmt(pt.trial), std::to_string(seed),
                                model, fmt(mtry), fmt(ref_mtry), fmt_maxnodes(maxnodes), fmt(dof), fmt(train_mse),
                                fmt(test_mse), fmt(bag.test_mse - test_mse),
                                fmt(percent_decrease(bag.test_mse, test_mse)),
                                fmt(percent_decrease(bag.train_mse, train_mse))});
        };
        const double nan = std::nan("");
        emit("bagging", 1.0, 1.0, c.maxnodes, nan, bag.train_mse, bag.test_mse);
        for (std::size_t m = 0; m < c.mtrys.size(); ++m) {
            const double mtry = c.mtrys[m];
            const auto sfs = fit_and_score(data.train, data.test,
                                           make_forest(c, Task::kRegression, mtry, c.maxnodes, model_seed(c, seed, 1, mtry)));
            const TrimMatch match = with_trim ? matches->at({pt.dgp, pt.n, pt.snr, pt.extra, m}) : TrimMatch{};
            emit("sfs", mtry, mtry, c.maxnodes, match.target, sfs.train_mse, sfs.test_mse);
            if (with_trim) {
                const std::size_t trim_nodes = match.maxnodes;
                const auto trim = fit_and_score(
                    data.train, data.test, make_forest(c, Task::kRegression, 1.0, trim_nodes, model_seed(c, seed, 2, mtry)));
                emit("trim", 1.0, mtry, trim_nodes, match.dof, trim.train_mse, trim.test_mse);
            }
        }
        return out;
    };
    return plan;
}

// ----- Hidden2D single runs ---------------------------------------------------

const std::vector<std::string> kSingleColumns = {
    "dgp", "n", "snr", "trial", "seed", "model", "mtry", "maxnodes", "train_mse", "test_mse",
    "pct_test_decrease", "pct_train_decrease", "band_train_mse", "offband_train_mse", "band_test_mse",
    "offband_test_mse"};

bool in_band(double x2) { return x2 >= 0.6 && x2 <= 0.65; }

Plan hidden2d_single_plan(const ExperimentConfig& c, const std::string& dir) {
    Plan plan;
    plan.columns = kSingleColumns;
    plan.grid.axes = {{&Point::dgp, c.dgps.size()}, {&Point::n, c.ns.size()}, {&Point::snr, c.snrs.size()},
                      {&Point::trial, c.trials}};
    plan.rows_per_unit = 1 + c.mtrys.size();
    plan.prepare = [dir](std::size_t) {
        fs::create_directories(dir + "/points");
        fs::create_directories(dir + "/trees");
    };
    plan.run_unit = [c, dir, grid = plan.grid](std::size_t unit) {
        const Point pt = grid.at(unit);
        const DgpName dgp = c.dgps[pt.dgp];
        const std::size_t n = c.ns[pt.n];
        const double snr = c.snrs[pt.snr];
        std::uint64_t seed = 0;
        const SplitData data = generate_split(c, dgp, n, snr, 0, pt.trial, seed);

        struct Model {
            std::string name;
            double mtry;
            Fitted fit;
        };
        std::vector<Model> models;
        models.push_back({"bagging", 1.0,
                          fit_and_score(data.train, data.test,
                                        make_forest(c, Task::kRegression, 1.0, c.maxnodes, model_seed(c, seed, 0, 1.0)))});
        for (double mtry : c.mtrys) {
            models.push_back({"sfs", mtry,
                              fit_and_score(data.train, data.test,
                                            make_forest(c, Task::kRegression, mtry, c.maxnodes, model_seed(c, seed, 1, mtry)))});
        }

        auto band_means = [](const Dataset& d, const std::vector<double>& pred) {
            double in_sum = 0, out_sum = 0;
            std::size_t in_n = 0, out_n = 0;
            for (std::size_t i = 0; i < d.n(); ++i) {
                const double e = (pred[i] - d.response()[i]) * (pred[i] - d.response()[i]);
                if (in_band(d.feature(i, 1))) {
                    in_sum += e;
                    ++in_n;
                } else {
                    out_sum += e;
                    ++out_n;
                }
            }
            const double nan = std::nan("");
            return std::pair{in_n ? in_sum / static_cast<double>(in_n) : nan,
                             out_n ? out_sum / static_cast<double>(out_n) : nan};
        };

        UnitOutput out;
        const auto& bag = models.front().fit;
        for (const auto& m : models) {
            const auto [band_tr, off_tr] = band_means(data.train, m.fit.train_pred);
            const auto [band_te, off_te] = band_means(data.test, m.fit.test_pred);
            out.rows.push_back({to_string(dgp), fmt(n), fmt(snr), fmt(pt.trial), std::to_string(seed), m.name,
                                fmt(m.mtry), fmt_maxnodes(c.maxnodes), fmt(m.fit.train_mse), fmt(m.fit.test_mse),
                                fmt(percent_decrease(bag.test_mse, m.fit.test_mse)),
                                fmt(percent_decrease(bag.train_mse, m.fit.train_mse)), fmt(band_tr), fmt(off_tr),
                                fmt(band_te), fmt(off_te)});
        }

        // Per-point squared errors for every train and test row.
        std::ostringstream stem;
        stem << to_string(dgp) << "_n" << n << "_snr" << fmt(snr) << "_trial" << pt.trial;
        std::vector<std::string> header = {"set"};
        for (const auto& name : data.train.feature_names()) header.push_back(name);
        header.insert(header.end(), {"y", "f_true"});
        for (const auto& m : models) {
            const std::string label = m.name == "bagging" ? "bagging" : "sfs_" + mtry_label(m.mtry);
            header.push_back("pred_" + label);
            header.push_back("sq_err_" + label);
        }
        CsvWriter points(dir + "/points/" + stem.str() + ".csv", header);
        auto dump = [&](const Dataset& d, const char* set, bool train) {
            for (std::size_t i = 0; i < d.n(); ++i) {
                Row r = {set};
                for (std::size_t j = 0; j < d.p(); ++j) r.push_back(fmt(d.feature(i, j)));
                r.push_back(fmt(d.response()[i]));
                r.push_back(fmt((*d.truth())[i]));
                for (const auto& m : models) {
                    const double pred = train ? m.fit.train_pred[i] : m.fit.test_pred[i];
                    r.push_back(fmt(pred));
                    r.push_back(fmt((pred - d.response()[i]) * (pred - d.response()[i])));
                }
                points.write_row(r);
            }
        };
        dump(data.train, "train", true);
        dump(data.test, "test", false);
        points.close();

        if (pt.trial == 0) {
            for (const auto& m : models) {
                const std::string label = m.name == "bagging" ? "bagging" : "sfs_" + mtry_label(m.mtry);
                write_file_atomic(dir + "/trees/" + stem.str() + "_" + label + ".txt",
                                  m.fit.forest.trees().front().serialize());
            }
        }
        return out;
    };
    return plan;
}

// ----- Bias-variance sweeps ---------------------------------------------------

const std::vector<std::string> kBvdColumns = {
    "dgp", "n", "snr", "extra_noise_features", "mtry", "maxnodes", "trial", "seed", "train_mse", "test_mse_truth"};

const std::vector<std::string> kDecompositionColumns = {
    "config_hash", "dgp", "n", "snr", "extra_noise_features", "mtry", "maxnodes", "trials",
    "bias2", "variance", "noise", "total_mse"};

Dataset bvd_test_set(const ExperimentConfig& c, DgpName dgp, std::size_t extra) {
    DgpSpec spec;
    spec.name = dgp;
    spec.n = c.test_points;
    spec.snr = 1.0;
    spec.extra_noise_features = extra;
    spec.seed = stream_key(c, {static_cast<std::uint64_t>(c.recipe), kTestTag, static_cast<std::uint64_t>(dgp), extra});
    return sample_noiseless(spec);
}

void write_doubles(const std::string& path, const std::vector<double>& values) {
    std::string bytes(values.size() * sizeof(double), '\0');
    std::memcpy(bytes.data(), values.data(), bytes.size());
    write_file_atomic(path, bytes);
}

std::vector<double> read_doubles(const std::string& path, std::size_t count) {
    const std::string bytes = read_file(path);
    if (bytes.size() != count * sizeof(double)) throw std::runtime_error(path + ": unexpected size");
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data(), bytes.size());
    return values;
}

Plan bvd_plan(const ExperimentConfig& c, const std::string& dir) {
    Plan plan;
    plan.columns = kBvdColumns;
    plan.grid.axes = {{&Point::dgp, c.dgps.size()}, {&Point::n, c.ns.size()},
                      {&Point::snr, c.snrs.size()}, {&Point::extra, c.extra_noise_features.size()},
                      {&Point::mtry, c.mtrys.size()}, {&Point::trial, c.trials}};
    plan.rows_per_unit = 1;

    auto tests = std::make_shared<std::map<std::pair<std::size_t, std::size_t>, Dataset>>();
    auto ensure_tests = [c, tests] {
        if (!tests->empty()) return;
        for (std::size_t d = 0; d < c.dgps.size(); ++d)
            for (std::size_t e = 0; e < c.extra_noise_features.size(); ++e)
                tests->emplace(std::pair{d, e}, bvd_test_set(c, c.dgps[d], c.extra_noise_features[e]));
    };
    plan.prepare = [dir, ensure_tests](std::size_t) {
        fs::create_directories(dir + "/preds");
        ensure_tests();
    };
    plan.run_unit = [c, dir, grid = plan.grid, tests](std::size_t unit) {
        const Point pt = grid.at(unit);
        const DgpName dgp = c.dgps[pt.dgp];
        const std::size_t n = c.ns[pt.n];
        const double snr = c.snrs[pt.snr];
        const std::size_t extra = c.extra_noise_features[pt.extra];
        const double mtry = c.mtrys[pt.mtry];
        const std::size_t n_train = static_cast<std::size_t>(std::llround(c.train_fraction * static_cast<double>(n)));
        // The training draw ignores mtry: every mtry sees the same training sets.
        const std::uint64_t seed = stream_key(
            c, {static_cast<std::uint64_t>(c.recipe), kDataTag, static_cast<std::uint64_t>(dgp), n, bits_of(snr), extra, pt.trial});
        DgpSpec spec;
        spec.name = dgp;
        spec.n = n_train;
        spec.snr = snr;
        spec.extra_noise_features = extra;
        spec.seed = seed;
        const GeneratedData g = generate(spec);
        const Dataset& test = tests->at({pt.dgp, pt.extra});
        const Forest forest = fit_forest(g.dataset, make_forest(c, Task::kRegression, mtry, c.maxnodes,
                                                                model_seed(c, seed, 1, mtry)));
        const auto train_pred = forest.predict(g.dataset);
        const auto test_pred = forest.predict(test);
        write_doubles(dir + "/preds/u" + std::to_string(unit) + ".bin", test_pred);
        UnitOutput out;
        out.rows.push_back({to_string(dgp), fmt(n), fmt(snr), fmt(extra), fmt(mtry), fmt_maxnodes(c.maxnodes),
                            fmt(pt.trial), std::to_string(seed), fmt(mse(train_pred, g.dataset.response())),
                            fmt(mse(test_pred, *test.truth()))});
        return out;
    };
    plan.finalize = [c, dir, grid = plan.grid, tests, ensure_tests] {
        ensure_tests();
        CsvWriter writer(dir + "/decomposition.csv", kDecompositionColumns);
        const std::size_t points = grid.size() / c.trials;
        for (std::size_t k = 0; k < points; ++k) {
            const std::size_t first = k * c.trials;
            const Point pt = grid.at(first);
            const Dataset& test = tests->at({pt.dgp, pt.extra});
            std::vector<std::vector<double>> preds;
            for (std::size_t t = 0; t < c.trials; ++t) {
                preds.push_back(read_doubles(dir + "/preds/u" + std::to_string(first + t) + ".bin", test.n()));
            }
            const DgpName dgp = c.dgps[pt.dgp];
            const double snr = c.snrs[pt.snr];
            const auto dec = bias_variance_decompose(preds, *test.truth(), calibrate_sigma2(dgp, snr));
            writer.write_row({c.hash(), to_string(dgp), fmt(c.ns[pt.n]), fmt(snr), fmt(c.extra_noise_features[pt.extra]),
                              fmt(c.mtrys[pt.mtry]), fmt_maxnodes(c.maxnodes), fmt(c.trials), fmt(dec.bias2),
                              fmt(dec.variance), fmt(dec.noise), fmt(dec.total_mse)});
        }
        writer.close();
    };
    return plan;
}

// ----- First-use depth --------------------------------------------------------

const std::vector<std::string> kDepthColumns = {
    "dgp", "n", "snr", "extra_noise_features", "mtry", "trial", "seed", "feature", "group",
    "mean_first_depth", "usage_fraction"};

std::string feature_group(DgpName dgp, std::size_t j) {
    const auto hidden = hidden_pattern_features(dgp);
    if (std::find(hidden.begin(), hidden.end(), j) != hidden.end()) return "hidden";
    if (j < base_dimension(dgp)) return "smooth";
    return "noise";
}

Plan first_depth_plan(const ExperimentConfig& c) {
    Plan plan;
    plan.columns = kDepthColumns;
    plan.grid.axes = {{&Point::dgp, c.dgps.size()}, {&Point::n, c.ns.size()},
                      {&Point::snr, c.snrs.size()}, {&Point::extra, c.extra_noise_features.size()},
                      {&Point::mtry, c.mtrys.size()}, {&Point::trial, c.trials}};
    // Rows per unit depend on p, which varies with the noise-feature axis;
    // plan-level width is checked per unit below.
    plan.rows_per_unit = 0;
    plan.run_unit = [c, grid = plan.grid](std::size_t unit) {
        const Point pt = grid.at(unit);
        const DgpName dgp = c.dgps[pt.dgp];
        const std::size_t n = c.ns[pt.n];
        const double snr = c.snrs[pt.snr];
        const std::size_t extra = c.extra_noise_features[pt.extra];
        const double mtry = c.mtrys[pt.mtry];
        std::uint64_t seed = 0;
        const SplitData data = generate_split(c, dgp, n, snr, extra, pt.trial, seed);
        const Forest forest =
            fit_forest(data.train, make_forest(c, Task::kRegression, mtry, c.maxnodes, model_seed(c, seed, 1, mtry)));
        UnitOutput out;
        for (std::size_t j = 0; j < forest.p(); ++j) {
            const auto s = average_first_depth(forest, j);
            out.rows.push_back({to_string(dgp), fmt(n), fmt(snr), fmt(extra), fmt(mtry), fmt(pt.trial),
                                std::to_string(seed), data.train.feature_names()[j], feature_group(dgp, j),
                                s.mean_depth ? fmt(*s.mean_depth) : "nan", fmt(s.usage_fraction)});
        }
        return out;
    };
    return plan;
}

// ----- Classification demos -----------------------------------------------------

const std::vector<std::string> kDemoColumns = {
    "dgp", "n", "trial", "seed", "model", "mtry", "maxnodes", "train_accuracy", "bayes_agreement",
    "band_positive_fraction"};

Plan demo_plan(const ExperimentConfig& c, const std::string& dir) {
    Plan plan;
    plan.columns = kDemoColumns;
    plan.grid.axes = {{&Point::dgp, c.dgps.size()}, {&Point::n, c.ns.size()}, {&Point::trial, c.trials}};
    plan.rows_per_unit = 2 + c.mtrys.size();
    plan.prepare = [dir](std::size_t) { fs::create_directories(dir + "/grids"); };
    plan.run_unit = [c, dir, grid = plan.grid](std::size_t unit) {
        const Point pt = grid.at(unit);
        const DgpName dgp = c.dgps[pt.dgp];
        const std::size_t n = c.ns[pt.n];
        const std::uint64_t seed = stream_key(
            c, {static_cast<std::uint64_t>(c.recipe), kDataTag, static_cast<std::uint64_t>(dgp), n, pt.trial});
        DgpSpec spec;
        spec.name = dgp;
        spec.n = n;
        spec.seed = seed;
        const GeneratedData g = generate(spec);

        // Evaluation points: a res x res lattice of cell centres in 2D,
        // the generated points themselves otherwise.
        Dataset eval = g.dataset;
        if (base_dimension(dgp) == 2) {
            const std::size_t res = c.grid_resolution;
            std::vector<double> values(res * res * 2);
            std::vector<double> prob(res * res);
            const std::size_t m = res * res;
            for (std::size_t a = 0; a < res; ++a) {
                for (std::size_t b = 0; b < res; ++b) {
                    const std::size_t i = a * res + b;
                    values[i] = (static_cast<double>(b) + 0.5) / static_cast<double>(res);
                    values[m + i] = (static_cast<double>(a) + 0.5) / static_cast<double>(res);
                    prob[i] = eval_truth(dgp, std::vector<double>{values[i], values[m + i]});
                }
            }
            eval = Dataset(m, 2, std::move(values), prob, prob);
        }

        struct Model {
            std::string name;
            double mtry;
            std::optional<std::size_t> maxnodes;
            Forest forest;
        };
        std::vector<Model> models;
        models.push_back({"bagging", 1.0, std::nullopt,
                          fit_forest(g.dataset, make_forest(c, Task::kClassification, 1.0, std::nullopt,
                                                            model_seed(c, seed, 0, 1.0)))});
        models.push_back({"trim", 1.0, c.maxnodes,
                          fit_forest(g.dataset, make_forest(c, Task::kClassification, 1.0, c.maxnodes,
                                                            model_seed(c, seed, 2, 1.0)))});
        for (double mtry : c.mtrys) {
            models.push_back({"sfs", mtry, std::nullopt,
                              fit_forest(g.dataset, make_forest(c, Task::kClassification, mtry, std::nullopt,
                                                                model_seed(c, seed, 1, mtry)))});
        }

        std::vector<std::string> header;
        for (std::size_t j = 0; j < eval.p(); ++j) header.push_back(eval.feature_names()[j]);
        header.insert(header.end(), {"y", "p_true"});
        std::vector<std::vector<double>> preds;
        UnitOutput out;
        for (const auto& m : models) {
            header.push_back("pred_" + (m.name == "sfs" ? "sfs_" + mtry_label(m.mtry) : m.name));
            auto train_pred = m.forest.predict(g.dataset);
            auto pred = m.forest.predict(eval);
            std::size_t train_hits = 0;
            for (std::size_t i = 0; i < g.dataset.n(); ++i) train_hits += train_pred[i] == g.dataset.response()[i];
            std::size_t bayes_hits = 0, band_total = 0, band_positive = 0;
            for (std::size_t i = 0; i < eval.n(); ++i) {
                const double bayes = (*eval.truth())[i] > 0.5 ? 1.0 : 0.0;
                bayes_hits += pred[i] == bayes;
                if (dgp == DgpName::kBand2DClass && in_band(eval.feature(i, 1))) {
                    ++band_total;
                    band_positive += pred[i] == 1.0;
                }
            }
            out.rows.push_back({to_string(dgp), fmt(n), fmt(pt.trial), std::to_string(seed), m.name, fmt(m.mtry),
                                fmt_maxnodes(m.maxnodes),
                                fmt(static_cast<double>(train_hits) / static_cast<double>(g.dataset.n())),
                                fmt(static_cast<double>(bayes_hits) / static_cast<double>(eval.n())),
                                band_total ? fmt(static_cast<double>(band_positive) / static_cast<double>(band_total))
                                           : "nan"});
            preds.push_back(std::move(pred));
        }
        std::ostringstream name;
        name << dir << "/grids/" << to_string(dgp) << "_n" << n << "_trial" << pt.trial << ".csv";
        CsvWriter writer(name.str(), header);
        for (std::size_t i = 0; i < eval.n(); ++i) {
            Row r;
            for (std::size_t j = 0; j < eval.p(); ++j) r.push_back(fmt(eval.feature(i, j)));
            r.push_back(base_dimension(dgp) == 2 ? "nan" : fmt(eval.response()[i]));
            r.push_back(fmt((*eval.truth())[i]));
            for (const auto& p : preds) r.push_back(fmt(p[i]));
            writer.write_row(r);
        }
        writer.close();
        return out;
    };
    return plan;
}

Plan make_plan(const ExperimentConfig& c, const std::string& dir) {
    switch (c.recipe) {
        case Recipe::kTrimVsSfs: return compare_plan(c, dir, true);
        case Recipe::kHidden2DSweep:
        case Recipe::kHMarsSweep: return compare_plan(c, dir, false);
        case Recipe::kHidden2DSingle: return hidden2d_single_plan(c, dir);
        case Recipe::kBvdSweep:
        case Recipe::kMtryNoiseFeatures: return bvd_plan(c, dir);
        case Recipe::kFirstDepth: return first_depth_plan(c);
        case Recipe::kSphereDemo:
        case Recipe::kBand2DDemo: return demo_plan(c, dir);
    }
    throw std::logic_error("unknown recipe");
}

std::size_t expected_rows(const ExperimentConfig& c, const Plan& plan, std::size_t unit) {
    if (plan.rows_per_unit > 0) return plan.rows_per_unit;
    // FIRST_DEPTH: one row per feature.
    const Point pt = plan.grid.at(unit);
    return base_dimension(c.dgps[pt.dgp]) + c.extra_noise_features[pt.extra];
}

}  // namespace

std::vector<std::string> results_columns(Recipe recipe) {
    std::vector<std::string> cols = {"config_hash", "unit"};
    const std::vector<std::string>* body = nullptr;
    switch (recipe) {
        case Recipe::kTrimVsSfs:
        case Recipe::kHidden2DSweep:
        case Recipe::kHMarsSweep: body = &kCompareColumns; break;
        case Recipe::kHidden2DSingle: body = &kSingleColumns; break;
        case Recipe::kBvdSweep:
        case Recipe::kMtryNoiseFeatures: body = &kBvdColumns; break;
        case Recipe::kFirstDepth: body = &kDepthColumns; break;
        case Recipe::kSphereDemo:
        case Recipe::kBand2DDemo: body = &kDemoColumns; break;
    }
    cols.insert(cols.end(), body->begin(), body->end());
    return cols;
}

void validate_results_csv(const std::string& path, Recipe recipe, const std::string& config_hash) {
    const auto table = read_csv(path);
    const auto columns = results_columns(recipe);
    if (table.header != columns) throw std::runtime_error(path + ": header does not match the " + to_string(recipe) + " schema");
    static const std::set<std::string> text_columns = {"config_hash", "dgp", "model", "group", "feature", "maxnodes",
                                                       "seed"};
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row[0] != config_hash) {
            throw std::runtime_error(path + ": row " + std::to_string(r + 1) + " has config hash " + row[0]);
        }
        for (std::size_t k = 1; k < row.size(); ++k) {
            if (text_columns.contains(columns[k])) continue;
            parse_double(row[k]);  // throws on malformed numbers
        }
    }
}

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    const std::string hash = config.hash();
    const fs::path dir = fs::path(config.output_dir) / to_string(config.recipe) / hash;
    fs::create_directories(dir);
    Plan plan = make_plan(config, dir.string());

    json manifest = {{"config", config.to_json()},
                     {"config_hash", hash},
                     {"version", build_version()},
                     {"master_seed", config.master_seed},
                     {"recipe", to_string(config.recipe)},
                     {"units", plan.grid.size()},
                     {"results", "results.csv"}};
    write_file_atomic((dir / "manifest.json").string(), manifest.dump(2) + "\n");

    const std::string results_path = (dir / "results.csv").string();
    const auto columns = results_columns(config.recipe);
    const std::size_t total = plan.grid.size();
    std::vector<bool> done(total, false);

    if (fs::exists(results_path)) {
        if (!options.resume) {
            throw std::runtime_error(results_path + " already exists; rerun with resume to continue it");
        }
        const auto table = read_csv(results_path);
        if (table.header != columns) throw std::runtime_error(results_path + ": header does not match recipe schema");
        std::map<std::size_t, std::vector<const Row*>> by_unit;
        for (const auto& row : table.rows) {
            if (row[0] != hash) throw std::runtime_error(results_path + ": rejecting rows from config " + row[0]);
            const std::size_t unit = std::stoull(row[1]);
            if (unit >= total) throw std::runtime_error(results_path + ": unit index out of range");
            by_unit[unit].push_back(&row);
        }
        // Keep only complete units; a crash can leave the last one partial.
        std::string kept = join_csv(columns) + "\n";
        bool dropped = false;
        for (const auto& [unit, rows] : by_unit) {
            if (rows.size() == expected_rows(config, plan, unit)) {
                done[unit] = true;
                for (const Row* r : rows) kept += join_csv(*r) + "\n";
            } else {
                dropped = true;
            }
        }
        if (dropped) write_file_atomic(results_path, kept);
    } else {
        write_file_atomic(results_path, join_csv(columns) + "\n");
    }

    std::vector<std::size_t> pending;
    for (std::size_t u = 0; u < total; ++u) {
        if (!done[u]) pending.push_back(u);
    }
    RunSummary summary;
    summary.directory = dir.string();
    summary.units_total = total;
    summary.units_skipped = total - pending.size();
    if (options.max_units && pending.size() > *options.max_units) pending.resize(*options.max_units);

    if (!pending.empty()) {
        if (plan.prepare) plan.prepare(options.workers);
        std::ofstream results(results_path, std::ios::binary | std::ios::app);
        std::ofstream timings((dir / "timings.csv").string(), std::ios::binary | std::ios::app);
        if (!results || !timings) throw std::runtime_error("cannot append to " + results_path);

        // Ordered commit: units finish in any order but are appended in
        // canonical order, so the table never depends on the worker count.
        std::mutex commit_mutex;
        std::map<std::size_t, std::pair<UnitOutput, double>> ready;
        std::size_t next_commit = 0;
        parallel_for(pending.size(), options.workers, [&](std::size_t k) {
            const std::size_t unit = pending[k];
            const auto start = std::chrono::steady_clock::now();
            UnitOutput out = plan.run_unit(unit);
            const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (out.rows.size() != expected_rows(config, plan, unit)) {
                throw std::logic_error("recipe produced an unexpected number of rows");
            }
            std::lock_guard lock(commit_mutex);
            ready.emplace(k, std::pair{std::move(out), seconds});
            while (!ready.empty() && ready.begin()->first == next_commit) {
                auto node = ready.extract(ready.begin());
                const std::size_t u = pending[node.key()];
                std::string block;
                for (const auto& row : node.mapped().first.rows) {
                    Row full = {hash, std::to_string(u)};
                    full.insert(full.end(), row.begin(), row.end());
                    block += join_csv(full) + "\n";
                }
                results << block;
                results.flush();
                timings << u << ',' << format_double(node.mapped().second) << '\n';
                ++next_commit;
                ++summary.units_run;
            }
        });
    }

    summary.complete = summary.units_skipped + summary.units_run == total;
    if (summary.complete) {
        // A resume that filled gaps leaves units out of order; restore the
        // canonical order so finished tables never depend on run history.
        const auto table = read_csv(results_path);
        const auto unit_of = [](const Row& r) { return std::stoull(r[1]); };
        const bool ordered = std::is_sorted(table.rows.begin(), table.rows.end(),
                                            [&](const Row& a, const Row& b) { return unit_of(a) < unit_of(b); });
        if (!ordered) {
            auto rows = table.rows;
            std::stable_sort(rows.begin(), rows.end(),
                             [&](const Row& a, const Row& b) { return unit_of(a) < unit_of(b); });
            std::string text = join_csv(columns) + "\n";
            for (const auto& r : rows) text += join_csv(r) + "\n";
            write_file_atomic(results_path, text);
        }
        if (plan.finalize) plan.finalize();
    }
    return summary;
}

RunSummary run_trim_vs_sfs(const ExperimentConfig& config, const RunOptions& options) {
    if (config.recipe != Recipe::kTrimVsSfs) throw std::invalid_argument("run_trim_vs_sfs: recipe must be TRIM_VS_SFS");
    return run_experiment(config, options);
}

RunSummary run_hidden2d_single(const ExperimentConfig& config, const RunOptions& options) {
    if (config.recipe != Recipe::kHidden2DSingle) {
        throw std::invalid_argument("run_hidden2d_single: recipe must be HIDDEN2D_SINGLE");
    }
    return run_experiment(config, options);
}

RunSummary run_snr_sweep(const ExperimentConfig& config, const RunOptions& options) {
    if (config.recipe != Recipe::kHidden2DSweep && config.recipe != Recipe::kHMarsSweep) {
        throw std::invalid_argument("run_snr_sweep: recipe must be HIDDEN2D_SWEEP or HMARS_SWEEP");
    }
    return run_experiment(config, options);
}

RunSummary run_bvd_sweep(const ExperimentConfig& config, const RunOptions& options) {
    if (config.recipe != Recipe::kBvdSweep && config.recipe != Recipe::kMtryNoiseFeatures) {
        throw std::invalid_argument("run_bvd_sweep: recipe must be BVD_SWEEP or MTRY_NOISE_FEATURES");
    }
    return run_experiment(config, options);
}

RunSummary run_first_depth(const ExperimentConfig& config, const RunOptions& options) {
    if (config.recipe != Recipe::kFirstDepth) throw std::invalid_argument("run_first_depth: recipe must be FIRST_DEPTH");
    return run_experiment(config, options);
}

RunSummary run_classification_demos(const ExperimentConfig& config, const RunOptions& options) {
    if (config.recipe != Recipe::kSphereDemo && config.recipe != Recipe::kBand2DDemo) {
        throw std::invalid_argument("run_classification_demos: recipe must be SPHERE_DEMO or BAND2D_DEMO");
    }
    return run_experiment(config, options);
}

}  // namespace forestlab
