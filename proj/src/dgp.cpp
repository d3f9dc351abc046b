#include "forestlab/dgp.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "forestlab/csv.hpp"

namespace forestlab {

namespace {

constexpr std::uint64_t kCalibrationSeed = 0x5eedca11b0a7ULL;

double indicator(double v, double lo, double hi) { return (lo <= v && v <= hi) ? 1.0 : 0.0; }

double mars(std::span<const double> x) {
    return 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) + 20.0 * (x[2] - 0.05) * (x[2] - 0.05) +
           10.0 * x[3] + 5.0 * x[4];
}

double mars_add(std::span<const double> x) {
    return 0.1 * std::exp(4.0 * x[0]) + 4.0 / (1.0 + std::exp(-20.0 * (x[1] - 0.5))) + 3.0 * x[2] +
           2.0 * x[3] + x[4];
}

struct DomainBounds {
    double lo;
    double hi;
};

DomainBounds base_domain(DgpName name) {
    if (name == DgpName::kSphere3DClass) return {-0.5, 1.5};
    return {0.0, 1.0};
}

}  // namespace

std::string to_string(DgpName name) {
    switch (name) {
        case DgpName::kMars: return "MARS";
        case DgpName::kMarsAdd: return "MARSADD";
        case DgpName::kHMars: return "HMARS";
        case DgpName::kHMarsAdd: return "HMARSADD";
        case DgpName::kHidden2D: return "HIDDEN2D";
        case DgpName::kBand2DClass: return "BAND2D_CLASS";
        case DgpName::kSphere3DClass: return "SPHERE3D_CLASS";
    }
    throw std::logic_error("unknown DgpName");
}

DgpName dgp_from_string(const std::string& text) {
    std::string upper;
    for (char c : text) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    for (auto name : {DgpName::kMars, DgpName::kMarsAdd, DgpName::kHMars, DgpName::kHMarsAdd,
                      DgpName::kHidden2D, DgpName::kBand2DClass, DgpName::kSphere3DClass}) {
        if (to_string(name) == upper) return name;
    }
    throw std::invalid_argument("unknown DGP '" + text +
                                "' (expected mars|marsadd|hmars|hmarsadd|hidden2d|band2d_class|sphere3d_class)");
}

bool is_classification(DgpName name) {
    return name == DgpName::kBand2DClass || name == DgpName::kSphere3DClass;
}

std::size_t base_dimension(DgpName name) {
    switch (name) {
        case DgpName::kMars:
        case DgpName::kMarsAdd: return 5;
        case DgpName::kHMars:
        case DgpName::kHMarsAdd: return 7;
        case DgpName::kHidden2D:
        case DgpName::kBand2DClass: return 2;
        case DgpName::kSphere3DClass: return 3;
    }
    throw std::logic_error("unknown DgpName");
}

std::vector<std::size_t> hidden_pattern_features(DgpName name) {
    switch (name) {
        case DgpName::kHMars:
        case DgpName::kHMarsAdd: return {5, 6};
        case DgpName::kHidden2D:
        case DgpName::kBand2DClass: return {1};
        default: return {};
    }
}

std::vector<std::size_t> smooth_features(DgpName name) {
    const auto hidden = hidden_pattern_features(name);
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < base_dimension(name); ++j) {
        if (std::find(hidden.begin(), hidden.end(), j) == hidden.end()) out.push_back(j);
    }
    return out;
}

double eval_truth(DgpName name, std::span<const double> x) {
    if (x.size() < base_dimension(name)) {
        throw std::invalid_argument(to_string(name) + " needs at least " + std::to_string(base_dimension(name)) +
                                    " features, got " + std::to_string(x.size()));
    }
    switch (name) {
        case DgpName::kMars: return mars(x);
        case DgpName::kMarsAdd: return mars_add(x);
        case DgpName::kHMars:
            return mars(x) - 30.0 * indicator(x[5], 0.6, 0.65) - 35.0 * indicator(x[6], 0.55, 0.6);
        case DgpName::kHMarsAdd:
            return mars_add(x) - 10.0 * indicator(x[5], 0.6, 0.65) - 7.5 * indicator(x[6], 0.55, 0.6);
        case DgpName::kHidden2D: return x[0] - indicator(x[1], 0.6, 0.65);
        case DgpName::kBand2DClass: return indicator(x[1], 0.6, 0.65) > 0.0 ? 0.9 : x[0];
        case DgpName::kSphere3DClass: {
            const double d2 = (x[0] - 0.5) * (x[0] - 0.5) + (x[1] - 0.5) * (x[1] - 0.5) +
                              (x[2] - 0.5) * (x[2] - 0.5);
            return d2 <= 1.0 ? 0.9 : 0.1;
        }
    }
    throw std::logic_error("unknown DgpName");
}

void DgpSpec::validate() const {
    if (n < 1) throw std::invalid_argument("DGP sample count must be >= 1");
    if (!is_classification(name) && !(snr > 0.0 && std::isfinite(snr))) {
        throw std::invalid_argument("snr must be a positive finite number for regression DGPs");
    }
}

double estimate_truth_variance(DgpName name, std::size_t draws, RngStream& rng) {
    if (is_classification(name)) throw std::invalid_argument("SNR calibration applies to regression DGPs only");
    if (draws < 2) throw std::invalid_argument("calibration needs at least 2 draws");
    const std::size_t p = base_dimension(name);
    const auto [lo, hi] = base_domain(name);
    std::vector<double> x(p);
    // Welford's update keeps the estimate stable for large draw counts.
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        for (auto& v : x) v = rng.uniform(lo, hi);
        const double f = eval_truth(name, x);
        const double delta = f - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (f - mean);
    }
    return m2 / static_cast<double>(draws - 1);
}

double truth_variance(DgpName name, std::size_t draws) {
    static std::mutex mutex;
    static std::map<std::pair<DgpName, std::size_t>, double> cache;
    {
        std::lock_guard lock(mutex);
        if (auto it = cache.find({name, draws}); it != cache.end()) return it->second;
    }
    RngStream rng(kCalibrationSeed, {static_cast<std::uint64_t>(name)});
    const double var = estimate_truth_variance(name, draws, rng);
    std::lock_guard lock(mutex);
    cache.emplace(std::pair{name, draws}, var);
    return var;
}

double calibrate_sigma2(DgpName name, double snr, std::size_t draws) {
    if (is_classification(name)) throw std::invalid_argument("SNR calibration applies to regression DGPs only");
    if (!(snr > 0.0 && std::isfinite(snr))) throw std::invalid_argument("snr must be positive");
    return truth_variance(name, draws) / snr;
}

namespace {

// Columns are drawn base-first from their own streams, so appending noise
// features leaves the base columns, truth and noise unchanged.
Dataset draw_design(const DgpSpec& spec, std::vector<double>& truth) {
    const std::size_t n = spec.n;
    const std::size_t base = base_dimension(spec.name);
    const std::size_t p = spec.p();
    const RngStream root(spec.seed);
    RngStream base_rng = root.child(0);
    RngStream extra_rng = root.child(1);
    const auto [lo, hi] = base_domain(spec.name);
    std::vector<double> values(n * p);
    for (std::size_t j = 0; j < base; ++j) {
        for (std::size_t i = 0; i < n; ++i) values[j * n + i] = base_rng.uniform(lo, hi);
    }
    for (std::size_t j = base; j < p; ++j) {
        for (std::size_t i = 0; i < n; ++i) values[j * n + i] = extra_rng.uniform();
    }
    truth.resize(n);
    std::vector<double> x(p);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) x[j] = values[j * n + i];
        truth[i] = eval_truth(spec.name, x);
    }
    return Dataset(n, p, std::move(values), truth, truth);
}

}  // namespace

GeneratedData generate(const DgpSpec& spec) {
    spec.validate();
    std::vector<double> truth;
    Dataset design = draw_design(spec, truth);
    RngStream noise_rng = RngStream(spec.seed).child(2);
    std::vector<double> response(spec.n);
    double sigma2 = 0.0;
    double var_f = 0.0;
    if (is_classification(spec.name)) {
        for (std::size_t i = 0; i < spec.n; ++i) response[i] = noise_rng.bernoulli(truth[i]) ? 1.0 : 0.0;
    } else {
        var_f = truth_variance(spec.name);
        sigma2 = var_f / spec.snr;
        const double sd = std::sqrt(sigma2);
        for (std::size_t i = 0; i < spec.n; ++i) response[i] = truth[i] + sd * noise_rng.normal();
    }
    return GeneratedData{design.with_response(std::move(response)), sigma2, var_f, spec};
}

Dataset sample_noiseless(const DgpSpec& spec) {
    spec.validate();
    std::vector<double> truth;
    return draw_design(spec, truth);
}

void write_generated(const std::string& csv_path, const GeneratedData& data) {
    nlohmann::json sidecar = {
        {"dgp", to_string(data.spec.name)},
        {"n", data.spec.n},
        {"p", data.spec.p()},
        {"snr", is_classification(data.spec.name) ? nlohmann::json(nullptr) : nlohmann::json(data.spec.snr)},
        {"extra_noise_features", data.spec.extra_noise_features},
        {"seed", data.spec.seed},
        {"sigma2", data.sigma2},
        {"truth_variance", data.truth_variance},
        {"calibration_draws", kCalibrationDraws},
    };
    write_dataset_csv(csv_path, data.dataset);
    write_file_atomic(csv_path + ".json", sidecar.dump(2) + "\n");
}

}  // namespace forestlab
