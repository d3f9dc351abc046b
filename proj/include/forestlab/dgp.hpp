#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "forestlab/dataset.hpp"
#include "forestlab/rng.hpp"

namespace forestlab {

enum class DgpName {
    kMars,           // 10 sin(pi x1 x2) + 20 (x3 - 0.05)^2 + 10 x4 + 5 x5
    kMarsAdd,        // 0.1 e^{4 x1} + 4 / (1 + e^{-20 (x2 - 0.5)}) + 3 x3 + 2 x4 + x5
    kHMars,          // MARS - 30 1(0.6 <= x6 <= 0.65) - 35 1(0.55 <= x7 <= 0.6)
    kHMarsAdd,       // MARSadd - 10 1(0.6 <= x6 <= 0.65) - 7.5 1(0.55 <= x7 <= 0.6)
    kHidden2D,       // x1 - 1(0.6 <= x2 <= 0.65)
    kBand2DClass,    // P(Y=1) = 0.9 inside 0.6 <= x2 <= 0.65, else x1
    kSphere3DClass,  // P(Y=1) = 0.9 inside the unit ball at (0.5,0.5,0.5), else 0.1
};

std::string to_string(DgpName name);
/// Case-insensitive; accepts e.g. "hmars", "HMARSADD", "hidden2d", "band2d_class".
DgpName dgp_from_string(const std::string& text);

bool is_classification(DgpName name);
std::size_t base_dimension(DgpName name);

/// Features carrying a narrow indicator band (0-based indices).
std::vector<std::size_t> hidden_pattern_features(DgpName name);
/// Remaining informative features (0-based indices).
std::vector<std::size_t> smooth_features(DgpName name);

/// Noiseless f(x) for regression DGPs, P(Y = 1 | x) for classification.
/// Entries beyond base_dimension are ignored.
double eval_truth(DgpName name, std::span<const double> x);

struct DgpSpec {
    DgpName name = DgpName::kMars;
    std::size_t n = 200;
    double snr = 1.0;  // ignored for classification
    std::size_t extra_noise_features = 0;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t p() const { return base_dimension(name) + extra_noise_features; }
};

struct GeneratedData {
    Dataset dataset;
    double sigma2 = 0.0;           // noise variance (0 for classification)
    double truth_variance = 0.0;   // calibrated Var(f(X)) (0 for classification)
    DgpSpec spec;
};

inline constexpr std::size_t kCalibrationDraws = 1'000'000;

/// Monte-Carlo Var(f(X)) over `draws` uniform points drawn from `rng`.
double estimate_truth_variance(DgpName name, std::size_t draws, RngStream& rng);

/// Var(f(X)) from a fixed internal calibration stream, cached per
/// (name, draws) so every trial of a sweep sees the same value.
double truth_variance(DgpName name, std::size_t draws = kCalibrationDraws);

/// sigma^2 = Var(f(X)) / snr.
double calibrate_sigma2(DgpName name, double snr, std::size_t draws = kCalibrationDraws);

/// Base features i.i.d. U(0,1) (the sphere DGP samples its base features on
/// [-0.5, 1.5]), appended noise features i.i.d. U(0,1). Regression responses
/// add N(0, sigma2) noise to f; classification responses are Bernoulli(f).
GeneratedData generate(const DgpSpec& spec);

/// Fresh features and truth only (response = truth), e.g. for a shared
/// noiseless test set.
Dataset sample_noiseless(const DgpSpec& spec);

/// Dataset CSV plus `<csv_path>.json` sidecar with spec and calibration.
void write_generated(const std::string& csv_path, const GeneratedData& data);

}  // namespace forestlab
