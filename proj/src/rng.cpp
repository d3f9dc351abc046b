#include "forestlab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace forestlab {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {

std::uint64_t stream_key(std::uint64_t seed, const std::vector<std::uint64_t>& path) {
    std::uint64_t h = splitmix64(seed ^ 0x5bd1e9955bd1e995ULL);
    for (std::uint64_t step : path) {
        // path length is folded in implicitly: every step remixes the state.
        h = splitmix64(h ^ splitmix64(step + 0x632be59bd9b4e019ULL));
    }
    return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t master_seed, std::vector<std::uint64_t> path)
    : master_seed_(master_seed),
      path_(std::move(path)),
      key_(stream_key(master_seed_, path_)),
      engine_(key_) {}

RngStream RngStream::child(std::uint64_t index) const {
    auto p = path_;
    p.push_back(index);
    return RngStream(master_seed_, std::move(p));
}

RngStream RngStream::child(std::initializer_list<std::uint64_t> indices) const {
    auto p = path_;
    p.insert(p.end(), indices.begin(), indices.end());
    return RngStream(master_seed_, std::move(p));
}

double RngStream::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("RngStream::below: bound must be positive");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = bound * (UINT64_MAX / bound);
    std::uint64_t draw;
    do {
        draw = engine_();
    } while (draw >= limit);
    return draw % bound;
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_normal_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

}  // namespace forestlab
