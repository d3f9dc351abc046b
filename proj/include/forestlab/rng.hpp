#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace forestlab {

/// Deterministic random stream identified by a master seed and a lineage path
/// (e.g. experiment / trial / tree). Two streams with the same identity
/// produce the same draws; children never share state with their parent, so
/// work can be distributed across threads in any order.
class RngStream {
public:
    explicit RngStream(std::uint64_t master_seed, std::vector<std::uint64_t> path = {});

    RngStream child(std::uint64_t index) const;
    RngStream child(std::initializer_list<std::uint64_t> indices) const;

    std::uint64_t master_seed() const { return master_seed_; }
    const std::vector<std::uint64_t>& path() const { return path_; }

    /// 64-bit digest of (master_seed, path); usable as a seed for derived work.
    std::uint64_t key() const { return key_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, bound). bound must be positive.
    std::uint64_t below(std::uint64_t bound);

    /// Standard normal via Box-Muller (platform independent, unlike
    /// std::normal_distribution).
    double normal();

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t master_seed_;
    std::vector<std::uint64_t> path_;
    std::uint64_t key_;
    std::mt19937_64 engine_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace forestlab
