#pragma once

// Shared helpers: a seeded generator and a few independent reference
// computations used as test oracles.

#include "vic/error.hpp"
#include "vic/math.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>

namespace vic::test {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t u64() { return gen_(); }
    std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
    float uniformf(float lo, float hi) { return static_cast<float>(uniform(lo, hi)); }
    bool coin() { return below(2) == 1; }

private:
    std::mt19937_64 gen_;
};

/// Captures the error code of a throwing call.
template <typename F>
std::optional<ErrorCode> error_of(F&& f)
{
    try {
        f();
    } catch (const SimError& e) {
        return e.code();
    }
    return std::nullopt;
}

/// Reference pipeline: dense row-by-column multiply in long double, then the
/// textbook divide and viewport map.
inline std::optional<std::array<long double, 2>> reference_project(const Vec3& p, const Mat4& m, int w, int h)
{
    const long double v[4] = {p.x, p.y, p.z, 1.0L};
    long double clip[4] = {0, 0, 0, 0};
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            clip[r] += static_cast<long double>(m.m[static_cast<std::size_t>(c * 4 + r)]) * v[c];
        }
    }
    if (clip[3] <= 1e-6L) {
        return std::nullopt;
    }
    const long double nx = clip[0] / clip[3];
    const long double ny = clip[1] / clip[3];
    return std::array<long double, 2>{(nx + 1.0L) / 2.0L * w, (1.0L - ny) / 2.0L * h};
}

} // namespace vic::test
