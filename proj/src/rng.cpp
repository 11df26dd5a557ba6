#include "matfield/rng.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

namespace matfield {

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = mag * std::sin(ang);
    have_spare_ = true;
    return mag * std::cos(ang);
}

std::uint64_t Rng::below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(gen_()) * n) >> 64);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
    // Partial Fisher-Yates on a sparse permutation; O(k) memory.
    std::unordered_map<std::size_t, std::size_t> moved;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(below(n - i));
        auto it_j = moved.find(j);
        const std::size_t pick = (it_j == moved.end()) ? j : it_j->second;
        auto it_i = moved.find(i);
        moved[j] = (it_i == moved.end()) ? i : it_i->second;
        out.push_back(pick);
    }
    return out;
}

}  // namespace matfield
