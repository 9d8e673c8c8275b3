#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace feddag {

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream tag and up to three integer keys so that
/// independent consumers (per client, per round, per phase) get unrelated
/// streams without sharing an engine.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0,
                          std::uint64_t b = 0, std::uint64_t c = 0);

/// Draws one point from Dirichlet(alpha, ..., alpha) of dimension k.
std::vector<double> sample_dirichlet(Rng& rng, double alpha, std::size_t k);

/// Fisher-Yates shuffle driven by a uniform integer draw, so the permutation
/// depends only on the engine and not on the library's shuffle implementation.
template <typename T>
void stable_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

/// k distinct indices from [0, n), in ascending order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k);

}  // namespace feddag
