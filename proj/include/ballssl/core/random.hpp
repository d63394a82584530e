#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ballssl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
	x += 0x9e3779b97f4a7c15ULL;
	x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
	x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
	return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
	std::uint64_t h = 0xcbf29ce484222325ULL;
	for (unsigned char c : s) {
		h ^= c;
		h *= 0x100000001b3ULL;
	}
	return h;
}

/// Seed for a named component under a global seed. Every random stream in the
/// library is obtained through this so that runs are keyed by (seed, component).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view component) {
	return splitmix64(splitmix64(seed) ^ fnv1a64(component));
}

inline Rng make_rng(std::uint64_t seed, std::string_view component) {
	return Rng(derive_seed(seed, component));
}

inline double uniform(Rng& rng, double lo, double hi) {
	return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean, double sigma) {
	return std::normal_distribution<double>(mean, sigma)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
	return std::bernoulli_distribution(p)(rng);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
	return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace ballssl
