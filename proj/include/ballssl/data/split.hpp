#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ballssl/core/random.hpp"

namespace ballssl::data {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
	switch (s) {
		case Split::train: return "train";
		case Split::val: return "val";
		case Split::test: return "test";
	}
	return "?";
}

inline Split parse_split(std::string_view s) {
	if (s == "train") return Split::train;
	if (s == "val") return Split::val;
	if (s == "test") return Split::test;
	throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

struct SplitRatios {
	double train = 0.8;
	double val = 0.1;
	double test = 0.1;

	void validate() const {
		if (train < 0 || val < 0 || test < 0) throw std::invalid_argument("split ratios must be non-negative");
		if (std::abs(train + val + test - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
	}
};

/**
 * Image-level split assignment. Ids are ordered by a seeded hash (so the result
 * does not depend on input order), then the first round(train*n) go to train,
 * the next round(val*n) to val and the rest to test.
 */
inline std::map<std::string, Split> assign_splits(std::vector<std::string> image_ids, const SplitRatios& ratios,
		std::uint64_t seed) {
	ratios.validate();
	std::sort(image_ids.begin(), image_ids.end());
	image_ids.erase(std::unique(image_ids.begin(), image_ids.end()), image_ids.end());
	const std::uint64_t salt = derive_seed(seed, "split");
	auto key = [salt](const std::string& id) { return splitmix64(fnv1a64(id) ^ salt); };
	std::stable_sort(image_ids.begin(), image_ids.end(),
			[&](const std::string& a, const std::string& b) { return key(a) < key(b); });

	const std::size_t n = image_ids.size();
	const std::size_t n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(ratios.train * n)));
	const std::size_t n_val =
			std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * n)));
	std::map<std::string, Split> out;
	for (std::size_t i = 0; i < n; ++i)
		out[image_ids[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
	return out;
}

template<typename Sample>
struct SplitSet {
	std::vector<Sample> train;
	std::vector<Sample> val;
	std::vector<Sample> test;

	std::vector<Sample>& operator[](Split s) {
		return s == Split::train ? train : (s == Split::val ? val : test);
	}
	const std::vector<Sample>& operator[](Split s) const {
		return s == Split::train ? train : (s == Split::val ? val : test);
	}
};

/// Splits samples by their `source_image_id`; input order is preserved within each split.
template<typename Sample>
SplitSet<Sample> split_dataset(const std::vector<Sample>& samples, const SplitRatios& ratios, std::uint64_t seed) {
	std::vector<std::string> ids;
	ids.reserve(samples.size());
	for (const auto& s : samples) ids.push_back(s.source_image_id);
	const auto assignment = assign_splits(std::move(ids), ratios, seed);
	SplitSet<Sample> out;
	for (const auto& s : samples) out[assignment.at(s.source_image_id)].push_back(s);
	return out;
}

}  // namespace ballssl::data
