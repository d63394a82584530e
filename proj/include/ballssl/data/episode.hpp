#pragma once

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include "ballssl/data/augment.hpp"
#include "ballssl/data/patches.hpp"

namespace ballssl::data {

/// A few-shot task: support and query sets drawn from disjoint source images, both augmented by `env`.
struct TaskEpisode {
	AugmentationTaskSpec env;
	std::vector<PatchSample> support;
	std::vector<PatchSample> query;
};

class InsufficientSamples : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Augments pixels and, for positives, the normalized circle.
inline PatchSample augment_sample(const PatchSample& s, const AugmentationTaskSpec& spec) {
	PatchSample out = s;
	out.pixels = apply_augmentation(s.pixels, spec);
	if (out.circle) {
		out.circle = augment_circle(*out.circle, 1.0, 1.0, spec);
		out.circle->cx = std::clamp(out.circle->cx, 0.0, 1.0);
		out.circle->cy = std::clamp(out.circle->cy, 0.0, 1.0);
	}
	return out;
}

inline void check_episode(const TaskEpisode& ep) {
	auto has = [](const std::vector<PatchSample>& v, PatchLabel l) {
		return std::any_of(v.begin(), v.end(), [l](const auto& s) { return s.label == l; });
	};
	if (!has(ep.support, PatchLabel::ball) || !has(ep.support, PatchLabel::no_ball) ||
			!has(ep.query, PatchLabel::ball) || !has(ep.query, PatchLabel::no_ball))
		throw std::invalid_argument("episode support and query must each contain both classes");
	std::set<std::string> sources;
	for (const auto& s : ep.support) sources.insert(s.source_image_id);
	for (const auto& s : ep.query)
		if (sources.contains(s.source_image_id))
			throw std::invalid_argument("episode support and query share source image " + s.source_image_id);
}

/**
 * Draws k_support + k_query samples so that each side holds at least one ball and
 * one no_ball patch and no source image feeds both sides.
 */
inline TaskEpisode sample_episode(const std::vector<PatchSample>& samples, const AugmentationTaskSpec& spec,
		std::size_t k_support, std::size_t k_query, std::uint64_t seed) {
	spec.validate();
	if (k_support < 2 || k_query < 2) throw std::invalid_argument("k_support and k_query must be >= 2");
	if (samples.size() < k_support + k_query) throw InsufficientSamples("not enough samples for episode");
	Rng rng = make_rng(seed, "episode");
	std::vector<std::size_t> order(samples.size());
	std::iota(order.begin(), order.end(), 0);
	std::shuffle(order.begin(), order.end(), rng);

	std::vector<bool> used(samples.size(), false);
	auto draw = [&](std::size_t k, const std::set<std::string>& excluded) {
		std::vector<std::size_t> picked;
		auto take_first = [&](auto pred) {
			for (std::size_t i : order)
				if (!used[i] && !excluded.contains(samples[i].source_image_id) && pred(samples[i])) {
					used[i] = true;
					picked.push_back(i);
					return true;
				}
			return false;
		};
		if (!take_first([](const auto& s) { return s.is_ball(); }) ||
				!take_first([](const auto& s) { return !s.is_ball(); }))
			throw InsufficientSamples("episode needs both classes on each side");
		while (picked.size() < k)
			if (!take_first([](const auto&) { return true; })) throw InsufficientSamples("not enough samples for episode");
		return picked;
	};

	const auto support_idx = draw(k_support, {});
	std::set<std::string> support_sources;
	for (std::size_t i : support_idx) support_sources.insert(samples[i].source_image_id);
	const auto query_idx = draw(k_query, support_sources);

	TaskEpisode ep;
	ep.env = spec;
	for (std::size_t i : support_idx) ep.support.push_back(augment_sample(samples[i], spec));
	for (std::size_t i : query_idx) ep.query.push_back(augment_sample(samples[i], spec));
	return ep;
}

}  // namespace ballssl::data
