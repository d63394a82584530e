#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "ballssl/core/geometry.hpp"
#include "ballssl/core/random.hpp"
#include "ballssl/image.hpp"

namespace ballssl::data {

/**
 * A synthetic deployment environment: photometric and geometric perturbations
 * applied identically to every image of a task. Default-constructed specs are
 * the identity.
 */
struct AugmentationTaskSpec {
	double brightness_shift = 0;  // [-0.3, 0.3]
	double contrast_scale = 1;    // [0.7, 1.3]
	double shadow_strength = 0;   // [0, 0.6]
	double shadow_angle = 0;
	double blur_sigma = 0;
	double rotation = 0;  // [-pi/8, pi/8]
	std::uint64_t seed = 0;  // places the shadow ramp

	void validate() const {
		if (brightness_shift < -0.3 - 1e-12 || brightness_shift > 0.3 + 1e-12)
			throw std::invalid_argument("brightness_shift outside [-0.3, 0.3]");
		if (contrast_scale < 0.7 - 1e-12 || contrast_scale > 1.3 + 1e-12)
			throw std::invalid_argument("contrast_scale outside [0.7, 1.3]");
		if (shadow_strength < 0 || shadow_strength > 0.6 + 1e-12)
			throw std::invalid_argument("shadow_strength outside [0, 0.6]");
		if (blur_sigma < 0) throw std::invalid_argument("blur_sigma must be >= 0");
		if (std::abs(rotation) > std::numbers::pi / 8 + 1e-12) throw std::invalid_argument("rotation outside [-pi/8, pi/8]");
	}

	/// Preconditions of apply_augmentation, which also accepts values outside the task ranges.
	void check_applicable() const {
		for (double v : {brightness_shift, contrast_scale, shadow_strength, shadow_angle, blur_sigma, rotation})
			if (!std::isfinite(v)) throw std::invalid_argument("augmentation parameters must be finite");
		if (contrast_scale < 0) throw std::invalid_argument("contrast_scale must be >= 0");
		if (shadow_strength < 0 || shadow_strength > 1) throw std::invalid_argument("shadow_strength outside [0, 1]");
		if (blur_sigma < 0) throw std::invalid_argument("blur_sigma must be >= 0");
	}

	/// Uniform draw over the full parameter ranges (blur sigma up to 1 px).
	static AugmentationTaskSpec sample(Rng& rng) {
		AugmentationTaskSpec s;
		s.brightness_shift = uniform(rng, -0.3, 0.3);
		s.contrast_scale = uniform(rng, 0.7, 1.3);
		s.shadow_strength = uniform(rng, 0, 0.6);
		s.shadow_angle = uniform(rng, 0, 2 * std::numbers::pi);
		s.blur_sigma = uniform(rng, 0, 1.0);
		s.rotation = uniform(rng, -std::numbers::pi / 8, std::numbers::pi / 8);
		s.seed = rng();
		return s;
	}
};

namespace detail {

inline int reflect101(int i, int n) {
	if (n == 1) return 0;
	while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
	return i;
}

inline Image gaussian_blur(const Image& src, double sigma) {
	const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
	std::vector<double> k(2 * radius + 1);
	double total = 0;
	for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
	for (auto& v : k) v /= total;
	Image tmp = src, out = src;
	for (int y = 0; y < src.height; ++y)
		for (int x = 0; x < src.width; ++x)
			for (int c = 0; c < src.channels; ++c) {
				double acc = 0;
				for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * src.at(y, reflect101(x + i, src.width), c);
				tmp.at(y, x, c) = static_cast<float>(acc);
			}
	for (int y = 0; y < src.height; ++y)
		for (int x = 0; x < src.width; ++x)
			for (int c = 0; c < src.channels; ++c) {
				double acc = 0;
				for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(reflect101(y + i, src.height), x, c);
				out.at(y, x, c) = static_cast<float>(acc);
			}
	return out;
}

}  // namespace detail

/**
 * Applies rotation (about the image center, border replicated), contrast about the
 * image mean, brightness shift, shadow ramp and Gaussian blur, in that order, then
 * clips to [0,1]. Neutral parameters are skipped, so the default spec is exact identity.
 * Task ranges (validate()) bound sampled environments, not this operation.
 */
inline Image apply_augmentation(const Image& image, const AugmentationTaskSpec& spec) {
	spec.check_applicable();
	Image out = image;
	const double ox = image.width / 2.0, oy = image.height / 2.0;
	if (spec.rotation != 0) {
		const double cs = std::cos(spec.rotation), sn = std::sin(spec.rotation);
		for (int y = 0; y < out.height; ++y)
			for (int x = 0; x < out.width; ++x) {
				// inverse map: output point p samples input at R(-a)(p - o) + o
				const double dx = x + 0.5 - ox, dy = y + 0.5 - oy;
				const double sx = ox + cs * dx + sn * dy, sy = oy - sn * dx + cs * dy;
				for (int c = 0; c < out.channels; ++c) out.at(y, x, c) = image.bilinear(sy, sx, c);
			}
	}
	if (spec.contrast_scale != 1) {
		double mean = 0;
		for (float v : out.pixels) mean += v;
		mean /= static_cast<double>(out.pixels.size());
		for (auto& v : out.pixels) v = static_cast<float>((v - mean) * spec.contrast_scale + mean);
	}
	if (spec.brightness_shift != 0)
		for (auto& v : out.pixels) v = static_cast<float>(v + spec.brightness_shift);
	if (spec.shadow_strength != 0) {
		Rng rng = make_rng(spec.seed, "augmentation_shadow");
		const double offset = uniform(rng, -0.25, 0.25);
		const double ca = std::cos(spec.shadow_angle), sa = std::sin(spec.shadow_angle);
		const double half_diag = std::hypot(ox, oy);
		for (int y = 0; y < out.height; ++y)
			for (int x = 0; x < out.width; ++x) {
				const double proj = ((x + 0.5 - ox) * ca + (y + 0.5 - oy) * sa) / half_diag;
				const double t = std::clamp(0.5 + 0.5 * proj + offset, 0.0, 1.0);
				for (int c = 0; c < out.channels; ++c)
					out.at(y, x, c) = static_cast<float>(out.at(y, x, c) * (1 - spec.shadow_strength * t));
			}
	}
	if (spec.blur_sigma > 0) out = detail::gaussian_blur(out, spec.blur_sigma);
	for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
	return out;
}

/// The circle (in the same pixel frame as `width` x `height`) after apply_augmentation's geometry.
inline Circle augment_circle(const Circle& c, double width, double height, const AugmentationTaskSpec& spec) {
	if (spec.rotation == 0) return c;
	return rotate_circle(c, width / 2, height / 2, spec.rotation);
}

}  // namespace ballssl::data
