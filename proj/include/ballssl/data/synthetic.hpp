#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "ballssl/core/geometry.hpp"
#include "ballssl/core/random.hpp"
#include "ballssl/image.hpp"

namespace ballssl::data {

struct SyntheticSceneParams {
	int width = 96;
	int height = 96;
	int ball_count = 1;
	double radius_min = 4;
	double radius_max = 10;
	std::array<double, 3> field_green{0.18, 0.50, 0.20};
	/// Expected number of white field-line features per image.
	double line_density = 1.5;
	double shadow_probability = 0.6;
	double noise_sigma = 0.1;

	void validate() const {
		if (width < 16 || height < 16) throw std::invalid_argument("synthetic image must be at least 16x16");
		if (ball_count != 0 && ball_count != 1) throw std::invalid_argument("ball_count must be 0 or 1");
		if (!(radius_min > 0 && radius_min <= radius_max)) throw std::invalid_argument("invalid radius range");
		if (2 * radius_max + 2 > std::min(width, height)) throw std::invalid_argument("ball does not fit in image");
		if (line_density < 0 || noise_sigma < 0) throw std::invalid_argument("negative density or noise");
		if (shadow_probability < 0 || shadow_probability > 1) throw std::invalid_argument("shadow_probability not in [0,1]");
	}
};

/// `background` is the scene before the ball and sensor noise were added; circles are in pixels.
struct SyntheticScene {
	Image image;
	Image background;
	std::vector<Circle> balls;
};

namespace detail {

inline bool inside_disc(double px, double py, const Circle& c) {
	const double dx = px - c.cx, dy = py - c.cy;
	return dx * dx + dy * dy <= c.r * c.r;
}

}  // namespace detail

/**
 * Renders a mown green field with optional white lines and arcs, an optional
 * linear shadow ramp, and `ball_count` white balls with dark patches. A pixel
 * belongs to the ball iff its center lies inside the returned circle.
 */
inline SyntheticScene generate_synthetic_scene(const SyntheticSceneParams& p, std::uint64_t seed) {
	p.validate();
	Rng rng = make_rng(seed, "synthetic_scene");
	const int W = p.width, H = p.height;
	Image img(W, H, 3);

	// grass: mowing stripes plus fine texture
	const double stripe_angle = uniform(rng, 0, std::numbers::pi);
	const double stripe_period = uniform(rng, 18, 40);
	const double stripe_amp = uniform(rng, 0.03, 0.08);
	const double tone = uniform(rng, 0.8, 1.15);
	const double sa = std::cos(stripe_angle), sb = std::sin(stripe_angle);
	for (int y = 0; y < H; ++y)
		for (int x = 0; x < W; ++x) {
			const double phase = (x * sa + y * sb) / stripe_period;
			const double stripe = std::fmod(std::floor(phase), 2.0) == 0 ? stripe_amp : -stripe_amp;
			const double grain = uniform(rng, -0.03, 0.03);
			for (int c = 0; c < 3; ++c)
				img.at(y, x, c) = static_cast<float>(std::clamp(p.field_green[c] * tone * (1 + stripe) + grain, 0.0, 1.0));
		}

	// white field lines and arcs
	const int n_lines = std::poisson_distribution<int>(p.line_density)(rng);
	for (int l = 0; l < n_lines; ++l) {
		const double half_width = uniform(rng, 0.8, 1.6);
		const double intensity = uniform(rng, 0.8, 0.95);
		const bool arc = bernoulli(rng, 0.35);
		const double ox = uniform(rng, 0, W), oy = uniform(rng, 0, H);
		const double ang = uniform(rng, 0, std::numbers::pi);
		const double arc_r = uniform(rng, 15, 60);
		for (int y = 0; y < H; ++y)
			for (int x = 0; x < W; ++x) {
				const double px = x + 0.5 - ox, py = y + 0.5 - oy;
				const double dist = arc ? std::abs(std::hypot(px, py) - arc_r)
										: std::abs(-std::sin(ang) * px + std::cos(ang) * py);
				if (dist <= half_width)
					for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(intensity);
			}
	}

	// shadow as a multiplicative linear ramp
	std::vector<float> shade(static_cast<std::size_t>(W) * H, 1.0f);
	if (bernoulli(rng, p.shadow_probability)) {
		const double ang = uniform(rng, 0, 2 * std::numbers::pi);
		const double strength = uniform(rng, 0.3, 0.6);
		const double ramp = uniform(rng, 6, 30);
		const double offset = uniform(rng, -0.3, 0.3) * std::min(W, H);
		const double ca = std::cos(ang), sn = std::sin(ang);
		for (int y = 0; y < H; ++y)
			for (int x = 0; x < W; ++x) {
				const double proj = (x + 0.5 - W / 2.0) * ca + (y + 0.5 - H / 2.0) * sn - offset;
				const double t = std::clamp(proj / ramp, 0.0, 1.0);
				shade[static_cast<std::size_t>(y) * W + x] = static_cast<float>(1 - strength * t);
			}
	}
	for (int y = 0; y < H; ++y)
		for (int x = 0; x < W; ++x)
			for (int c = 0; c < 3; ++c) img.at(y, x, c) *= shade[static_cast<std::size_t>(y) * W + x];

	SyntheticScene scene;
	scene.background = img;

	for (int b = 0; b < p.ball_count; ++b) {
		const double r = uniform(rng, p.radius_min, p.radius_max);
		const Circle ball{uniform(rng, r + 1, W - r - 1), uniform(rng, r + 1, H - r - 1), r};
		const int n_spots = 3 + static_cast<int>(uniform_index(rng, 3));
		std::vector<Circle> spots;
		for (int s = 0; s < n_spots; ++s) {
			const double a = uniform(rng, 0, 2 * std::numbers::pi), d = uniform(rng, 0, 0.65 * r);
			spots.push_back({ball.cx + d * std::cos(a), ball.cy + d * std::sin(a), uniform(rng, 0.18, 0.3) * r});
		}
		const double white = uniform(rng, 0.85, 0.97);
		for (int y = 0; y < H; ++y)
			for (int x = 0; x < W; ++x) {
				const double px = x + 0.5, py = y + 0.5;
				if (!detail::inside_disc(px, py, ball)) continue;
				const double rr = (std::pow(px - ball.cx, 2) + std::pow(py - ball.cy, 2)) / (r * r);
				double v = white * (1 - 0.25 * rr);
				for (const auto& s : spots)
					if (detail::inside_disc(px, py, s)) v = 0.12;
				const float shaded = static_cast<float>(v) * shade[static_cast<std::size_t>(y) * W + x];
				for (int c = 0; c < 3; ++c) img.at(y, x, c) = shaded;
			}
		scene.balls.push_back(ball);
	}

	if (p.noise_sigma > 0)
		for (auto& v : img.pixels) v = static_cast<float>(std::clamp(v + normal(rng, 0, p.noise_sigma), 0.0, 1.0));
	scene.image = std::move(img);
	return scene;
}

}  // namespace ballssl::data
