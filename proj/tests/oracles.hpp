#pragma once

// Reference implementations used as test oracles. They are deliberately naive and
// share no code paths with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ballssl/ballssl.hpp"

namespace oracle {

using ballssl::Circle;

// ---------------------------------------------------------------- parameter counts

inline std::size_t depthwise_separable(std::size_t in, std::size_t out) { return in * 9 + in + in * out + out; }

/// 1->8->16->32 stem, nine 32->32 trunk layers.
inline std::size_t backbone_count() {
	std::size_t n = depthwise_separable(1, 8) + depthwise_separable(8, 16) + depthwise_separable(16, 32);
	for (int i = 0; i < 9; ++i) n += depthwise_separable(32, 32);
	return n;
}

inline std::size_t mlp_count(std::initializer_list<std::size_t> widths) {
	std::vector<std::size_t> w(widths);
	std::size_t n = 0;
	for (std::size_t i = 0; i + 1 < w.size(); ++i) n += w[i] * w[i + 1] + w[i + 1];
	return n;
}

// ---------------------------------------------------------------- triplets

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
	long double s = 0;
	for (std::size_t i = 0; i < a.size(); ++i) s += (long double)(a[i] - b[i]) * (a[i] - b[i]);
	return double(std::sqrt(s));
}

inline double hinge(const std::vector<double>& a, const std::vector<double>& p, const std::vector<double>& n, double margin) {
	const double v = distance(a, p) - distance(a, n) + margin;
	return v > 0 ? v : 0.0;
}

/// For every ball anchor, the (positive, negative) pair maximizing d(a,p) - d(a,n), found by enumerating all pairs.
inline std::vector<ballssl::Triplet> hardest_triplets(const std::vector<std::vector<double>>& e, const std::vector<bool>& ball) {
	std::vector<ballssl::Triplet> out;
	for (std::size_t a = 0; a < e.size(); ++a) {
		if (!ball[a]) continue;
		double best = -std::numeric_limits<double>::infinity();
		ballssl::Triplet t{a, 0, 0};
		for (std::size_t p = 0; p < e.size(); ++p) {
			if (p == a || !ball[p]) continue;
			for (std::size_t n = 0; n < e.size(); ++n) {
				if (ball[n]) continue;
				const double gap = distance(e[a], e[p]) - distance(e[a], e[n]);
				if (gap > best) {
					best = gap;
					t.positive = p;
					t.negative = n;
				}
			}
		}
		out.push_back(t);
	}
	return out;
}

// ---------------------------------------------------------------- sobel

/// Sobel magnitude via an explicitly mirrored (H+2) x (W+2) copy and 3x3 correlation, max-normalized.
inline std::vector<double> sobel(const std::vector<double>& img, int H, int W) {
	auto mirror = [](int i, int n) {
		if (n == 1) return 0;
		if (i < 0) return -i;
		if (i >= n) return 2 * n - 2 - i;
		return i;
	};
	std::vector<std::vector<double>> pad(H + 2, std::vector<double>(W + 2));
	for (int y = -1; y <= H; ++y)
		for (int x = -1; x <= W; ++x) pad[y + 1][x + 1] = img[mirror(y, H) * W + mirror(x, W)];
	const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
	const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
	std::vector<double> mag(std::size_t(H) * W);
	for (int y = 0; y < H; ++y)
		for (int x = 0; x < W; ++x) {
			double gx = 0, gy = 0;
			for (int i = 0; i < 3; ++i)
				for (int j = 0; j < 3; ++j) {
					gx += kx[i][j] * pad[y + i][x + j];
					gy += ky[i][j] * pad[y + i][x + j];
				}
			mag[y * W + x] = std::sqrt(gx * gx + gy * gy);
		}
	const double peak = *std::max_element(mag.begin(), mag.end());
	for (auto& m : mag) m = peak > 0 ? m / peak : 0.0;
	return mag;
}

// ---------------------------------------------------------------- circle IoU

/// Monte Carlo IoU with `samples` uniform points over the bounding box of the union.
inline double monte_carlo_iou(const Circle& a, const Circle& b, std::size_t samples, std::mt19937_64& rng) {
	const double x0 = std::min(a.cx - a.r, b.cx - b.r), x1 = std::max(a.cx + a.r, b.cx + b.r);
	const double y0 = std::min(a.cy - a.r, b.cy - b.r), y1 = std::max(a.cy + a.r, b.cy + b.r);
	std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
	std::size_t inter = 0, uni = 0;
	for (std::size_t i = 0; i < samples; ++i) {
		const double x = ux(rng), y = uy(rng);
		const bool ia = (x - a.cx) * (x - a.cx) + (y - a.cy) * (y - a.cy) <= a.r * a.r;
		const bool ib = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy) <= b.r * b.r;
		inter += ia && ib;
		uni += ia || ib;
	}
	return uni ? double(inter) / double(uni) : 0.0;
}

// ---------------------------------------------------------------- average precision

/**
 * AP by exhaustive enumeration: every ranking prefix is re-matched from scratch with
 * the greedy rule, and the interpolated precision at each distinct recall level is the
 * best precision over all prefixes reaching it. Accumulated as an exact rational.
 */
inline double average_precision(const std::vector<ballssl::metrics::ScoredCircle>& dets,
		const std::vector<ballssl::metrics::TruthCircle>& truths, double threshold) {
	if (dets.empty() || truths.empty()) return 0.0;
	std::vector<std::pair<double, std::size_t>> keyed;
	for (std::size_t i = 0; i < dets.size(); ++i) keyed.emplace_back(-dets[i].confidence, i);
	std::sort(keyed.begin(), keyed.end());

	const std::size_t n = dets.size();
	std::vector<std::size_t> tp_at(n + 1, 0);
	for (std::size_t k = 1; k <= n; ++k) {
		std::vector<bool> used(truths.size(), false);
		std::size_t tp = 0;
		for (std::size_t r = 0; r < k; ++r) {
			const auto& d = dets[keyed[r].second];
			std::size_t pick = truths.size();
			double best = -1;
			for (std::size_t j = 0; j < truths.size(); ++j) {
				if (used[j] || truths[j].group != d.group) continue;
				const double iou = ballssl::metrics::circle_iou(d.circle, truths[j].circle);
				if (iou > best) {
					best = iou;
					pick = j;
				}
			}
			if (pick < truths.size() && best >= threshold) {
				used[pick] = true;
				++tp;
			}
		}
		tp_at[k] = tp;
	}
	// precision tp/k with k <= n: scale by lcm(1..n) to stay integral
	std::int64_t L = 1;
	for (std::int64_t k = 2; k <= std::int64_t(n); ++k) L = std::lcm(L, k);
	std::int64_t numerator = 0;
	for (std::size_t level = 1; level <= truths.size(); ++level) {
		std::int64_t best = 0;
		bool reached = false;
		for (std::size_t k = 1; k <= n; ++k)
			if (tp_at[k] >= level) {
				reached = true;
				best = std::max<std::int64_t>(best, std::int64_t(tp_at[k]) * (L / std::int64_t(k)));
			}
		if (reached) numerator += best;
	}
	return double(numerator) / (double(L) * double(truths.size()));
}

inline double map_range(const std::vector<ballssl::metrics::ScoredCircle>& dets,
		const std::vector<ballssl::metrics::TruthCircle>& truths) {
	const double grid[] = {0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
	double s = 0;
	for (double t : grid) s += average_precision(dets, truths, t);
	return s / 6.0;
}

// ---------------------------------------------------------------- gradients

struct GradCheck {
	std::size_t checked = 0;
	double max_rel_err = 0;
};

inline double relative_error(double a, double b) {
	const double scale = std::max({std::abs(a), std::abs(b), 1e-7});
	return std::abs(a - b) / scale;
}

/**
 * Central differences (step h) against backpropagated gradients for `per_tensor`
 * randomly chosen entries of every parameter tensor. `loss(true)` must leave the
 * analytic gradient in each parameter's `grad`; `loss(false)` only evaluates.
 */
inline GradCheck check_gradients(const ballssl::nn::ParameterList<double>& params,
		const std::function<double(bool)>& loss, std::size_t per_tensor, std::mt19937_64& rng, double h = 1e-5) {
	ballssl::nn::zero_grad(params);
	loss(true);
	GradCheck out;
	for (auto* p : params) {
		std::uniform_int_distribution<std::size_t> pick(0, p->size() - 1);
		for (std::size_t k = 0; k < per_tensor; ++k) {
			const std::size_t i = pick(rng);
			const double analytic = p->grad[i];
			const double saved = p->value[i];
			p->value[i] = saved + h;
			const double up = loss(false);
			p->value[i] = saved - h;
			const double down = loss(false);
			p->value[i] = saved;
			out.max_rel_err = std::max(out.max_rel_err, relative_error(analytic, (up - down) / (2 * h)));
			++out.checked;
		}
	}
	return out;
}

// ---------------------------------------------------------------- misc

inline std::vector<double> uniform_vector(std::size_t n, std::mt19937_64& rng, double lo = 0, double hi = 1) {
	std::uniform_real_distribution<double> u(lo, hi);
	std::vector<double> v(n);
	for (auto& x : v) x = u(rng);
	return v;
}

template<typename Scalar>
ballssl::Tensor<Scalar> random_tensor(ballssl::Shape shape, std::mt19937_64& rng, double lo = 0, double hi = 1) {
	const auto v = uniform_vector(ballssl::volume(shape), rng, lo, hi);
	return ballssl::Tensor<Scalar>(std::move(shape), std::vector<Scalar>(v.begin(), v.end()));
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
	explicit TempDir(const std::string& tag) {
		std::random_device rd;
		path_ = std::filesystem::temp_directory_path() / ("ballssl_" + tag + "_" + std::to_string(rd()));
		std::filesystem::remove_all(path_);
		std::filesystem::create_directories(path_);
	}
	~TempDir() {
		std::error_code ec;
		std::filesystem::remove_all(path_, ec);
	}
	TempDir(const TempDir&) = delete;
	TempDir& operator=(const TempDir&) = delete;

	const std::filesystem::path& path() const { return path_; }
	std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
	std::filesystem::path path_;
};

}  // namespace oracle
