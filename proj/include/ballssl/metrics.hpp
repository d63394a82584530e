#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/core/geometry.hpp"

namespace ballssl::metrics {

/**
 * Intersection over union of two discs from the circle-circle lens area.
 * Disjoint -> 0, containment -> (small/large)^2, two zero radii -> 0.
 */
inline double circle_iou(const Circle& a, const Circle& b) {
	if (a.r < 0 || b.r < 0) throw std::invalid_argument("circle_iou: negative radius");
	if (a.r == 0 && b.r == 0) return 0.0;
	const double d = std::hypot(a.cx - b.cx, a.cy - b.cy);
	const double r1 = a.r, r2 = b.r;
	const double area1 = std::numbers::pi * r1 * r1, area2 = std::numbers::pi * r2 * r2;
	double inter;
	if (d >= r1 + r2) {
		return 0.0;
	} else if (d <= std::abs(r1 - r2)) {
		inter = std::min(area1, area2);
	} else {
		const double c1 = std::clamp((d * d + r1 * r1 - r2 * r2) / (2 * d * r1), -1.0, 1.0);
		const double c2 = std::clamp((d * d + r2 * r2 - r1 * r1) / (2 * d * r2), -1.0, 1.0);
		const double k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
		inter = r1 * r1 * std::acos(c1) + r2 * r2 * std::acos(c2) - 0.5 * std::sqrt(std::max(k, 0.0));
	}
	const double uni = area1 + area2 - inter;
	return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

struct ClassificationMetrics {
	double accuracy = 0;
	double precision = 0;
	double recall = 0;
	double f1 = 0;
	std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Positive class = ball; predicted ball iff confidence >= threshold. f1 = 0 when P + R = 0.
inline ClassificationMetrics classification_metrics(std::span<const double> ball_confidence, std::span<const bool> is_ball,
		double threshold = 0.5) {
	if (ball_confidence.size() != is_ball.size()) throw std::invalid_argument("classification_metrics: length mismatch");
	ClassificationMetrics m;
	for (std::size_t i = 0; i < is_ball.size(); ++i) {
		const bool pred = ball_confidence[i] >= threshold;
		if (pred && is_ball[i]) ++m.tp;
		else if (pred) ++m.fp;
		else if (is_ball[i]) ++m.fn;
		else ++m.tn;
	}
	const std::size_t n = is_ball.size();
	m.accuracy = n ? double(m.tp + m.tn) / double(n) : 0.0;
	m.precision = m.tp + m.fp ? double(m.tp) / double(m.tp + m.fp) : 0.0;
	m.recall = m.tp + m.fn ? double(m.tp) / double(m.tp + m.fn) : 0.0;
	m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
	return m;
}

/// A scored detection; it may only match truths with the same `group` (e.g. the same patch).
struct ScoredCircle {
	Circle circle;
	double confidence = 0;
	std::size_t group = 0;
};

struct TruthCircle {
	Circle circle;
	std::size_t group = 0;
};

/**
 * Greedy matching in descending confidence (stable for ties): a detection is a true
 * positive when its best-IoU unmatched truth reaches `iou_threshold`. Returns one flag
 * per detection in that sorted order.
 */
inline std::vector<bool> match_detections(std::span<const ScoredCircle> dets, std::span<const TruthCircle> truths,
		double iou_threshold, std::vector<std::size_t>* order_out = nullptr) {
	std::vector<std::size_t> order(dets.size());
	std::iota(order.begin(), order.end(), 0);
	std::stable_sort(order.begin(), order.end(),
			[&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
	std::vector<bool> matched(truths.size(), false), tp(dets.size(), false);
	for (std::size_t k = 0; k < order.size(); ++k) {
		const auto& d = dets[order[k]];
		double best = -1;
		std::size_t best_j = truths.size();
		for (std::size_t j = 0; j < truths.size(); ++j) {
			if (matched[j] || truths[j].group != d.group) continue;
			const double iou = circle_iou(d.circle, truths[j].circle);
			if (iou > best) {
				best = iou;
				best_j = j;
			}
		}
		if (best_j < truths.size() && best >= iou_threshold) {
			matched[best_j] = true;
			tp[k] = true;
		}
	}
	if (order_out) *order_out = std::move(order);
	return tp;
}

/// All-point interpolated area under the precision-recall curve. No truths -> 0.
inline double average_precision(std::span<const ScoredCircle> dets, std::span<const TruthCircle> truths,
		double iou_threshold) {
	if (truths.empty() || dets.empty()) return 0.0;
	const auto tp = match_detections(dets, truths, iou_threshold);
	const std::size_t n = tp.size();
	std::vector<long double> precision(n);
	std::size_t tps = 0;
	for (std::size_t k = 0; k < n; ++k) {
		tps += tp[k];
		precision[k] = static_cast<long double>(tps) / static_cast<long double>(k + 1);
	}
	for (std::size_t k = n - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
	// recall rises by exactly 1/|truths| at each true positive: sum precisions there, divide once
	long double sum = 0;
	for (std::size_t k = 0; k < n; ++k)
		if (tp[k]) sum += precision[k];
	return static_cast<double>(sum / static_cast<long double>(truths.size()));
}

/// {lo, lo + step, ...} up to hi inclusive.
inline std::vector<double> iou_thresholds(double lo = 0.70, double hi = 0.95, double step = 0.05) {
	if (!(lo <= hi) || !(step > 0)) throw std::invalid_argument("iou_thresholds: need lo <= hi and step > 0");
	const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
	std::vector<double> out;
	for (std::size_t i = 0; i < count; ++i) out.push_back(lo + double(i) * step);
	return out;
}

inline std::vector<std::pair<double, double>> ap_table(std::span<const ScoredCircle> dets,
		std::span<const TruthCircle> truths, double lo = 0.70, double hi = 0.95, double step = 0.05) {
	std::vector<std::pair<double, double>> out;
	for (double t : iou_thresholds(lo, hi, step)) out.emplace_back(t, average_precision(dets, truths, t));
	return out;
}

/// Mean AP over the threshold grid (six thresholds 0.70..0.95 by default).
inline double map_range(std::span<const ScoredCircle> dets, std::span<const TruthCircle> truths, double lo = 0.70,
		double hi = 0.95, double step = 0.05) {
	const auto table = ap_table(dets, truths, lo, hi, step);
	double s = 0;
	for (const auto& [t, ap] : table) s += ap;
	return s / double(table.size());
}

struct MetricsReport {
	double loss = 0;
	double accuracy = 0;
	double precision = 0;
	double recall = 0;
	double f1 = 0;
	/// Over true-positive samples (predicted and labelled ball).
	double mean_iou = 0;
	/// Over all labelled-ball samples regardless of the class decision.
	double mean_iou_all_positives = 0;
	double map_range = 0;
	std::vector<std::pair<double, double>> ap_per_threshold;
	std::size_t samples = 0;
	std::size_t true_positives = 0;

	nlohmann::json to_json() const {
		nlohmann::json ap = nlohmann::json::array();
		for (const auto& [t, v] : ap_per_threshold) ap.push_back({{"iou_threshold", t}, {"ap", v}});
		return {{"loss", loss}, {"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"f1", f1},
				{"mean_iou", mean_iou}, {"mean_iou_all_positives", mean_iou_all_positives}, {"map_0.70_0.95", map_range},
				{"ap_per_threshold", ap}, {"samples", samples}, {"true_positives", true_positives}};
	}
};

}  // namespace ballssl::metrics
