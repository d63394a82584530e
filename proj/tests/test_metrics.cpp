#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace ballssl;
using namespace ballssl::metrics;

namespace {

struct Instance {
	std::vector<ScoredCircle> dets;
	std::vector<TruthCircle> truths;
};

/// Up to 4 truths in up to 3 groups and up to 10 detections scattered around them;
/// confidences are quantized so ties occur.
Instance random_instance(std::mt19937_64& rng) {
	std::uniform_int_distribution<int> n_truth(0, 4), n_det(0, 10), group(0, 2), conf(0, 9);
	std::uniform_real_distribution<double> pos(0, 1), rad(0.05, 0.3), jitter(-0.06, 0.06), scale(0.75, 1.25);
	Instance in;
	const int T = n_truth(rng);
	for (int i = 0; i < T; ++i) in.truths.push_back({Circle{pos(rng), pos(rng), rad(rng)}, std::size_t(group(rng))});
	const int D = n_det(rng);
	for (int i = 0; i < D; ++i) {
		ScoredCircle d;
		if (!in.truths.empty() && conf(rng) < 8) {
			const auto& t = in.truths[std::size_t(conf(rng)) % in.truths.size()];
			d.circle = {t.circle.cx + jitter(rng), t.circle.cy + jitter(rng), t.circle.r * scale(rng)};
			d.group = t.group;
		} else {
			d.circle = {pos(rng), pos(rng), rad(rng)};
			d.group = std::size_t(group(rng));
		}
		d.confidence = 0.1 * conf(rng);
		in.dets.push_back(d);
	}
	return in;
}

}  // namespace

TEST(CircleIou, AnalyticCases) {
	const Circle c{0.3, -0.2, 0.7};
	EXPECT_NEAR(circle_iou(c, c), 1.0, 1e-9);
	EXPECT_EQ(circle_iou({0, 0, 1}, {3, 0, 1}), 0.0);
	EXPECT_EQ(circle_iou({0, 0, 1}, {2, 0, 1}), 0.0);
	EXPECT_NEAR(circle_iou({1, 1, 0.5}, {1, 1, 1.0}), 0.25, 1e-9);
	EXPECT_NEAR(circle_iou({1, 1, 1.0}, {1, 1, 0.5}), 0.25, 1e-9);
	EXPECT_EQ(circle_iou({0, 0, 0}, {0, 0, 0}), 0.0);
	EXPECT_EQ(circle_iou({0, 0, 0}, {0, 0, 1}), 0.0);
	EXPECT_THROW(circle_iou({0, 0, -1}, {0, 0, 1}), std::invalid_argument);
}

TEST(CircleIou, EqualRadiiHalfOverlapClosedForm) {
	// two unit circles at distance 1: lens area 2*pi/3 - sqrt(3)/2
	const double lens = 2 * std::numbers::pi / 3 - std::sqrt(3.0) / 2;
	EXPECT_NEAR(circle_iou({0, 0, 1}, {1, 0, 1}), lens / (2 * std::numbers::pi - lens), 1e-12);
}

TEST(CircleIou, AgreesWithMonteCarlo) {
	std::mt19937_64 rng(17);
	std::uniform_real_distribution<double> pos(-1, 1), rad(0.05, 1);
	for (int t = 0; t < 100; ++t) {
		const Circle a{pos(rng), pos(rng), rad(rng)}, b{pos(rng), pos(rng), rad(rng)};
		EXPECT_NEAR(circle_iou(a, b), oracle::monte_carlo_iou(a, b, 1000000, rng), 1e-2) << t;
	}
}

TEST(CircleIou, Invariances) {
	std::mt19937_64 rng(2);
	std::uniform_real_distribution<double> pos(-1, 1), rad(0.05, 1), angle(0, 6.283185307179586), scale(0.1, 10);
	for (int t = 0; t < 200; ++t) {
		const Circle a{pos(rng), pos(rng), rad(rng)}, b{pos(rng), pos(rng), rad(rng)};
		const double iou = circle_iou(a, b);
		EXPECT_GE(iou, 0.0);
		EXPECT_LE(iou, 1.0);
		EXPECT_NEAR(circle_iou(b, a), iou, 1e-12);
		const double dx = pos(rng) * 10, dy = pos(rng) * 10;
		EXPECT_NEAR(circle_iou({a.cx + dx, a.cy + dy, a.r}, {b.cx + dx, b.cy + dy, b.r}), iou, 1e-9);
		const double th = angle(rng), c = std::cos(th), s = std::sin(th);
		EXPECT_NEAR(circle_iou({c * a.cx - s * a.cy, s * a.cx + c * a.cy, a.r}, {c * b.cx - s * b.cy, s * b.cx + c * b.cy, b.r}),
				iou, 1e-9);
		const double k = scale(rng);
		EXPECT_NEAR(circle_iou({k * a.cx, k * a.cy, k * a.r}, {k * b.cx, k * b.cy, k * b.r}), iou, 1e-9);
	}
}

TEST(ClassificationMetrics, AllCorrect) {
	const std::vector<double> conf{0.9, 0.1, 0.6, 0.2};
	const bool truth[] = {true, false, true, false};
	const auto m = classification_metrics(conf, truth);
	EXPECT_EQ(m.accuracy, 1.0);
	EXPECT_EQ(m.f1, 1.0);
}

TEST(ClassificationMetrics, ConfusionMatrixArithmetic) {
	std::vector<double> conf;
	std::unique_ptr<bool[]> truth(new bool[20]);
	for (int i = 0; i < 20; ++i) {
		// 8 TP, 2 FN, 2 FP, 8 TN
		truth[i] = i < 10;
		conf.push_back((i < 8 || (i >= 10 && i < 12)) ? 0.9 : 0.1);
	}
	const auto m = classification_metrics(conf, std::span<const bool>(truth.get(), 20));
	EXPECT_EQ(m.tp, 8u);
	EXPECT_EQ(m.fp, 2u);
	EXPECT_EQ(m.fn, 2u);
	EXPECT_EQ(m.tn, 8u);
	EXPECT_NEAR(m.precision, 0.8, 1e-12);
	EXPECT_NEAR(m.recall, 0.8, 1e-12);
	EXPECT_NEAR(m.f1, 0.8, 1e-12);
	EXPECT_NEAR(m.accuracy, 0.8, 1e-12);
}

TEST(ClassificationMetrics, DegenerateCases) {
	const std::vector<double> conf{0.1, 0.2, 0.3};
	const bool truth[] = {false, false, false};
	const auto m = classification_metrics(conf, truth);
	EXPECT_EQ(m.accuracy, 1.0);
	EXPECT_EQ(m.f1, 0.0);
	EXPECT_THROW(classification_metrics(std::vector<double>{0.5}, std::span<const bool>(truth, 2)), std::invalid_argument);
}

TEST(AveragePrecision, TrivialCases) {
	const std::vector<ScoredCircle> one{{Circle{0.5, 0.5, 0.2}, 0.9, 0}};
	const std::vector<TruthCircle> truth{{Circle{0.5, 0.5, 0.2}, 0}};
	EXPECT_DOUBLE_EQ(average_precision(one, truth, 0.95), 1.0);
	EXPECT_DOUBLE_EQ(map_range(one, truth), 1.0);
	EXPECT_EQ(average_precision(one, std::vector<TruthCircle>{}, 0.5), 0.0);
	EXPECT_EQ(average_precision(std::vector<ScoredCircle>{}, truth, 0.5), 0.0);
}

TEST(AveragePrecision, SingleDetectionAtIou072) {
	const std::vector<ScoredCircle> det{{Circle{0, 0, std::sqrt(0.72)}, 0.8, 0}};
	const std::vector<TruthCircle> truth{{Circle{0, 0, 1}, 0}};
	ASSERT_NEAR(circle_iou(det[0].circle, truth[0].circle), 0.72, 1e-12);
	const auto table = ap_table(det, truth);
	ASSERT_EQ(table.size(), 6u);
	for (const auto& [t, ap] : table) EXPECT_EQ(ap, t < 0.72 ? 1.0 : 0.0) << t;
	EXPECT_NEAR(map_range(det, truth), 1.0 / 6.0, 1e-12);
}

TEST(AveragePrecision, ThresholdGrid) {
	const auto g = iou_thresholds();
	ASSERT_EQ(g.size(), 6u);
	const double want[] = {0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
	for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g[i], want[i], 1e-12);
	EXPECT_THROW(iou_thresholds(0.9, 0.7, 0.05), std::invalid_argument);
	EXPECT_THROW(iou_thresholds(0.7, 0.9, 0.0), std::invalid_argument);
}

TEST(AveragePrecision, MatchesExhaustiveOracle) {
	std::mt19937_64 rng(99);
	int nontrivial = 0;
	for (int t = 0; t < 100; ++t) {
		const auto in = random_instance(rng);
		for (double thr : {0.3, 0.5, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95}) {
			const double want = oracle::average_precision(in.dets, in.truths, thr);
			EXPECT_EQ(average_precision(in.dets, in.truths, thr), want) << t << " @" << thr;
			nontrivial += want > 0 && want < 1;
		}
		EXPECT_EQ(map_range(in.dets, in.truths), oracle::map_range(in.dets, in.truths)) << t;
	}
	EXPECT_GT(nontrivial, 20);
}

TEST(AveragePrecision, InvariantUnderMonotoneConfidenceMaps) {
	std::mt19937_64 rng(5);
	for (int t = 0; t < 100; ++t) {
		const auto in = random_instance(rng);
		auto mapped = in.dets;
		for (auto& d : mapped) d.confidence = std::exp(3 * d.confidence) + 7;
		EXPECT_EQ(map_range(mapped, in.truths), map_range(in.dets, in.truths)) << t;
		EXPECT_EQ(average_precision(mapped, in.truths, 0.5), average_precision(in.dets, in.truths, 0.5)) << t;
	}
}

TEST(AveragePrecision, CollapsedRangeEqualsSingleThreshold) {
	std::mt19937_64 rng(6);
	for (int t = 0; t < 50; ++t) {
		const auto in = random_instance(rng);
		for (double thr : {0.6, 0.8}) EXPECT_EQ(map_range(in.dets, in.truths, thr, thr, 0.05), average_precision(in.dets, in.truths, thr));
	}
}

TEST(AveragePrecision, GroupsAreNotCrossMatched) {
	const std::vector<ScoredCircle> det{{Circle{0.5, 0.5, 0.2}, 0.9, 1}};
	const std::vector<TruthCircle> truth{{Circle{0.5, 0.5, 0.2}, 0}};
	EXPECT_EQ(average_precision(det, truth, 0.5), 0.0);
}

TEST(ScorePredictions, PerfectAndAlwaysNegative) {
	const std::vector<data::PatchLabel> labels{data::PatchLabel::ball, data::PatchLabel::no_ball, data::PatchLabel::ball};
	const std::vector<std::optional<Circle>> circles{Circle{0.5, 0.5, 0.2}, std::nullopt, Circle{0.3, 0.6, 0.25}};
	const std::vector<PatchPrediction> perfect{{1.0, {0.5, 0.5, 0.2}}, {0.0, {0.5, 0.5, 0.5}}, {1.0, {0.3, 0.6, 0.25}}};
	const auto r = score_predictions(perfect, labels, circles, 0.0);
	EXPECT_EQ(r.accuracy, 1.0);
	EXPECT_EQ(r.f1, 1.0);
	EXPECT_DOUBLE_EQ(r.mean_iou, 1.0);
	EXPECT_DOUBLE_EQ(r.map_range, 1.0);

	auto negative = perfect;
	for (auto& p : negative) p.ball_confidence = 0.1;
	const auto n = score_predictions(negative, labels, circles, 0.0);
	EXPECT_EQ(n.recall, 0.0);
	EXPECT_EQ(n.f1, 0.0);
	EXPECT_EQ(n.mean_iou, 0.0);
	EXPECT_THROW(score_predictions(negative, {labels.begin(), labels.begin() + 2}, circles, 0.0), std::invalid_argument);
}

TEST(ScorePredictions, EvaluateMatchesRecomputationFromPredictions) {
	data::SyntheticCorpusOptions opt;
	opt.n_train = 64;
	opt.n_val = 0;
	opt.n_test = 0;
	const auto set = data::to_tensors<float>(data::build_synthetic_corpus(opt)[data::Split::train]);
	DetectorConfig cfg;
	cfg.epochs = 2;
	Detector<float> model(cfg);
	finetune(model, set, set);
	const auto ev = evaluate(model, set);

	std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
	double iou_sum = 0;
	std::vector<ScoredCircle> dets;
	std::vector<TruthCircle> truths;
	for (std::size_t i = 0; i < set.size(); ++i) {
		const bool ball = set.labels[i] == data::PatchLabel::ball;
		const bool pred = ev.predictions[i].ball_confidence >= 0.5;
		tp += ball && pred;
		fp += !ball && pred;
		fn += ball && !pred;
		tn += !ball && !pred;
		if (ball && pred) iou_sum += circle_iou(ev.predictions[i].circle, *set.circles[i]);
		dets.push_back({ev.predictions[i].circle, ev.predictions[i].ball_confidence, i});
		if (ball) truths.push_back({*set.circles[i], i});
	}
	const double precision = tp + fp ? double(tp) / double(tp + fp) : 0.0, recall = double(tp) / double(tp + fn);
	EXPECT_DOUBLE_EQ(ev.report.accuracy, double(tp + tn) / double(set.size()));
	EXPECT_DOUBLE_EQ(ev.report.precision, precision);
	EXPECT_DOUBLE_EQ(ev.report.recall, recall);
	EXPECT_DOUBLE_EQ(ev.report.f1, precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0);
	EXPECT_EQ(ev.report.true_positives, tp);
	EXPECT_NEAR(ev.report.mean_iou, tp ? iou_sum / double(tp) : 0.0, 1e-12);
	EXPECT_NEAR(ev.report.map_range, oracle::map_range(dets, truths), 1e-12);

	const auto js = ev.report.to_json();
	for (const char* key : {"loss", "accuracy", "precision", "recall", "f1", "mean_iou", "map_0.70_0.95", "ap_per_threshold"})
		EXPECT_TRUE(js.contains(key)) << key;
	EXPECT_EQ(js["ap_per_threshold"].size(), 6u);
}
