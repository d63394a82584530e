#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace ballssl;
using data::PatchLabel;

namespace {

data::SplitSet<data::PatchSample> corpus(std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
	data::SyntheticCorpusOptions opt;
	opt.n_train = n_train;
	opt.n_val = n_val;
	opt.n_test = 0;
	opt.seed = seed;
	return data::build_synthetic_corpus(opt);
}

template<typename Scalar>
DetectorBatchOutput<Scalar> output(std::vector<Scalar> logits, std::vector<Scalar> circles) {
	const std::size_t N = logits.size() / 2;
	return {Tensor<Scalar>({N, 2}, std::move(logits)), Tensor<Scalar>({N, 3}, std::move(circles))};
}

}  // namespace

TEST(DetectorHeads, ParameterCounts) {
	Detector<float> d(DetectorConfig{});
	const auto cls = nn::count_parameters(d.class_head().parameters());
	const auto reg = nn::count_parameters(d.regression_head().parameters());
	EXPECT_EQ(cls, oracle::mlp_count({512, 136, 2}));
	EXPECT_EQ(reg, oracle::mlp_count({512, 512, 128, 3}));
	EXPECT_EQ(cls, 70042u);
	EXPECT_EQ(reg, 328707u);
	EXPECT_NEAR(double(cls), 70000.0, 7000.0);
	EXPECT_NEAR(double(reg), 332000.0, 33200.0);
	EXPECT_EQ(nn::count_parameters(d.parameters()), oracle::backbone_count() + cls + reg);
}

TEST(DetectorHeads, SeededInitIsDeterministic) {
	Detector<float> a(DetectorConfig{.seed = 5}), b(DetectorConfig{.seed = 5}), c(DetectorConfig{.seed = 6});
	EXPECT_EQ(nn::flatten_values(a.parameters()), nn::flatten_values(b.parameters()));
	EXPECT_NE(nn::flatten_values(a.class_head().parameters()), nn::flatten_values(c.class_head().parameters()));
}

TEST(DetectorHeads, IdenticalAcrossInitModes) {
	const auto pool = corpus(32, 0, 1)[data::Split::train];
	PretextTrainConfig pc;
	pc.epochs = 1;
	const auto edge = train_pretext(pc, pool);
	meta::MetaConfig mc;
	mc.iterations = 2;
	mc.seed = 9;
	const auto maml = meta::meta_train(mc, pool);

	Detector<float> fresh(DetectorConfig{.seed = 3});
	for (const Checkpoint* ckpt : {&edge.checkpoint, &maml.checkpoint}) {
		Detector<float> d(DetectorConfig{.seed = 3});
		d.load_backbone(*ckpt);
		EXPECT_EQ(nn::flatten_values(d.class_head().parameters()), nn::flatten_values(fresh.class_head().parameters()));
		EXPECT_EQ(nn::flatten_values(d.regression_head().parameters()),
				nn::flatten_values(fresh.regression_head().parameters()));
		EXPECT_NE(nn::flatten_values(d.backbone().parameters()), nn::flatten_values(fresh.backbone().parameters()));
	}
}

TEST(DetectionLoss, ConfidentAllNegativeIsNearZero) {
	const auto out = output<double>({30, -30, 25, -25}, {0.1, 0.9, 0.3, 0.5, 0.5, 0.5});
	const std::vector<PatchLabel> labels{PatchLabel::no_ball, PatchLabel::no_ball};
	const std::vector<std::optional<Circle>> circles(2);
	const double l = detection_loss(out, labels, circles, 5.0);
	EXPECT_GE(l, 0.0);
	EXPECT_LT(l, 1e-10);
}

TEST(DetectionLoss, ZeroWeightIsCrossEntropy) {
	std::mt19937_64 rng(1);
	const auto logits = oracle::uniform_vector(8, rng, -2, 2), circ = oracle::uniform_vector(12, rng);
	const auto out = output<double>(logits, circ);
	const std::vector<PatchLabel> labels{PatchLabel::ball, PatchLabel::no_ball, PatchLabel::ball, PatchLabel::no_ball};
	const std::vector<std::optional<Circle>> circles{Circle{0.5, 0.5, 0.2}, std::nullopt, Circle{0.1, 0.2, 0.3}, std::nullopt};
	double ce = 0;
	for (std::size_t i = 0; i < 4; ++i) {
		const double l0 = logits[2 * i], l1 = logits[2 * i + 1];
		const double picked = labels[i] == PatchLabel::ball ? l1 : l0;
		ce += std::log(std::exp(l0) + std::exp(l1)) - picked;
	}
	EXPECT_NEAR(detection_loss(out, labels, circles, 0.0), ce / 4, 1e-12);
	EXPECT_NEAR(classification_loss(out.logits, labels), ce / 4, 1e-12);
	EXPECT_GT(detection_loss(out, labels, circles, 5.0), ce / 4);
}

TEST(DetectionLoss, OneCoordinateOffByATenth) {
	const auto out = output<double>({-40, 40}, {0.6, 0.5, 0.25});
	const std::vector<PatchLabel> labels{PatchLabel::ball};
	const std::vector<std::optional<Circle>> circles{Circle{0.5, 0.5, 0.25}};
	for (double lambda : {1.0, 5.0}) EXPECT_NEAR(detection_loss(out, labels, circles, lambda), lambda * 0.01 / 3, 1e-12);
}

TEST(DetectionLoss, RegressionAveragedOverPositivesOnly) {
	const auto out = output<double>({-40, 40, 40, -40, 40, -40}, {0.6, 0.5, 0.25, 0.9, 0.9, 0.9, 0.0, 0.0, 0.0});
	const std::vector<PatchLabel> labels{PatchLabel::ball, PatchLabel::no_ball, PatchLabel::no_ball};
	const std::vector<std::optional<Circle>> circles{Circle{0.5, 0.5, 0.25}, std::nullopt, std::nullopt};
	EXPECT_NEAR(detection_loss(out, labels, circles, 5.0), 5.0 * 0.01 / 3, 1e-12);
}

TEST(DetectionLoss, Errors) {
	const auto out = output<double>({0, 1}, {0.5, 0.5, 0.5});
	const std::vector<PatchLabel> labels{PatchLabel::ball};
	EXPECT_THROW(detection_loss(out, labels, std::vector<std::optional<Circle>>{std::nullopt}, 5.0), std::invalid_argument);
	EXPECT_THROW(detection_loss(out, std::vector<PatchLabel>{PatchLabel::ball, PatchLabel::ball},
						 std::vector<std::optional<Circle>>(2), 5.0),
			ShapeError);
}

TEST(DetectionLoss, GradientMatchesCentralDifferences) {
	Detector<double> model(DetectorConfig{.seed = 2});
	std::mt19937_64 rng(4);
	const auto x = oracle::random_tensor<double>({3, 1, 32, 32}, rng);
	const std::vector<PatchLabel> labels{PatchLabel::ball, PatchLabel::no_ball, PatchLabel::ball};
	const std::vector<std::optional<Circle>> circles{Circle{0.4, 0.6, 0.2}, std::nullopt, Circle{0.7, 0.3, 0.35}};
	auto loss = [&](bool backward) {
		const auto out = model.forward(x);
		DetectionLossGrad<double> g;
		const double l = detection_loss(out, labels, circles, 5.0, backward ? &g : nullptr);
		if (backward) model.backward(g.logits, g.circles);
		return l;
	};
	const auto heads = oracle::check_gradients(model.class_head().parameters(), loss, 3, rng);
	EXPECT_GE(heads.checked, 5u);
	EXPECT_LT(heads.max_rel_err, 1e-3);
	const auto reg = oracle::check_gradients(model.regression_head().parameters(), loss, 3, rng);
	EXPECT_GE(reg.checked, 5u);
	EXPECT_LT(reg.max_rel_err, 1e-3);
	const auto backbone = oracle::check_gradients(model.backbone().parameters(), loss, 1, rng);
	EXPECT_GE(backbone.checked, 5u);
	EXPECT_LT(backbone.max_rel_err, 1e-3);
}

TEST(Predict, OutputInvariants) {
	Detector<float> model(DetectorConfig{.seed = 1});
	std::mt19937_64 rng(3);
	for (int t = 0; t < 20; ++t) {
		const auto patch = oracle::random_tensor<float>({1, 32, 32}, rng);
		const auto d = predict(model, patch);
		EXPECT_NEAR(d.class_scores[0] + d.class_scores[1], 1.0, 1e-6);
		EXPECT_EQ(d.ball_confidence, d.class_scores[1]);
		for (double v : {d.circle.cx, d.circle.cy, d.circle.r}) {
			EXPECT_GE(v, 0.0);
			EXPECT_LE(v, 1.0);
		}
		const auto again = predict(model, patch);
		EXPECT_EQ(again.class_scores, d.class_scores);
	}
	EXPECT_THROW(predict(model, Tensor<float>({1, 28, 28})), ShapeError);
	EXPECT_THROW(predict(model, Tensor<float>({32, 32})), ShapeError);
}

TEST(Predict, OverfitPositiveReproducesCircle) {
	const auto pool = corpus(8, 0, 2)[data::Split::train];
	const auto positive = *std::find_if(pool.begin(), pool.end(), [](const auto& s) { return s.is_ball(); });
	const auto set = data::to_tensors<float>(std::vector<data::PatchSample>(8, positive));
	DetectorConfig cfg;
	cfg.epochs = 150;
	cfg.batch_size = 8;
	Detector<float> model(cfg);
	finetune(model, set, set);
	const auto d = predict(model, Tensor<float>({1, 32, 32}, std::vector<float>(set.gray.data(), set.gray.data() + 1024)));
	EXPECT_NEAR(d.circle.cx, positive.circle->cx, 0.05);
	EXPECT_NEAR(d.circle.cy, positive.circle->cy, 0.05);
	EXPECT_NEAR(d.circle.r, positive.circle->r, 0.05);
	EXPECT_GT(d.ball_confidence, 0.5);
}

TEST(Finetune, KeepsBestValidationEpoch) {
	const auto c = corpus(128, 64, 3);
	const auto train = data::to_tensors<float>(c[data::Split::train]), val = data::to_tensors<float>(c[data::Split::val]);
	DetectorConfig cfg;
	cfg.epochs = 4;
	Detector<float> model(cfg);
	const auto r = finetune(model, train, val, "edge");
	ASSERT_EQ(r.curve.size(), 4u);
	std::size_t best = 0;
	for (std::size_t i = 1; i < r.curve.size(); ++i)
		if (r.curve[i].val_loss < r.curve[best].val_loss) best = i;
	EXPECT_EQ(r.best_epoch, int(best) + 1);
	EXPECT_EQ(r.best.provenance.task, "detector:edge");
	EXPECT_EQ(r.best.provenance.epochs, r.best_epoch);
	EXPECT_EQ(model.to_checkpoint("detector:edge", r.best_epoch), r.best);
	EXPECT_DOUBLE_EQ(evaluate(model, val).report.loss, r.curve[best].val_loss);

	Detector<float> again(cfg);
	const auto r2 = finetune(again, train, val, "edge");
	for (std::size_t i = 0; i < r.curve.size(); ++i) {
		EXPECT_EQ(r2.curve[i].train_loss, r.curve[i].train_loss);
		EXPECT_EQ(r2.curve[i].val_loss, r.curve[i].val_loss);
	}
}

TEST(Finetune, RandomInitReachesF1AboveEightTenths) {
	const auto c = corpus(2000, 400, 12345);
	const auto train = data::to_tensors<float>(c[data::Split::train]), val = data::to_tensors<float>(c[data::Split::val]);
	std::vector<double> f1;
	for (std::uint64_t seed : {0u, 1u, 2u}) {
		DetectorConfig cfg;
		cfg.epochs = 10;
		cfg.seed = seed;
		Detector<float> model(cfg);
		f1.push_back(finetune(model, train, val).curve.back().val_f1);
	}
	std::sort(f1.begin(), f1.end());
	EXPECT_GT(f1[1], 0.8) << f1[0] << " " << f1[1] << " " << f1[2];
}

TEST(Finetune, RejectsEmptySets) {
	Detector<float> model(DetectorConfig{});
	data::PatchTensors<float> empty;
	const auto set = data::to_tensors<float>(corpus(4, 0, 0)[data::Split::train]);
	EXPECT_THROW(finetune(model, empty, set), std::invalid_argument);
	EXPECT_THROW(finetune(model, set, empty), std::invalid_argument);
	EXPECT_THROW(evaluate(model, empty), std::invalid_argument);
}
