#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ballssl/detector.hpp"
#include "ballssl/metrics.hpp"
#include "ballssl/nn/optimizer.hpp"
#include "ballssl/pretext.hpp"

namespace ballssl {

struct PatchPrediction {
	double ball_confidence = 0;
	Circle circle;
};

struct Evaluation {
	metrics::MetricsReport report;
	std::vector<PatchPrediction> predictions;
	/// circle IoU per sample (0 for no_ball truths).
	std::vector<double> iou;
};

/**
 * Scores predictions against patch labels. mean_iou averages over true positives;
 * mAP treats every patch as a detection that can only match its own truth circle.
 */
inline metrics::MetricsReport score_predictions(const std::vector<PatchPrediction>& preds,
		std::span<const data::PatchLabel> labels, std::span<const std::optional<Circle>> circles, double loss,
		std::vector<double>* per_sample_iou = nullptr) {
	if (preds.size() != labels.size() || circles.size() != labels.size())
		throw std::invalid_argument("score_predictions: length mismatch");
	metrics::MetricsReport r;
	r.loss = loss;
	r.samples = preds.size();
	std::vector<double> conf;
	std::unique_ptr<bool[]> is_ball(new bool[preds.size()]);
	std::vector<metrics::ScoredCircle> dets;
	std::vector<metrics::TruthCircle> truths;
	double iou_tp = 0, iou_all = 0;
	std::size_t n_pos = 0;
	if (per_sample_iou) per_sample_iou->assign(preds.size(), 0.0);
	for (std::size_t i = 0; i < preds.size(); ++i) {
		const bool ball = labels[i] == data::PatchLabel::ball;
		conf.push_back(preds[i].ball_confidence);
		is_ball[i] = ball;
		dets.push_back({preds[i].circle, preds[i].ball_confidence, i});
		if (!ball) continue;
		truths.push_back({*circles[i], i});
		const double iou = metrics::circle_iou(preds[i].circle, *circles[i]);
		if (per_sample_iou) (*per_sample_iou)[i] = iou;
		iou_all += iou;
		++n_pos;
		if (preds[i].ball_confidence >= 0.5) {
			iou_tp += iou;
			++r.true_positives;
		}
	}
	const auto cm = metrics::classification_metrics(conf, std::span<const bool>(is_ball.get(), preds.size()));
	r.accuracy = cm.accuracy;
	r.precision = cm.precision;
	r.recall = cm.recall;
	r.f1 = cm.f1;
	r.mean_iou = r.true_positives ? iou_tp / double(r.true_positives) : 0.0;
	r.mean_iou_all_positives = n_pos ? iou_all / double(n_pos) : 0.0;
	r.ap_per_threshold = metrics::ap_table(dets, truths);
	r.map_range = metrics::map_range(dets, truths);
	return r;
}

/// Loss, classification metrics, circle IoU and mAP of `model` on a patch set.
template<typename Scalar>
Evaluation evaluate(Detector<Scalar>& model, const data::PatchTensors<Scalar>& set) {
	if (set.size() == 0) throw std::invalid_argument("evaluate: empty test set");
	const auto out = forward_all(model, set.gray);
	const double loss = detection_loss(out, set.labels, set.circles, model.config().regression_weight);
	Evaluation ev;
	for (std::size_t i = 0; i < set.size(); ++i) {
		const auto d = to_detection_output(out, i);
		ev.predictions.push_back({d.ball_confidence, d.circle});
	}
	ev.report = score_predictions(ev.predictions, set.labels, set.circles, loss, &ev.iou);
	return ev;
}

struct EpochMetrics {
	int epoch = 0;
	double train_loss = 0;
	double val_loss = 0;
	double val_acc = 0;
	double val_f1 = 0;
	double val_mean_iou = 0;
};

struct FinetuneResult {
	std::vector<EpochMetrics> curve;
	int best_epoch = 0;
	Checkpoint best;
};

/**
 * Supervised training of the whole detector with Adam. Validation metrics are
 * recorded after every epoch; on return `model` holds the parameters of the epoch
 * with the lowest validation loss.
 */
inline FinetuneResult finetune(Detector<float>& model, const data::PatchTensors<float>& train,
		const data::PatchTensors<float>& val, const std::string& init_name = "random") {
	const DetectorConfig& cfg = model.config();
	if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("finetune: train and val sets must be non-empty");
	Rng rng = make_rng(cfg.seed, "finetune/shuffle");
	auto params = model.parameters();
	nn::Adam<float> optimizer({cfg.learning_rate});
	FinetuneResult result;
	double best_loss = std::numeric_limits<double>::infinity();
	for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
		double sum = 0;
		const auto batches = detail::shuffled_batches(train.size(), cfg.batch_size, rng);
		for (std::size_t b = 0; b < batches.size(); ++b) {
			const auto& idx = batches[b];
			std::vector<data::PatchLabel> labels;
			std::vector<std::optional<Circle>> circles;
			for (std::size_t i : idx) {
				labels.push_back(train.labels[i]);
				circles.push_back(train.circles[i]);
			}
			nn::zero_grad(params);
			const auto out = model.forward(data::gather_rows(train.gray, idx));
			DetectionLossGrad<float> grad;
			const double loss = detection_loss(out, labels, circles, cfg.regression_weight, &grad);
			detail::check_finite(loss, epoch, b);
			model.backward(grad.logits, grad.circles);
			optimizer.step(params);
			sum += loss;
		}
		const auto ev = evaluate(model, val);
		detail::check_finite(ev.report.loss, epoch, batches.size());
		result.curve.push_back({epoch, sum / double(batches.size()), ev.report.loss, ev.report.accuracy, ev.report.f1,
				ev.report.mean_iou});
		if (ev.report.loss < best_loss) {
			best_loss = ev.report.loss;
			result.best_epoch = epoch;
			result.best = model.to_checkpoint("detector:" + init_name, epoch);
		}
	}
	model.load_all(result.best);
	return result;
}

}  // namespace ballssl
