#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/backbone.hpp"
#include "ballssl/checkpoint.hpp"
#include "ballssl/data/batch.hpp"

namespace ballssl {

struct DetectorConfig {
	BackboneConfig backbone = BackboneConfig::standard();
	/// Hidden widths; the class head ends in 2 logits, the regression head in 3 outputs.
	std::vector<std::size_t> class_hidden{136};
	std::vector<std::size_t> regression_hidden{512, 128};
	double regression_weight = 5.0;
	double learning_rate = 1e-3;
	int epochs = 10;
	std::size_t batch_size = 32;
	std::uint64_t seed = 0;

	std::vector<std::size_t> class_widths() const {
		std::vector<std::size_t> w{backbone.feature_dim()};
		w.insert(w.end(), class_hidden.begin(), class_hidden.end());
		w.push_back(2);
		return w;
	}
	std::vector<std::size_t> regression_widths() const {
		std::vector<std::size_t> w{backbone.feature_dim()};
		w.insert(w.end(), regression_hidden.begin(), regression_hidden.end());
		w.push_back(3);
		return w;
	}

	void validate() const {
		backbone.validate();
		if (regression_weight < 0) throw ConfigError("regression_weight must be >= 0");
		if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
		if (epochs < 1) throw ConfigError("epochs must be >= 1");
		if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
	}

	nlohmann::json to_json() const {
		return {{"backbone", backbone.to_json()}, {"class_hidden", class_hidden}, {"regression_hidden", regression_hidden},
				{"regression_weight", regression_weight}, {"learning_rate", learning_rate}, {"epochs", epochs},
				{"batch_size", batch_size}, {"seed", seed}};
	}
	std::string digest() const { return sha256_hex(to_json().dump()); }
};

/// Closed-form parameter count of an MLP with biases.
inline std::size_t mlp_parameter_count(const std::vector<std::size_t>& widths) {
	std::size_t n = 0;
	for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += dense_parameter_count(widths[i], widths[i + 1]);
	return n;
}

template<typename Scalar>
struct DetectorBatchOutput {
	Tensor<Scalar> logits;   // N x 2, index 1 = ball
	Tensor<Scalar> circles;  // N x 3 (cx, cy, r) after the logistic squashing
};

/// Per-patch prediction.
struct DetectionOutput {
	std::array<double, 2> class_scores{};  // softmax over (no_ball, ball)
	Circle circle;
	double ball_confidence = 0;
};

/// Init gain of both heads' output layers; keeps initial logits near zero whatever the feature scale.
inline constexpr double kHeadOutputGain = 0.03;

inline std::array<double, 2> softmax2(double l0, double l1) {
	const double m = std::max(l0, l1);
	const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
	return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

/**
 * Backbone + classification head (2 logits) + regression head (cx, cy, r through a
 * logistic). Both heads read the flattened feature map.
 */
template<typename Scalar>
class Detector {
public:
	explicit Detector(const DetectorConfig& config) :
			config_(config),
			backbone_(config.backbone, config.seed),
			class_head_("class_head", config.class_widths()),
			regression_head_("regression_head", config.regression_widths()) {
		config_.validate();
		Rng rc = make_rng(config.seed, "class_head");
		class_head_.init(rc, kHeadOutputGain);
		Rng rr = make_rng(config.seed, "regression_head");
		regression_head_.init(rr, kHeadOutputGain);
	}

	const DetectorConfig& config() const { return config_; }
	Backbone<Scalar>& backbone() { return backbone_; }
	nn::Mlp<Scalar>& class_head() { return class_head_; }
	nn::Mlp<Scalar>& regression_head() { return regression_head_; }

	/// Replaces the backbone weights with the checkpoint's "backbone.*" arrays; heads are untouched.
	void load_backbone(const Checkpoint& ckpt) {
		if (import_parameters(backbone_.parameters(), ckpt, "backbone.") == 0)
			throw IncompatibleCheckpoint("checkpoint holds no backbone parameters");
	}

	/// Loads every array this detector has (backbone and both heads).
	void load_all(const Checkpoint& ckpt) { import_parameters(parameters(), ckpt); }

	DetectorBatchOutput<Scalar> forward(const Tensor<Scalar>& x) {
		const Tensor<Scalar> f = backbone_.forward(x);
		features_shape_ = f.shape();
		const Tensor<Scalar> flat = f.reshaped({f.dim(0), f.size() / f.dim(0)});
		DetectorBatchOutput<Scalar> out{class_head_.forward(flat), regression_head_.forward(flat)};
		for (auto& v : out.circles.values()) v = static_cast<Scalar>(1 / (1 + std::exp(-double(v))));
		squashed_ = out.circles;
		return out;
	}

	/// Gradients with respect to the logits and the squashed circles.
	void backward(const Tensor<Scalar>& grad_logits, const Tensor<Scalar>& grad_circles) {
		Tensor<Scalar> g_raw = grad_circles;
		for (std::size_t i = 0; i < g_raw.size(); ++i) g_raw[i] *= squashed_[i] * (1 - squashed_[i]);
		Tensor<Scalar> g = class_head_.backward(grad_logits);
		g += regression_head_.backward(g_raw);
		backbone_.backward(g.reshaped(features_shape_));
	}

	/// Class logits only; the regression head is not evaluated.
	Tensor<Scalar> classify(const Tensor<Scalar>& x) {
		const Tensor<Scalar> f = backbone_.forward(x);
		features_shape_ = f.shape();
		return class_head_.forward(f.reshaped({f.dim(0), f.size() / f.dim(0)}));
	}

	void backward_classify(const Tensor<Scalar>& grad_logits) {
		backbone_.backward(class_head_.backward(grad_logits).reshaped(features_shape_));
	}

	nn::ParameterList<Scalar> parameters() {
		auto out = classifier_parameters();
		for (auto* p : regression_head_.parameters()) out.push_back(p);
		return out;
	}

	/// Backbone + classification head: the parameters adapted by meta-learning.
	nn::ParameterList<Scalar> classifier_parameters() {
		auto out = backbone_.parameters();
		for (auto* p : class_head_.parameters()) out.push_back(p);
		return out;
	}

	Checkpoint to_checkpoint(const std::string& task, int epochs) {
		Checkpoint c;
		c.provenance = {task, epochs, config_.seed, config_.digest()};
		export_parameters(parameters(), c);
		return c;
	}

private:
	DetectorConfig config_;
	Backbone<Scalar> backbone_;
	nn::Mlp<Scalar> class_head_;
	nn::Mlp<Scalar> regression_head_;
	Shape features_shape_;
	Tensor<Scalar> squashed_;
};

/// Mean two-class cross-entropy of N x 2 logits (index 1 = ball).
template<typename Scalar>
double classification_loss(const Tensor<Scalar>& logits, std::span<const data::PatchLabel> labels,
		Tensor<Scalar>* grad = nullptr) {
	const std::size_t N = labels.size();
	if (logits.shape() != Shape{N, 2}) throw ShapeError("classification_loss: logits are not N x 2");
	if (N == 0) throw std::invalid_argument("classification_loss: empty batch");
	if (grad) *grad = Tensor<Scalar>({N, 2});
	double ce = 0;
	for (std::size_t i = 0; i < N; ++i) {
		const double l0 = logits[2 * i], l1 = logits[2 * i + 1];
		const int y = labels[i] == data::PatchLabel::ball ? 1 : 0;
		const double m = std::max(l0, l1);
		ce += m + std::log(std::exp(l0 - m) + std::exp(l1 - m)) - (y ? l1 : l0);
		if (grad) {
			const auto p = softmax2(l0, l1);
			(*grad)[2 * i] = static_cast<Scalar>((p[0] - (y == 0)) / double(N));
			(*grad)[2 * i + 1] = static_cast<Scalar>((p[1] - (y == 1)) / double(N));
		}
	}
	return ce / double(N);
}

template<typename Scalar>
struct DetectionLossGrad {
	Tensor<Scalar> logits;
	Tensor<Scalar> circles;
};

/**
 * Mean cross-entropy over the batch plus regression_weight times the mean, over
 * ball samples, of the per-coordinate squared error on (cx, cy, r). The regression
 * term is 0 for batches without balls.
 */
template<typename Scalar>
double detection_loss(const DetectorBatchOutput<Scalar>& out, std::span<const data::PatchLabel> labels,
		std::span<const std::optional<Circle>> circles, double regression_weight,
		DetectionLossGrad<Scalar>* grad = nullptr) {
	const std::size_t N = labels.size();
	if (out.logits.shape() != Shape{N, 2} || out.circles.shape() != Shape{N, 3} || circles.size() != N)
		throw ShapeError("detection_loss: outputs and targets are not aligned");
	if (N == 0) throw std::invalid_argument("detection_loss: empty batch");
	std::size_t positives = 0;
	for (std::size_t i = 0; i < N; ++i) {
		if (labels[i] == data::PatchLabel::ball) {
			if (!circles[i]) throw std::invalid_argument("detection_loss: ball sample without circle");
			++positives;
		}
	}
	if (grad) grad->circles = Tensor<Scalar>({N, 3});
	const double ce = classification_loss(out.logits, labels, grad ? &grad->logits : nullptr);
	double reg = 0;
	for (std::size_t i = 0; i < N; ++i) {
		if (labels[i] != data::PatchLabel::ball) continue;
		const double t[3] = {circles[i]->cx, circles[i]->cy, circles[i]->r};
		for (int k = 0; k < 3; ++k) {
			const double d = double(out.circles[3 * i + k]) - t[k];
			reg += d * d / 3.0;
			if (grad) grad->circles[3 * i + k] = static_cast<Scalar>(regression_weight * 2 * d / (3.0 * double(positives)));
		}
	}
	return ce + (positives ? regression_weight * reg / double(positives) : 0.0);
}

template<typename Scalar>
DetectionOutput to_detection_output(const DetectorBatchOutput<Scalar>& out, std::size_t i) {
	DetectionOutput d;
	d.class_scores = softmax2(out.logits[2 * i], out.logits[2 * i + 1]);
	d.ball_confidence = d.class_scores[1];
	d.circle = {double(out.circles[3 * i]), double(out.circles[3 * i + 1]), double(out.circles[3 * i + 2])};
	return d;
}

/// Prediction for one 1 x S x S patch with values in [0,1].
template<typename Scalar>
DetectionOutput predict(Detector<Scalar>& model, const Tensor<Scalar>& patch) {
	if (patch.rank() != 3) throw ShapeError("predict: expected 1 x H x W patch, got " + shape_string(patch.shape()));
	return to_detection_output(model.forward(patch.reshaped({1, patch.dim(0), patch.dim(1), patch.dim(2)})), 0);
}

/// Runs the model over a whole patch set in chunks and concatenates the outputs.
template<typename Scalar>
DetectorBatchOutput<Scalar> forward_all(Detector<Scalar>& model, const Tensor<Scalar>& inputs, std::size_t chunk = 128) {
	const std::size_t N = inputs.dim(0);
	DetectorBatchOutput<Scalar> all{Tensor<Scalar>({N, 2}), Tensor<Scalar>({N, 3})};
	std::vector<std::size_t> idx;
	for (std::size_t start = 0; start < N; start += chunk) {
		idx.clear();
		for (std::size_t i = start; i < std::min(N, start + chunk); ++i) idx.push_back(i);
		const auto out = model.forward(data::gather_rows(inputs, idx));
		std::copy(out.logits.storage().begin(), out.logits.storage().end(), all.logits.data() + 2 * start);
		std::copy(out.circles.storage().begin(), out.circles.storage().end(), all.circles.data() + 3 * start);
	}
	return all;
}

}  // namespace ballssl
