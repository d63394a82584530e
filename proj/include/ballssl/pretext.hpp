#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/backbone.hpp"
#include "ballssl/checkpoint.hpp"
#include "ballssl/data/augment.hpp"
#include "ballssl/data/batch.hpp"
#include "ballssl/nn/optimizer.hpp"

namespace ballssl {

/// Raised when training produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- triplet

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
	if (a.size() != b.size()) throw ShapeError("distance: dimension mismatch");
	double s = 0;
	for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
	return std::sqrt(s);
}

/// max(d(a,p) - d(a,n) + margin, 0) with Euclidean d on unnormalized embeddings.
inline double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
		std::span<const double> negative, double margin) {
	if (!(margin > 0)) throw std::invalid_argument("triplet margin must be > 0");
	if (anchor.size() != positive.size() || anchor.size() != negative.size())
		throw ShapeError("triplet_loss: embedding dimension mismatch");
	return std::max(euclidean_distance(anchor, positive) - euclidean_distance(anchor, negative) + margin, 0.0);
}

struct Triplet {
	std::size_t anchor = 0;
	std::size_t positive = 0;
	std::size_t negative = 0;

	friend bool operator==(const Triplet&, const Triplet&) = default;
};

namespace detail {

template<typename Scalar>
double row_distance(const Tensor<Scalar>& e, std::size_t i, std::size_t j) {
	const std::size_t D = e.dim(1);
	double s = 0;
	for (std::size_t k = 0; k < D; ++k) {
		const double d = double(e[i * D + k]) - double(e[j * D + k]);
		s += d * d;
	}
	return std::sqrt(s);
}

}  // namespace detail

/**
 * Batch-hard mining. For every ball anchor: the farthest other ball sample and the
 * nearest no_ball sample. Ties go to the lowest index.
 */
template<typename Scalar>
std::vector<Triplet> mine_hard_triplets(const Tensor<Scalar>& embeddings, const std::vector<bool>& is_ball) {
	if (embeddings.rank() != 2 || embeddings.dim(0) != is_ball.size())
		throw ShapeError("mine_hard_triplets: embeddings must be N x D with N labels");
	const std::size_t N = is_ball.size();
	const auto n_pos = static_cast<std::size_t>(std::count(is_ball.begin(), is_ball.end(), true));
	if (n_pos < 2 || n_pos == N) throw std::invalid_argument("mining needs >= 2 ball samples and >= 1 no_ball sample");
	std::vector<Triplet> out;
	for (std::size_t a = 0; a < N; ++a) {
		if (!is_ball[a]) continue;
		Triplet t{a, N, N};
		double far = -1, near = std::numeric_limits<double>::infinity();
		for (std::size_t j = 0; j < N; ++j) {
			if (j == a) continue;
			const double d = detail::row_distance(embeddings, a, j);
			if (is_ball[j] && d > far) {
				far = d;
				t.positive = j;
			} else if (!is_ball[j] && d < near) {
				near = d;
				t.negative = j;
			}
		}
		out.push_back(t);
	}
	return out;
}

/**
 * Mean hinge loss over `triplets` on the rows of `embeddings`; writes dLoss/dEmbeddings
 * into `grad` (same shape) when given. Inactive hinges and zero distances contribute
 * no gradient.
 */
template<typename Scalar>
double triplet_batch_loss(const Tensor<Scalar>& embeddings, const std::vector<Triplet>& triplets, double margin,
		Tensor<Scalar>* grad = nullptr) {
	if (grad) *grad = Tensor<Scalar>(embeddings.shape());
	if (triplets.empty()) return 0;
	const std::size_t D = embeddings.dim(1);
	const double scale = 1.0 / double(triplets.size());
	double total = 0;
	for (const auto& t : triplets) {
		const double dap = detail::row_distance(embeddings, t.anchor, t.positive);
		const double dan = detail::row_distance(embeddings, t.anchor, t.negative);
		const double l = dap - dan + margin;
		if (l <= 0) continue;
		total += l;
		if (!grad) continue;
		for (std::size_t k = 0; k < D; ++k) {
			const double a = embeddings[t.anchor * D + k];
			const double up = dap > 0 ? (a - double(embeddings[t.positive * D + k])) / dap : 0.0;
			const double un = dan > 0 ? (a - double(embeddings[t.negative * D + k])) / dan : 0.0;
			(*grad)[t.anchor * D + k] += static_cast<Scalar>(scale * (up - un));
			(*grad)[t.positive * D + k] -= static_cast<Scalar>(scale * up);
			(*grad)[t.negative * D + k] += static_cast<Scalar>(scale * un);
		}
	}
	return total * scale;
}

/// Backbone followed by a linear projection of the flattened feature map.
template<typename Scalar>
class EmbeddingNet {
public:
	EmbeddingNet(BackboneConfig config, std::size_t embedding_dim, std::uint64_t seed) :
			backbone_(std::move(config), seed),
			projection_("projection", backbone_.config().feature_dim(), embedding_dim) {
		Rng rng = make_rng(seed, "projection");
		projection_.init(rng, 3.0);
	}

	Backbone<Scalar>& backbone() { return backbone_; }
	nn::Dense<Scalar>& projection() { return projection_; }
	std::size_t embedding_dim() const { return projection_.out_features(); }

	/// N x 1 x S x S -> N x embedding_dim
	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		const Tensor<Scalar> f = backbone_.forward(x);
		features_shape_ = f.shape();
		return projection_.forward(f.reshaped({f.dim(0), f.size() / f.dim(0)}));
	}

	void backward(const Tensor<Scalar>& g) { backbone_.backward(projection_.backward(g).reshaped(features_shape_)); }

	nn::ParameterList<Scalar> parameters() {
		auto out = backbone_.parameters();
		for (auto* p : projection_.parameters()) out.push_back(p);
		return out;
	}

private:
	Backbone<Scalar> backbone_;
	nn::Dense<Scalar> projection_;
	Shape features_shape_;
};

/// Embedding of a single 1 x S x S patch.
template<typename Scalar>
std::vector<Scalar> embed(EmbeddingNet<Scalar>& model, const Tensor<Scalar>& patch) {
	if (patch.rank() != 3) throw ShapeError("embed: expected 1 x H x W patch, got " + shape_string(patch.shape()));
	const auto e = model.forward(patch.reshaped({1, patch.dim(0), patch.dim(1), patch.dim(2)}));
	return e.storage();
}

// ---------------------------------------------------------------- sobel

/**
 * Sobel gradient magnitude of an H x W plane with reflect-101 borders, divided by
 * its maximum (an all-zero map when the maximum is 0).
 */
template<typename Scalar>
std::vector<Scalar> sobel_magnitude(std::span<const Scalar> plane, int H, int W) {
	if (plane.size() != std::size_t(H) * W) throw ShapeError("sobel: plane size mismatch");
	auto px = [&](int y, int x) { return double(plane[std::size_t(data::detail::reflect101(y, H)) * W + data::detail::reflect101(x, W)]); };
	std::vector<double> mag(plane.size());
	double peak = 0;
	for (int y = 0; y < H; ++y)
		for (int x = 0; x < W; ++x) {
			const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
					(px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
			const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
					(px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
			const double m = std::sqrt(gx * gx + gy * gy);
			mag[std::size_t(y) * W + x] = m;
			peak = std::max(peak, m);
		}
	std::vector<Scalar> out(plane.size(), Scalar(0));
	if (peak > 0)
		for (std::size_t i = 0; i < mag.size(); ++i) out[i] = static_cast<Scalar>(mag[i] / peak);
	return out;
}

/// Edge target of a 1 x H x W image.
template<typename Scalar>
Tensor<Scalar> sobel_target(const Tensor<Scalar>& image) {
	if (image.rank() != 3 || image.dim(0) != 1)
		throw ShapeError("sobel_target: expected 1 x H x W, got " + shape_string(image.shape()));
	return Tensor<Scalar>(image.shape(), sobel_magnitude<Scalar>(image.values(), int(image.dim(1)), int(image.dim(2))));
}

/// Per-image edge targets for an N x 1 x H x W batch.
template<typename Scalar>
Tensor<Scalar> sobel_targets(const Tensor<Scalar>& batch) {
	Tensor<Scalar> out(batch.shape());
	const int H = int(batch.dim(2)), W = int(batch.dim(3));
	const std::size_t plane = std::size_t(H) * W;
	for (std::size_t n = 0; n < batch.dim(0); ++n) {
		const auto m = sobel_magnitude<Scalar>(std::span<const Scalar>(batch.data() + n * plane, plane), H, W);
		std::copy(m.begin(), m.end(), out.data() + n * plane);
	}
	return out;
}

// ---------------------------------------------------------------- reconstruction

/// Upsampling decoder: transposed 2x2/stride-2 convolutions with ReLU, then a 3x3 convolution to C channels.
template<typename Scalar>
class Decoder {
public:
	Decoder() = default;
	Decoder(std::vector<std::size_t> widths, std::size_t out_channels, std::uint64_t seed) :
			widths_(std::move(widths)),
			out_("decoder.out", widths_.back(), out_channels) {
		if (widths_.size() < 2) throw ConfigError("decoder needs at least one upsampling layer");
		for (std::size_t i = 0; i + 1 < widths_.size(); ++i)
			ups_.emplace_back("decoder.up." + std::to_string(i), widths_[i], widths_[i + 1]);
		masks_.resize(ups_.size());
		Rng rng = make_rng(seed, "decoder");
		for (auto& u : ups_) u.init(rng);
		out_.init(rng);
	}

	/// 32 -> 32 -> 16 -> 8 channels over three 2x upsamplings.
	static std::vector<std::size_t> standard_widths() { return {32, 32, 16, 8}; }

	std::size_t out_channels() const { return out_.out_channels(); }

	Tensor<Scalar> forward(const Tensor<Scalar>& features) {
		Tensor<Scalar> h = features;
		for (std::size_t i = 0; i < ups_.size(); ++i) {
			h = ups_[i].forward(h);
			masks_[i] = nn::relu_inplace(h);
		}
		return out_.forward(h);
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		Tensor<Scalar> d = out_.backward(g);
		for (std::size_t i = ups_.size(); i-- > 0;) {
			nn::relu_backward_inplace(d, masks_[i]);
			d = ups_[i].backward(d);
		}
		return d;
	}

	nn::ParameterList<Scalar> parameters() {
		nn::ParameterList<Scalar> out;
		for (auto& u : ups_)
			for (auto* p : u.parameters()) out.push_back(p);
		for (auto* p : out_.parameters()) out.push_back(p);
		return out;
	}

private:
	std::vector<std::size_t> widths_;
	std::vector<nn::TransposedConv2x2<Scalar>> ups_;
	nn::Conv3x3<Scalar> out_;
	std::vector<std::vector<bool>> masks_;
};

/// Backbone + decoder; C = 3 for colorization, C = 1 for edge prediction.
template<typename Scalar>
class EncoderDecoder {
public:
	EncoderDecoder(BackboneConfig config, std::size_t out_channels, std::uint64_t seed) :
			backbone_(std::move(config), seed),
			decoder_(Decoder<Scalar>::standard_widths(), out_channels, seed) {
		if (backbone_.config().output_channels() != Decoder<Scalar>::standard_widths().front())
			throw ConfigError("decoder input width does not match backbone output channels");
	}

	Backbone<Scalar>& backbone() { return backbone_; }
	Decoder<Scalar>& decoder() { return decoder_; }

	Tensor<Scalar> forward(const Tensor<Scalar>& x) { return decoder_.forward(backbone_.forward(x)); }
	void backward(const Tensor<Scalar>& g) { backbone_.backward(decoder_.backward(g)); }

	nn::ParameterList<Scalar> parameters() {
		auto out = backbone_.parameters();
		for (auto* p : decoder_.parameters()) out.push_back(p);
		return out;
	}

private:
	Backbone<Scalar> backbone_;
	Decoder<Scalar> decoder_;
};

/// C x S x S reconstruction of one 1 x S x S patch.
template<typename Scalar>
Tensor<Scalar> decode(EncoderDecoder<Scalar>& model, const Tensor<Scalar>& patch) {
	if (patch.rank() != 3) throw ShapeError("decode: expected 1 x H x W patch, got " + shape_string(patch.shape()));
	auto y = model.forward(patch.reshaped({1, patch.dim(0), patch.dim(1), patch.dim(2)}));
	return y.reshaped({y.dim(1), y.dim(2), y.dim(3)});
}

/// Mean squared error; writes dLoss/dPrediction into `grad` when given.
template<typename Scalar>
double reconstruction_loss(const Tensor<Scalar>& prediction, const Tensor<Scalar>& target, Tensor<Scalar>* grad = nullptr) {
	prediction.require_same_shape(target, "reconstruction_loss");
	if (prediction.empty()) throw ShapeError("reconstruction_loss: empty tensors");
	double s = 0;
	const double n = double(prediction.size());
	if (grad) *grad = Tensor<Scalar>(prediction.shape());
	for (std::size_t i = 0; i < prediction.size(); ++i) {
		const double d = double(prediction[i]) - double(target[i]);
		s += d * d;
		if (grad) (*grad)[i] = static_cast<Scalar>(2 * d / n);
	}
	return s / n;
}

// ---------------------------------------------------------------- training

enum class PretextTask { triplet, colorization, edge };

inline std::string task_name(PretextTask t) {
	switch (t) {
		case PretextTask::triplet: return "triplet";
		case PretextTask::colorization: return "colorization";
		case PretextTask::edge: return "edge";
	}
	return "?";
}

inline PretextTask parse_pretext_task(const std::string& s) {
	if (s == "triplet") return PretextTask::triplet;
	if (s == "color" || s == "colorization") return PretextTask::colorization;
	if (s == "edge") return PretextTask::edge;
	throw std::invalid_argument("unknown pretext task '" + s + "' (expected triplet, color or edge)");
}

struct PretextTrainConfig {
	PretextTask task = PretextTask::edge;
	int epochs = 5;
	std::size_t batch_size = 32;
	double learning_rate = 1e-3;
	double margin = 0.2;
	std::size_t embedding_dim = 64;
	std::uint64_t seed = 0;
	BackboneConfig backbone = BackboneConfig::standard();

	void validate() const {
		if (epochs < 1) throw ConfigError("epochs must be >= 1");
		if (batch_size < 3) throw ConfigError("batch_size must be >= 3");
		if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
		if (!(margin > 0)) throw ConfigError("margin must be > 0");
		backbone.validate();
	}

	nlohmann::json to_json() const {
		return {{"task", task_name(task)}, {"epochs", epochs}, {"batch_size", batch_size}, {"learning_rate", learning_rate},
				{"margin", margin}, {"embedding_dim", embedding_dim}, {"seed", seed}, {"backbone", backbone.to_json()}};
	}
	std::string digest() const { return sha256_hex(to_json().dump()); }
};

struct PretextStep {
	int epoch = 0;
	std::size_t batch = 0;
	double loss = 0;
	std::span<const std::size_t> indices;
	const std::vector<Triplet>* triplets = nullptr;  // triplet task only, indices into `indices`
};

struct PretextResult {
	Checkpoint checkpoint;
	std::vector<double> epoch_loss;
	std::vector<double> wallclock_s;
	std::size_t skipped_batches = 0;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
	std::vector<std::size_t> order(n);
	std::iota(order.begin(), order.end(), 0);
	std::shuffle(order.begin(), order.end(), rng);
	std::vector<std::vector<std::size_t>> out;
	for (std::size_t i = 0; i < n; i += batch_size)
		out.emplace_back(order.begin() + std::ptrdiff_t(i), order.begin() + std::ptrdiff_t(std::min(n, i + batch_size)));
	return out;
}

inline void check_finite(double loss, int epoch, std::size_t batch) {
	if (!std::isfinite(loss))
		throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
}

}  // namespace detail

/**
 * Trains the backbone with one pretext objective and returns a checkpoint holding
 * the backbone and the task head, plus the per-epoch mean training loss.
 * Triplet batches lacking two ball patches or one no_ball patch are skipped.
 */
inline PretextResult train_pretext(const PretextTrainConfig& config, const data::PatchTensors<float>& data,
		const std::function<void(const PretextStep&)>& on_step = {}) {
	config.validate();
	if (data.size() == 0) throw std::invalid_argument("train_pretext: no samples");
	using clock = std::chrono::steady_clock;
	PretextResult result;
	Rng rng = make_rng(config.seed, "pretext/" + task_name(config.task));
	nn::Adam<float> optimizer({config.learning_rate});

	auto run = [&](auto& model, auto&& step_fn) {
		auto params = model.parameters();
		const auto t0 = clock::now();
		for (int epoch = 1; epoch <= config.epochs; ++epoch) {
			double sum = 0;
			std::size_t count = 0;
			const auto batches = detail::shuffled_batches(data.size(), config.batch_size, rng);
			for (std::size_t b = 0; b < batches.size(); ++b) {
				nn::zero_grad(params);
				const auto loss = step_fn(model, batches[b], epoch, b);
				if (!loss) {
					++result.skipped_batches;
					continue;
				}
				detail::check_finite(*loss, epoch, b);
				optimizer.step(params);
				sum += *loss;
				++count;
			}
			result.epoch_loss.push_back(count ? sum / double(count) : 0.0);
			result.wallclock_s.push_back(std::chrono::duration<double>(clock::now() - t0).count());
		}
		export_parameters(params, result.checkpoint);
	};

	if (config.task == PretextTask::triplet) {
		EmbeddingNet<float> model(config.backbone, config.embedding_dim, config.seed);
		run(model, [&](auto& m, const std::vector<std::size_t>& idx, int epoch, std::size_t b) -> std::optional<double> {
			std::vector<bool> is_ball;
			for (std::size_t i : idx) is_ball.push_back(data.labels[i] == data::PatchLabel::ball);
			const auto n_pos = std::count(is_ball.begin(), is_ball.end(), true);
			if (n_pos < 2 || std::size_t(n_pos) == idx.size()) return std::nullopt;
			const auto emb = m.forward(data::gather_rows(data.gray, idx));
			const auto triplets = mine_hard_triplets(emb, is_ball);
			Tensor<float> grad;
			const double loss = triplet_batch_loss(emb, triplets, config.margin, &grad);
			detail::check_finite(loss, epoch, b);
			m.backward(grad);
			if (on_step) on_step({epoch, b, loss, idx, &triplets});
			return loss;
		});
	} else {
		const bool color = config.task == PretextTask::colorization;
		const Tensor<float> targets = color ? data.color : sobel_targets(data.gray);
		EncoderDecoder<float> model(config.backbone, color ? 3 : 1, config.seed);
		run(model, [&](auto& m, const std::vector<std::size_t>& idx, int epoch, std::size_t b) -> std::optional<double> {
			const auto pred = m.forward(data::gather_rows(data.gray, idx));
			Tensor<float> grad;
			const double loss = reconstruction_loss(pred, data::gather_rows(targets, idx), &grad);
			detail::check_finite(loss, epoch, b);
			m.backward(grad);
			if (on_step) on_step({epoch, b, loss, idx, nullptr});
			return loss;
		});
	}
	result.checkpoint.provenance = {task_name(config.task), config.epochs, config.seed, config.digest()};
	return result;
}

inline PretextResult train_pretext(const PretextTrainConfig& config, const std::vector<data::PatchSample>& samples,
		const std::function<void(const PretextStep&)>& on_step = {}) {
	return train_pretext(config, data::to_tensors<float>(samples), on_step);
}

}  // namespace ballssl
