#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/checkpoint.hpp"
#include "ballssl/data/batch.hpp"
#include "ballssl/data/episode.hpp"
#include "ballssl/detector.hpp"
#include "ballssl/nn/optimizer.hpp"
#include "ballssl/pretext.hpp"

namespace ballssl::meta {

enum class MetaOptimizer { adam, sgd };

inline std::string optimizer_name(MetaOptimizer o) { return o == MetaOptimizer::adam ? "adam" : "sgd"; }

inline MetaOptimizer parse_optimizer(const std::string& s) {
	if (s == "adam") return MetaOptimizer::adam;
	if (s == "sgd") return MetaOptimizer::sgd;
	throw ConfigError("unknown meta optimizer '" + s + "' (expected adam or sgd)");
}

struct MetaConfig {
	double inner_lr = 0.01;
	int inner_steps = 3;
	double meta_lr = 1e-3;
	std::size_t episodes_per_meta_batch = 4;
	bool first_order = true;
	std::size_t k_support = 8;
	std::size_t k_query = 8;
	int iterations = 200;
	MetaOptimizer optimizer = MetaOptimizer::adam;
	std::uint64_t seed = 0;
	BackboneConfig backbone = BackboneConfig::standard();

	void validate() const {
		backbone.validate();
		if (!(inner_lr > 0)) throw ConfigError("inner_lr must be > 0");
		if (!(meta_lr > 0)) throw ConfigError("meta_lr must be > 0");
		if (inner_steps < 1) throw ConfigError("inner_steps must be >= 1");
		if (episodes_per_meta_batch < 1) throw ConfigError("episodes_per_meta_batch must be >= 1");
		if (k_support < 2 || k_query < 2) throw ConfigError("k_support and k_query must be >= 2");
		if (iterations < 0) throw ConfigError("iterations must be >= 0");
	}

	nlohmann::json to_json() const {
		return {{"inner_lr", inner_lr}, {"inner_steps", inner_steps}, {"meta_lr", meta_lr},
				{"episodes_per_meta_batch", episodes_per_meta_batch}, {"first_order", first_order},
				{"k_support", k_support}, {"k_query", k_query}, {"iterations", iterations},
				{"optimizer", optimizer_name(optimizer)}, {"seed", seed}, {"backbone", backbone.to_json()}};
	}
	std::string digest() const { return sha256_hex(to_json().dump()); }
};

/// A support/query pair in whatever batch representation the problem consumes.
template<typename Batch>
struct Episode {
	Batch support;
	Batch query;
};

/**
 * A meta-learning problem supplies, over flat double parameter vectors,
 *   double loss(theta, batch, grad_out*)     -- loss and optionally its gradient
 *   std::vector<double> hvp(theta, batch, v) -- Hessian-vector product of the loss
 */

/// (theta - tau)^2 with the episode batch being tau; exact derivatives.
struct ScalarQuadratic {
	using Batch = double;

	double loss(const std::vector<double>& theta, double tau, std::vector<double>* grad) const {
		const double d = theta.at(0) - tau;
		if (grad) *grad = {2 * d};
		return d * d;
	}
	std::vector<double> hvp(const std::vector<double>&, double, const std::vector<double>& v) const {
		return {2 * v.at(0)};
	}
};

namespace detail {

inline void check_loss(double loss, const char* where, int step) {
	if (!std::isfinite(loss))
		throw TrainingDiverged(std::string("non-finite loss in ") + where + " at step " + std::to_string(step));
}

}  // namespace detail

/**
 * `steps` plain gradient-descent updates on the support batch starting from theta.
 * The visited iterates theta_0 .. theta_{steps-1} are appended to `trajectory` when given.
 */
template<typename Problem, typename Batch>
std::vector<double> inner_adapt(Problem& problem, const std::vector<double>& theta, const Batch& support,
		double inner_lr, int steps, std::vector<std::vector<double>>* trajectory = nullptr,
		std::vector<double>* support_losses = nullptr) {
	if (steps < 0) throw std::invalid_argument("inner_adapt: steps must be >= 0");
	if (inner_lr < 0) throw std::invalid_argument("inner_adapt: inner_lr must be >= 0");
	std::vector<double> current = theta, grad;
	for (int k = 0; k < steps; ++k) {
		if (trajectory) trajectory->push_back(current);
		const double loss = problem.loss(current, support, &grad);
		detail::check_loss(loss, "inner_adapt", k);
		if (support_losses) support_losses->push_back(loss);
		for (std::size_t i = 0; i < current.size(); ++i) current[i] -= inner_lr * grad[i];
	}
	return current;
}

struct MetaGradient {
	double query_loss = 0;
	std::vector<double> grad;
};

/**
 * Gradient of query_loss(inner_adapt(theta, support)) with respect to theta. The
 * second-order form applies the inner-update Jacobians (I - lr * H) in reverse;
 * the first-order form uses the query gradient at the adapted point directly.
 */
template<typename Problem, typename Batch>
MetaGradient meta_gradient(Problem& problem, const std::vector<double>& theta, const Episode<Batch>& episode,
		double inner_lr, int inner_steps, bool first_order) {
	std::vector<std::vector<double>> trajectory;
	const auto adapted = inner_adapt(problem, theta, episode.support, inner_lr, inner_steps, &trajectory);
	MetaGradient mg;
	mg.query_loss = problem.loss(adapted, episode.query, &mg.grad);
	detail::check_loss(mg.query_loss, "query", inner_steps);
	if (first_order) return mg;
	for (std::size_t k = trajectory.size(); k-- > 0;) {
		const auto hv = problem.hvp(trajectory[k], episode.support, mg.grad);
		for (std::size_t i = 0; i < mg.grad.size(); ++i) mg.grad[i] -= inner_lr * hv[i];
	}
	return mg;
}

struct MetaState {
	std::vector<double> theta;
	int iteration = 0;
	/// Mean post-adaptation query loss of every completed meta-iteration.
	std::vector<double> query_loss_history;
	nn::Adam<double> adam;
	/// Meta-gradient of the last step.
	std::vector<double> last_gradient;

	MetaState() = default;
	MetaState(std::vector<double> init, const MetaConfig& config) :
			theta(std::move(init)), adam(nn::AdamOptions{config.meta_lr}) { }
};

/// One meta-update: mean meta-gradient over the episodes, accumulated in episode order.
template<typename Problem, typename Batch>
MetaState maml_meta_step(Problem& problem, MetaState state, const std::vector<Episode<Batch>>& episodes,
		const MetaConfig& config) {
	if (episodes.empty()) throw std::invalid_argument("maml_meta_step: no episodes");
	std::vector<double> total(state.theta.size(), 0.0);
	double loss = 0;
	for (const auto& ep : episodes) {
		const auto mg = meta_gradient(problem, state.theta, ep, config.inner_lr, config.inner_steps, config.first_order);
		for (std::size_t i = 0; i < total.size(); ++i) total[i] += mg.grad[i];
		loss += mg.query_loss;
	}
	for (auto& g : total) g /= double(episodes.size());
	if (config.optimizer == MetaOptimizer::adam)
		state.adam.step(std::span<double>(state.theta), std::span<const double>(total));
	else
		nn::sgd_step(std::span<double>(state.theta), std::span<const double>(total), config.meta_lr);
	state.last_gradient = std::move(total);
	state.query_loss_history.push_back(loss / double(episodes.size()));
	++state.iteration;
	return state;
}

/// Patch batch for the classification objective.
template<typename Scalar>
struct ClassBatch {
	Tensor<Scalar> inputs;
	std::vector<data::PatchLabel> labels;
};

template<typename Scalar>
ClassBatch<Scalar> to_class_batch(const std::vector<data::PatchSample>& samples) {
	auto t = data::to_tensors<Scalar>(samples);
	return {std::move(t.gray), std::move(t.labels)};
}

/**
 * Ball/no_ball cross-entropy of backbone + classification head; theta is the
 * concatenation of those parameters in `Detector::classifier_parameters()` order.
 * Hessian-vector products are central differences of gradients.
 */
template<typename Scalar>
class ClassifierProblem {
public:
	using Batch = ClassBatch<Scalar>;

	explicit ClassifierProblem(const DetectorConfig& config) : model_(config), params_(model_.classifier_parameters()) { }
	ClassifierProblem(const ClassifierProblem&) = delete;
	ClassifierProblem& operator=(const ClassifierProblem&) = delete;

	Detector<Scalar>& model() { return model_; }
	const nn::ParameterList<Scalar>& parameters() const { return params_; }

	std::vector<double> theta() const {
		const auto v = nn::flatten_values(params_);
		return {v.begin(), v.end()};
	}

	double loss(const std::vector<double>& theta, const Batch& batch, std::vector<double>* grad) {
		set(theta);
		const auto logits = model_.classify(batch.inputs);
		if (!grad) return classification_loss(logits, batch.labels);
		Tensor<Scalar> g;
		const double l = classification_loss(logits, batch.labels, &g);
		nn::zero_grad(params_);
		model_.backward_classify(g);
		const auto flat = nn::flatten_grads(params_);
		grad->assign(flat.begin(), flat.end());
		return l;
	}

	std::vector<double> hvp(const std::vector<double>& theta, const Batch& batch, const std::vector<double>& v) {
		double vnorm = 0, tnorm = 0;
		for (std::size_t i = 0; i < v.size(); ++i) {
			vnorm += v[i] * v[i];
			tnorm += theta[i] * theta[i];
		}
		vnorm = std::sqrt(vnorm);
		if (vnorm == 0) return std::vector<double>(v.size(), 0.0);
		const double eps = std::sqrt(double(std::numeric_limits<Scalar>::epsilon())) * (1 + std::sqrt(tnorm)) / vnorm;
		std::vector<double> plus = theta, minus = theta, gp, gm;
		for (std::size_t i = 0; i < v.size(); ++i) {
			plus[i] += eps * v[i];
			minus[i] -= eps * v[i];
		}
		loss(plus, batch, &gp);
		loss(minus, batch, &gm);
		std::vector<double> out(v.size());
		for (std::size_t i = 0; i < v.size(); ++i) out[i] = (gp[i] - gm[i]) / (2 * eps);
		return out;
	}

	void set(const std::vector<double>& theta) {
		const std::vector<Scalar> cast(theta.begin(), theta.end());
		nn::assign_values(params_, std::span<const Scalar>(cast));
	}

private:
	Detector<Scalar> model_;
	nn::ParameterList<Scalar> params_;
};

/// Validates a sampled episode and converts it to classification batches.
template<typename Scalar>
Episode<ClassBatch<Scalar>> to_class_episode(const data::TaskEpisode& ep) {
	data::check_episode(ep);
	return {to_class_batch<Scalar>(ep.support), to_class_batch<Scalar>(ep.query)};
}

template<typename Scalar>
MetaState maml_meta_step(ClassifierProblem<Scalar>& problem, MetaState state,
		const std::vector<data::TaskEpisode>& episodes, const MetaConfig& config) {
	std::vector<Episode<ClassBatch<Scalar>>> batches;
	for (const auto& ep : episodes) batches.push_back(to_class_episode<Scalar>(ep));
	return maml_meta_step(problem, std::move(state), batches, config);
}

inline DetectorConfig classifier_config(const MetaConfig& config) {
	DetectorConfig d;
	d.backbone = config.backbone;
	d.seed = config.seed;
	return d;
}

struct MetaTrainResult {
	Checkpoint checkpoint;
	std::vector<double> query_loss;
};

/**
 * MAML over augmentation environments: every iteration samples fresh environment
 * specs and episodes from `pool`. With `init`, the backbone starts from its
 * "backbone.*" arrays. The checkpoint holds backbone and classification head.
 */
inline MetaTrainResult meta_train(const MetaConfig& config, const std::vector<data::PatchSample>& pool,
		const Checkpoint* init = nullptr, const std::function<void(int, double)>& on_iteration = {}) {
	config.validate();
	ClassifierProblem<float> problem(classifier_config(config));
	if (init) problem.model().load_backbone(*init);
	MetaState state(problem.theta(), config);
	Rng rng = make_rng(config.seed, "meta/tasks");
	for (int it = 0; it < config.iterations; ++it) {
		std::vector<data::TaskEpisode> episodes;
		for (std::size_t e = 0; e < config.episodes_per_meta_batch; ++e) {
			const auto spec = data::AugmentationTaskSpec::sample(rng);
			episodes.push_back(data::sample_episode(pool, spec, config.k_support, config.k_query, rng()));
		}
		state = maml_meta_step(problem, std::move(state), episodes, config);
		if (on_iteration) on_iteration(state.iteration, state.query_loss_history.back());
	}
	problem.set(state.theta);
	MetaTrainResult result;
	export_parameters(problem.parameters(), result.checkpoint);
	result.checkpoint.provenance = {"maml", config.iterations, config.seed, config.digest()};
	result.query_loss = state.query_loss_history;
	return result;
}

struct MetaAdaptation {
	Checkpoint model;
	/// Support loss before each step, then after the last one (steps + 1 entries).
	std::vector<double> support_loss;
};

/**
 * A handful of gradient steps of the classification loss on a small labelled set,
 * starting from a checkpoint's backbone and, when present, classification head.
 * The returned checkpoint is a modified copy.
 */
inline MetaAdaptation meta_adapt(const Checkpoint& checkpoint, const std::vector<data::PatchSample>& labeled, int steps,
		double lr, const DetectorConfig& config = {}) {
	if (labeled.size() < 4) throw std::invalid_argument("meta_adapt: need at least 4 labelled samples");
	const auto balls = std::count_if(labeled.begin(), labeled.end(), [](const auto& s) { return s.is_ball(); });
	if (balls == 0 || std::size_t(balls) == labeled.size())
		throw std::invalid_argument("meta_adapt: labelled set must contain both classes");
	ClassifierProblem<float> problem(config);
	problem.model().load_backbone(checkpoint);
	if (checkpoint.find(problem.parameters().back()->name))
		import_parameters(problem.parameters(), checkpoint, "class_head.");
	const auto batch = to_class_batch<float>(labeled);
	MetaAdaptation out;
	const auto adapted = inner_adapt(problem, problem.theta(), batch, lr, steps, nullptr, &out.support_loss);
	out.support_loss.push_back(problem.loss(adapted, batch, nullptr));
	problem.set(adapted);
	out.model = checkpoint;
	for (const auto* p : problem.parameters()) {
		auto it = std::find_if(out.model.arrays.begin(), out.model.arrays.end(),
				[&](const NamedArray& a) { return a.name == p->name; });
		if (it == out.model.arrays.end()) it = out.model.arrays.insert(out.model.arrays.end(), {p->name, p->value.shape(), {}});
		it->values.assign(p->value.storage().begin(), p->value.storage().end());
	}
	return out;
}

}  // namespace ballssl::meta
