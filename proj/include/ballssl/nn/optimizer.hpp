#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ballssl/nn/parameter.hpp"

namespace ballssl::nn {

struct AdamOptions {
	double learning_rate = 1e-3;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double epsilon = 1e-8;
};

/// Adam over a flat parameter vector or a parameter list (treated as one concatenated vector).
template<typename Scalar>
class Adam {
public:
	explicit Adam(AdamOptions opt = {}) : opt_(opt) { }

	void step(std::span<Scalar> params, std::span<const Scalar> grads) {
		if (m_.size() != params.size()) {
			m_.assign(params.size(), 0.0);
			v_.assign(params.size(), 0.0);
			t_ = 0;
		}
		++t_;
		const double c1 = 1 - std::pow(opt_.beta1, t_), c2 = 1 - std::pow(opt_.beta2, t_);
		for (std::size_t i = 0; i < params.size(); ++i) update(params[i], grads[i], i, c1, c2);
	}

	void step(const ParameterList<Scalar>& params) {
		const std::size_t total = count_parameters(params);
		if (m_.size() != total) {
			m_.assign(total, 0.0);
			v_.assign(total, 0.0);
			t_ = 0;
		}
		++t_;
		const double c1 = 1 - std::pow(opt_.beta1, t_), c2 = 1 - std::pow(opt_.beta2, t_);
		std::size_t off = 0;
		for (auto* p : params) {
			Scalar* w = p->value.data();
			const Scalar* g = p->grad.data();
			for (std::size_t i = 0; i < p->size(); ++i) update(w[i], g[i], off + i, c1, c2);
			off += p->size();
		}
	}

	const AdamOptions& options() const { return opt_; }

private:
	void update(Scalar& w, Scalar g, std::size_t i, double c1, double c2) {
		m_[i] = opt_.beta1 * m_[i] + (1 - opt_.beta1) * g;
		v_[i] = opt_.beta2 * v_[i] + (1 - opt_.beta2) * double(g) * g;
		w -= static_cast<Scalar>(opt_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + opt_.epsilon));
	}

	AdamOptions opt_;
	std::vector<double> m_, v_;
	long t_ = 0;
};

template<typename Scalar>
void sgd_step(std::span<Scalar> params, std::span<const Scalar> grads, double lr) {
	for (std::size_t i = 0; i < params.size(); ++i) params[i] -= static_cast<Scalar>(lr * grads[i]);
}

template<typename Scalar>
void sgd_step(const ParameterList<Scalar>& params, double lr) {
	for (auto* p : params)
		for (std::size_t i = 0; i < p->size(); ++i) p->value[i] -= static_cast<Scalar>(lr * p->grad[i]);
}

}  // namespace ballssl::nn
