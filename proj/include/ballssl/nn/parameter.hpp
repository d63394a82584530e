#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ballssl/core/random.hpp"
#include "ballssl/core/tensor.hpp"

namespace ballssl::nn {

template<typename Scalar>
struct Parameter {
	std::string name;
	Tensor<Scalar> value;
	Tensor<Scalar> grad;

	Parameter() = default;
	Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) { }

	std::size_t size() const { return value.size(); }
	void zero_grad() { grad.fill(Scalar(0)); }

	void init_uniform(Rng& rng, double bound) {
		std::uniform_real_distribution<double> dist(-bound, bound);
		for (auto& v : value.values()) v = static_cast<Scalar>(dist(rng));
	}
};

template<typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>*>;

template<typename Scalar>
std::size_t count_parameters(const ParameterList<Scalar>& params) {
	std::size_t n = 0;
	for (const auto* p : params) n += p->size();
	return n;
}

/// Trainable scalar count of any model exposing `parameters()`.
template<typename Model>
std::size_t count_parameters(Model& model) {
	return count_parameters(model.parameters());
}

template<typename Scalar>
void zero_grad(const ParameterList<Scalar>& params) {
	for (auto* p : params) p->zero_grad();
}

template<typename Scalar>
std::vector<Scalar> flatten_values(const ParameterList<Scalar>& params) {
	std::vector<Scalar> out;
	out.reserve(count_parameters(params));
	for (const auto* p : params) out.insert(out.end(), p->value.storage().begin(), p->value.storage().end());
	return out;
}

template<typename Scalar>
std::vector<Scalar> flatten_grads(const ParameterList<Scalar>& params) {
	std::vector<Scalar> out;
	out.reserve(count_parameters(params));
	for (const auto* p : params) out.insert(out.end(), p->grad.storage().begin(), p->grad.storage().end());
	return out;
}

template<typename Scalar>
void assign_values(const ParameterList<Scalar>& params, std::span<const Scalar> flat) {
	if (flat.size() != count_parameters(params)) throw ShapeError("flat parameter vector has wrong length");
	std::size_t off = 0;
	for (auto* p : params) {
		std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p->size(), p->value.data());
		off += p->size();
	}
}

}  // namespace ballssl::nn
