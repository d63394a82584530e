#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/core/digest.hpp"
#include "ballssl/core/random.hpp"
#include "ballssl/nn/layers.hpp"

namespace ballssl {

class ConfigError : public std::invalid_argument {
public:
	using std::invalid_argument::invalid_argument;
};

struct DepthwiseSeparableLayerSpec {
	std::size_t in_channels = 0;
	std::size_t out_channels = 0;
	bool residual = false;

	friend bool operator==(const DepthwiseSeparableLayerSpec&, const DepthwiseSeparableLayerSpec&) = default;
};

/**
 * Layer plan of the shared feature extractor. Every layer is a 3x3 depthwise
 * convolution followed by a pointwise convolution and ReLU; stem layers are each
 * followed by 2x2 max pooling, trunk layers keep the spatial size.
 */
struct BackboneConfig {
	std::size_t input_channels = 1;
	std::size_t input_size = 32;
	std::vector<DepthwiseSeparableLayerSpec> stem;
	std::vector<DepthwiseSeparableLayerSpec> trunk;

	/// Stem 8/16/32 channels, nine 32-channel trunk layers with residuals on trunk layers 2, 4, 6, 8.
	static BackboneConfig standard() {
		BackboneConfig c;
		c.stem = {{1, 8, false}, {8, 16, false}, {16, 32, false}};
		for (int i = 1; i <= 9; ++i) c.trunk.push_back({32, 32, i % 2 == 0 && i <= 8});
		return c;
	}

	std::size_t output_channels() const {
		return trunk.empty() ? (stem.empty() ? input_channels : stem.back().out_channels) : trunk.back().out_channels;
	}
	std::size_t output_size() const { return input_size >> stem.size(); }
	std::size_t feature_dim() const { return output_channels() * output_size() * output_size(); }

	void validate() const {
		std::size_t ch = input_channels, size = input_size;
		auto check = [&](const DepthwiseSeparableLayerSpec& l, bool pooled, std::size_t idx) {
			if (l.in_channels != ch)
				throw ConfigError("layer " + std::to_string(idx) + " expects " + std::to_string(l.in_channels) +
						" input channels, previous layer gives " + std::to_string(ch));
			if (l.out_channels == 0) throw ConfigError("layer " + std::to_string(idx) + " has zero output channels");
			// a stem layer's residual would span the pooling and change spatial size
			if (l.residual && (l.in_channels != l.out_channels || pooled))
				throw ConfigError("residual on layer " + std::to_string(idx) + " needs equal channels and preserved size");
			ch = l.out_channels;
		};
		std::size_t idx = 0;
		for (const auto& l : stem) {
			check(l, true, idx++);
			if (size % 2) throw ConfigError("input size not divisible by the stem pooling factor");
			size /= 2;
		}
		for (const auto& l : trunk) check(l, false, idx++);
		if (size == 0) throw ConfigError("too many pooling stages for the input size");
	}

	nlohmann::json to_json() const {
		auto layers = [](const std::vector<DepthwiseSeparableLayerSpec>& v) {
			nlohmann::json a = nlohmann::json::array();
			for (const auto& l : v) a.push_back({{"in", l.in_channels}, {"out", l.out_channels}, {"residual", l.residual}});
			return a;
		};
		return {{"input_channels", input_channels}, {"input_size", input_size}, {"stem", layers(stem)},
				{"trunk", layers(trunk)}};
	}

	/// Content hash of the canonical (key-sorted) JSON form.
	std::string digest() const { return sha256_hex(to_json().dump()); }

	friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Closed-form trainable-scalar count of one depthwise-separable layer with biases.
constexpr std::size_t depthwise_separable_parameter_count(std::size_t in, std::size_t out) {
	return (in * 9 + in) + (in * out + out);
}

constexpr std::size_t dense_parameter_count(std::size_t in, std::size_t out) { return in * out + out; }

inline std::size_t closed_form_parameter_count(const BackboneConfig& c) {
	std::size_t n = 0;
	for (const auto& l : c.stem) n += depthwise_separable_parameter_count(l.in_channels, l.out_channels);
	for (const auto& l : c.trunk) n += depthwise_separable_parameter_count(l.in_channels, l.out_channels);
	return n;
}

namespace nn {

template<typename Scalar>
class DepthwiseSeparableBlock {
public:
	DepthwiseSeparableBlock() = default;
	DepthwiseSeparableBlock(const std::string& name, const DepthwiseSeparableLayerSpec& spec) :
			depthwise_(name + ".dw", spec.in_channels),
			pointwise_(name + ".pw", spec.in_channels, spec.out_channels),
			residual_(spec.residual) { }

	void init(Rng& rng) {
		depthwise_.init(rng);
		pointwise_.init(rng);
	}

	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		Tensor<Scalar> h = pointwise_.forward(depthwise_.forward(x));
		mask_ = relu_inplace(h);
		if (residual_) h += x;
		return h;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		Tensor<Scalar> gh = g;
		relu_backward_inplace(gh, mask_);
		Tensor<Scalar> gx = depthwise_.backward(pointwise_.backward(gh));
		if (residual_) gx += g;
		return gx;
	}

	ParameterList<Scalar> parameters() {
		auto out = depthwise_.parameters();
		for (auto* p : pointwise_.parameters()) out.push_back(p);
		return out;
	}

private:
	DepthwiseConv3x3<Scalar> depthwise_;
	PointwiseConv<Scalar> pointwise_;
	bool residual_ = false;
	std::vector<bool> mask_;
};

}  // namespace nn

/**
 * Shared feature extractor: N x 1 x 32 x 32 -> N x 32 x 4 x 4 for the standard config.
 * Parameters are named "backbone.stem.<i>.{dw,pw}.{weight,bias}" and
 * "backbone.trunk.<i>...".
 */
template<typename Scalar>
class Backbone {
public:
	Backbone() : Backbone(BackboneConfig::standard(), 0) { }
	Backbone(BackboneConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
		config_.validate();
		for (std::size_t i = 0; i < config_.stem.size(); ++i)
			stem_.emplace_back("backbone.stem." + std::to_string(i), config_.stem[i]);
		pools_.resize(config_.stem.size());
		for (std::size_t i = 0; i < config_.trunk.size(); ++i)
			trunk_.emplace_back("backbone.trunk." + std::to_string(i), config_.trunk[i]);
		Rng rng = make_rng(init_seed, "backbone");
		for (auto& b : stem_) b.init(rng);
		for (auto& b : trunk_) b.init(rng);
	}

	const BackboneConfig& config() const { return config_; }

	Shape input_shape(std::size_t n) const { return {n, config_.input_channels, config_.input_size, config_.input_size}; }
	Shape output_shape(std::size_t n) const {
		return {n, config_.output_channels(), config_.output_size(), config_.output_size()};
	}

	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		expect_shape(x, input_shape(x.rank() == 4 ? x.dim(0) : 1), "backbone input (N x C x H x W)");
		Tensor<Scalar> h = x;
		for (std::size_t i = 0; i < stem_.size(); ++i) h = pools_[i].forward(stem_[i].forward(h));
		for (auto& b : trunk_) h = b.forward(h);
		return h;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		Tensor<Scalar> d = g;
		for (std::size_t i = trunk_.size(); i-- > 0;) d = trunk_[i].backward(d);
		for (std::size_t i = stem_.size(); i-- > 0;) d = stem_[i].backward(pools_[i].backward(d));
		return d;
	}

	nn::ParameterList<Scalar> parameters() {
		nn::ParameterList<Scalar> out;
		for (auto& b : stem_)
			for (auto* p : b.parameters()) out.push_back(p);
		for (auto& b : trunk_)
			for (auto* p : b.parameters()) out.push_back(p);
		return out;
	}

private:
	BackboneConfig config_;
	std::vector<nn::DepthwiseSeparableBlock<Scalar>> stem_;
	std::vector<nn::MaxPool2<Scalar>> pools_;
	std::vector<nn::DepthwiseSeparableBlock<Scalar>> trunk_;
};

}  // namespace ballssl
