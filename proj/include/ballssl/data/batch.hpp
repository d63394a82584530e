#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ballssl/core/tensor.hpp"
#include "ballssl/data/patches.hpp"

namespace ballssl::data {

/**
 * Patch set converted once to network layout: grayscale N x 1 x S x S inputs,
 * color N x 3 x S x S targets, labels and normalized circles.
 */
template<typename Scalar>
struct PatchTensors {
	Tensor<Scalar> gray;
	Tensor<Scalar> color;
	std::vector<PatchLabel> labels;
	std::vector<std::optional<Circle>> circles;

	std::size_t size() const { return labels.size(); }
	std::size_t side() const { return gray.dim(2); }
};

template<typename Scalar>
PatchTensors<Scalar> to_tensors(const std::vector<PatchSample>& samples) {
	PatchTensors<Scalar> t;
	if (samples.empty()) return t;
	const int S = samples.front().pixels.width;
	const std::size_t N = samples.size(), plane = std::size_t(S) * S;
	t.gray = Tensor<Scalar>({N, 1, std::size_t(S), std::size_t(S)});
	t.color = Tensor<Scalar>({N, 3, std::size_t(S), std::size_t(S)});
	for (std::size_t n = 0; n < N; ++n) {
		const Image& img = samples[n].pixels;
		if (img.width != S || img.height != S) throw ShapeError("patch " + samples[n].id + " has a different size");
		const Image gray = to_grayscale(img);
		for (std::size_t i = 0; i < plane; ++i) {
			t.gray[n * plane + i] = static_cast<Scalar>(gray.pixels[i]);
			for (std::size_t c = 0; c < 3; ++c)
				t.color[(n * 3 + c) * plane + i] = static_cast<Scalar>(img.channels == 3 ? img.pixels[3 * i + c] : img.pixels[i]);
		}
		t.labels.push_back(samples[n].label);
		t.circles.push_back(samples[n].circle);
	}
	return t;
}

/// Rows `indices` of an N x ... tensor.
template<typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& src, std::span<const std::size_t> indices) {
	Shape shape = src.shape();
	const std::size_t row = src.size() / shape[0];
	shape[0] = indices.size();
	Tensor<Scalar> out(shape);
	for (std::size_t i = 0; i < indices.size(); ++i)
		std::copy_n(src.data() + indices[i] * row, row, out.data() + i * row);
	return out;
}

}  // namespace ballssl::data
