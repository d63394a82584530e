#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ballssl/nn/parameter.hpp"

// Layers cache what backward() needs during forward(); a layer instance is
// therefore single-writer. Gradients accumulate into Parameter::grad.

namespace ballssl::nn {

template<typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template<typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template<typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template<typename Scalar>
using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

namespace detail {

inline void require_rank4(const Shape& s, std::size_t channels, const char* layer) {
	if (s.size() != 4 || s[1] != channels)
		throw ShapeError(std::string(layer) + ": expected Nx" + std::to_string(channels) + "xHxW, got " + shape_string(s));
}

/// out[y, x] += w * in[y + dy, x + dx] over the valid (zero-padded) region of an HxW plane.
template<typename Scalar>
inline void shifted_axpy(Scalar* out, const Scalar* in, Scalar w, int H, int W, int dy, int dx) {
	const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
	const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
	for (int y = y0; y < y1; ++y) {
		Scalar* o = out + y * W;
		const Scalar* i = in + (y + dy) * W + dx;
		for (int x = x0; x < x1; ++x) o[x] += w * i[x];
	}
}

/// sum over valid (y, x) of a[y, x] * b[y + dy, x + dx].
template<typename Scalar>
inline Scalar shifted_dot(const Scalar* a, const Scalar* b, int H, int W, int dy, int dx) {
	const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
	const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
	Scalar acc = 0;
	for (int y = y0; y < y1; ++y) {
		const Scalar* pa = a + y * W;
		const Scalar* pb = b + (y + dy) * W + dx;
		for (int x = x0; x < x1; ++x) acc += pa[x] * pb[x];
	}
	return acc;
}

}  // namespace detail

/// Per-channel 3x3 convolution, stride 1, zero padding 1.
template<typename Scalar>
class DepthwiseConv3x3 {
public:
	DepthwiseConv3x3() = default;
	DepthwiseConv3x3(const std::string& name, std::size_t channels) :
			weight_(name + ".weight", {channels, 1, 3, 3}), bias_(name + ".bias", {channels}) { }

	std::size_t channels() const { return bias_.size(); }

	void init(Rng& rng) {
		weight_.init_uniform(rng, std::sqrt(3.0 / 9.0));
		bias_.value.fill(0);
	}

	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		detail::require_rank4(x.shape(), channels(), "depthwise conv");
		input_ = x;
		const int N = int(x.dim(0)), C = int(x.dim(1)), H = int(x.dim(2)), W = int(x.dim(3));
		Tensor<Scalar> y(x.shape());
		for (int n = 0; n < N; ++n)
			for (int c = 0; c < C; ++c) {
				Scalar* out = &y.at(n, c, 0, 0);
				const Scalar* in = &x.at(n, c, 0, 0);
				std::fill(out, out + H * W, bias_.value[c]);
				for (int k = 0; k < 9; ++k)
					detail::shifted_axpy(out, in, weight_.value[c * 9 + k], H, W, k / 3 - 1, k % 3 - 1);
			}
		return y;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		const int N = int(g.dim(0)), C = int(g.dim(1)), H = int(g.dim(2)), W = int(g.dim(3));
		Tensor<Scalar> gx(g.shape());
		for (int n = 0; n < N; ++n)
			for (int c = 0; c < C; ++c) {
				const Scalar* go = &g.at(n, c, 0, 0);
				const Scalar* in = &input_.at(n, c, 0, 0);
				Scalar* gi = &gx.at(n, c, 0, 0);
				Scalar gb = 0;
				for (int i = 0; i < H * W; ++i) gb += go[i];
				bias_.grad[c] += gb;
				for (int k = 0; k < 9; ++k) {
					const int dy = k / 3 - 1, dx = k % 3 - 1;
					weight_.grad[c * 9 + k] += detail::shifted_dot(go, in, H, W, dy, dx);
					detail::shifted_axpy(gi, go, weight_.value[c * 9 + k], H, W, -dy, -dx);
				}
			}
		return gx;
	}

	ParameterList<Scalar> parameters() { return {&weight_, &bias_}; }

private:
	Parameter<Scalar> weight_, bias_;
	Tensor<Scalar> input_;
};

/// 1x1 convolution mixing channels.
template<typename Scalar>
class PointwiseConv {
public:
	PointwiseConv() = default;
	PointwiseConv(const std::string& name, std::size_t in_channels, std::size_t out_channels) :
			weight_(name + ".weight", {out_channels, in_channels}), bias_(name + ".bias", {out_channels}) { }

	std::size_t in_channels() const { return weight_.value.dim(1); }
	std::size_t out_channels() const { return weight_.value.dim(0); }

	void init(Rng& rng) {
		weight_.init_uniform(rng, std::sqrt(6.0 / double(in_channels())));
		bias_.value.fill(0);
	}

	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		detail::require_rank4(x.shape(), in_channels(), "pointwise conv");
		input_ = x;
		const std::size_t N = x.dim(0), HW = x.dim(2) * x.dim(3), Ci = in_channels(), Co = out_channels();
		Tensor<Scalar> y({N, Co, x.dim(2), x.dim(3)});
		ConstMatrixMap<Scalar> w(weight_.value.data(), Co, Ci);
		for (std::size_t n = 0; n < N; ++n) {
			MatrixMap<Scalar> out(y.data() + n * Co * HW, Co, HW);
			out.noalias() = w * ConstMatrixMap<Scalar>(x.data() + n * Ci * HW, Ci, HW);
			for (std::size_t o = 0; o < Co; ++o) out.row(o).array() += bias_.value[o];
		}
		return y;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		const std::size_t N = g.dim(0), HW = g.dim(2) * g.dim(3), Ci = in_channels(), Co = out_channels();
		Tensor<Scalar> gx(input_.shape());
		ConstMatrixMap<Scalar> w(weight_.value.data(), Co, Ci);
		MatrixMap<Scalar> gw(weight_.grad.data(), Co, Ci);
		for (std::size_t n = 0; n < N; ++n) {
			ConstMatrixMap<Scalar> go(g.data() + n * Co * HW, Co, HW);
			ConstMatrixMap<Scalar> in(input_.data() + n * Ci * HW, Ci, HW);
			gw.noalias() += go * in.transpose();
			for (std::size_t o = 0; o < Co; ++o) bias_.grad[o] += go.row(o).sum();
			MatrixMap<Scalar>(gx.data() + n * Ci * HW, Ci, HW).noalias() = w.transpose() * go;
		}
		return gx;
	}

	ParameterList<Scalar> parameters() { return {&weight_, &bias_}; }

private:
	Parameter<Scalar> weight_, bias_;
	Tensor<Scalar> input_;
};

/// Full 3x3 convolution, stride 1, zero padding 1 (im2col + GEMM).
template<typename Scalar>
class Conv3x3 {
public:
	Conv3x3() = default;
	Conv3x3(const std::string& name, std::size_t in_channels, std::size_t out_channels) :
			weight_(name + ".weight", {out_channels, in_channels, 3, 3}), bias_(name + ".bias", {out_channels}) { }

	std::size_t in_channels() const { return weight_.value.dim(1); }
	std::size_t out_channels() const { return weight_.value.dim(0); }

	void init(Rng& rng, double gain = 3.0) {
		weight_.init_uniform(rng, std::sqrt(gain / double(9 * in_channels())));
		bias_.value.fill(0);
	}

	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		detail::require_rank4(x.shape(), in_channels(), "conv3x3");
		const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3), HW = H * W;
		const std::size_t Ci = in_channels(), Co = out_channels();
		cols_.assign(N * Ci * 9 * HW, Scalar(0));
		input_shape_ = x.shape();
		for (std::size_t n = 0; n < N; ++n)
			for (std::size_t c = 0; c < Ci; ++c)
				for (int k = 0; k < 9; ++k)
					detail::shifted_axpy(&cols_[((n * Ci + c) * 9 + k) * HW], &x.at(n, c, 0, 0), Scalar(1), int(H), int(W),
							k / 3 - 1, k % 3 - 1);
		Tensor<Scalar> y({N, Co, H, W});
		ConstMatrixMap<Scalar> w(weight_.value.data(), Co, Ci * 9);
		for (std::size_t n = 0; n < N; ++n) {
			MatrixMap<Scalar> out(y.data() + n * Co * HW, Co, HW);
			out.noalias() = w * ConstMatrixMap<Scalar>(&cols_[n * Ci * 9 * HW], Ci * 9, HW);
			for (std::size_t o = 0; o < Co; ++o) out.row(o).array() += bias_.value[o];
		}
		return y;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		const std::size_t N = g.dim(0), H = g.dim(2), W = g.dim(3), HW = H * W;
		const std::size_t Ci = in_channels(), Co = out_channels();
		ConstMatrixMap<Scalar> w(weight_.value.data(), Co, Ci * 9);
		MatrixMap<Scalar> gw(weight_.grad.data(), Co, Ci * 9);
		Tensor<Scalar> gx(input_shape_);
		RowMatrix<Scalar> gcols(Ci * 9, HW);
		for (std::size_t n = 0; n < N; ++n) {
			ConstMatrixMap<Scalar> go(g.data() + n * Co * HW, Co, HW);
			gw.noalias() += go * ConstMatrixMap<Scalar>(&cols_[n * Ci * 9 * HW], Ci * 9, HW).transpose();
			for (std::size_t o = 0; o < Co; ++o) bias_.grad[o] += go.row(o).sum();
			gcols.noalias() = w.transpose() * go;
			for (std::size_t c = 0; c < Ci; ++c)
				for (int k = 0; k < 9; ++k)
					detail::shifted_axpy(&gx.at(n, c, 0, 0), gcols.data() + (c * 9 + k) * HW, Scalar(1), int(H), int(W),
							-(k / 3 - 1), -(k % 3 - 1));
		}
		return gx;
	}

	ParameterList<Scalar> parameters() { return {&weight_, &bias_}; }

private:
	Parameter<Scalar> weight_, bias_;
	std::vector<Scalar> cols_;
	Shape input_shape_;
};

/// Transposed convolution with a 2x2 kernel and stride 2: exact 2x upsampling.
template<typename Scalar>
class TransposedConv2x2 {
public:
	TransposedConv2x2() = default;
	TransposedConv2x2(const std::string& name, std::size_t in_channels, std::size_t out_channels) :
			weight_(name + ".weight", {in_channels, out_channels, 2, 2}), bias_(name + ".bias", {out_channels}) { }

	std::size_t in_channels() const { return weight_.value.dim(0); }
	std::size_t out_channels() const { return weight_.value.dim(1); }

	void init(Rng& rng) {
		weight_.init_uniform(rng, std::sqrt(6.0 / double(in_channels())));
		bias_.value.fill(0);
	}

	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		detail::require_rank4(x.shape(), in_channels(), "transposed conv");
		input_ = x;
		const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3), HW = H * W;
		const std::size_t Ci = in_channels(), Co = out_channels();
		Tensor<Scalar> y({N, Co, 2 * H, 2 * W});
		ConstMatrixMap<Scalar> w(weight_.value.data(), Ci, Co * 4);
		RowMatrix<Scalar> m(Co * 4, HW);
		for (std::size_t n = 0; n < N; ++n) {
			m.noalias() = w.transpose() * ConstMatrixMap<Scalar>(x.data() + n * Ci * HW, Ci, HW);
			for (std::size_t o = 0; o < Co; ++o)
				for (std::size_t k = 0; k < 4; ++k) {
					const std::size_t a = k / 2, b = k % 2;
					const Scalar* row = m.data() + (o * 4 + k) * HW;
					for (std::size_t iy = 0; iy < H; ++iy)
						for (std::size_t ix = 0; ix < W; ++ix)
							y.at(n, o, 2 * iy + a, 2 * ix + b) = row[iy * W + ix] + bias_.value[o];
				}
		}
		return y;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		const std::size_t N = input_.dim(0), H = input_.dim(2), W = input_.dim(3), HW = H * W;
		const std::size_t Ci = in_channels(), Co = out_channels();
		ConstMatrixMap<Scalar> w(weight_.value.data(), Ci, Co * 4);
		MatrixMap<Scalar> gw(weight_.grad.data(), Ci, Co * 4);
		Tensor<Scalar> gx(input_.shape());
		RowMatrix<Scalar> gm(Co * 4, HW);
		for (std::size_t n = 0; n < N; ++n) {
			for (std::size_t o = 0; o < Co; ++o)
				for (std::size_t k = 0; k < 4; ++k) {
					const std::size_t a = k / 2, b = k % 2;
					Scalar* row = gm.data() + (o * 4 + k) * HW;
					for (std::size_t iy = 0; iy < H; ++iy)
						for (std::size_t ix = 0; ix < W; ++ix) {
							const Scalar v = g.at(n, o, 2 * iy + a, 2 * ix + b);
							row[iy * W + ix] = v;
							bias_.grad[o] += v;
						}
				}
			ConstMatrixMap<Scalar> in(input_.data() + n * Ci * HW, Ci, HW);
			gw.noalias() += in * gm.transpose();
			MatrixMap<Scalar>(gx.data() + n * Ci * HW, Ci, HW).noalias() = w * gm;
		}
		return gx;
	}

	ParameterList<Scalar> parameters() { return {&weight_, &bias_}; }

private:
	Parameter<Scalar> weight_, bias_;
	Tensor<Scalar> input_;
};

/// Fully connected layer on N x in rows.
template<typename Scalar>
class Dense {
public:
	Dense() = default;
	Dense(const std::string& name, std::size_t in, std::size_t out) :
			weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) { }

	std::size_t in_features() const { return weight_.value.dim(1); }
	std::size_t out_features() const { return weight_.value.dim(0); }

	void init(Rng& rng, double gain = 6.0) {
		weight_.init_uniform(rng, std::sqrt(gain / double(in_features())));
		bias_.value.fill(0);
	}

	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		if (x.rank() != 2 || x.dim(1) != in_features())
			throw ShapeError("dense: expected Nx" + std::to_string(in_features()) + ", got " + shape_string(x.shape()));
		input_ = x;
		const std::size_t N = x.dim(0);
		Tensor<Scalar> y({N, out_features()});
		MatrixMap<Scalar> out(y.data(), N, out_features());
		out.noalias() = ConstMatrixMap<Scalar>(x.data(), N, in_features()) *
				ConstMatrixMap<Scalar>(weight_.value.data(), out_features(), in_features()).transpose();
		out.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias_.value.data(), out_features());
		return y;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		const std::size_t N = g.dim(0), I = in_features(), O = out_features();
		ConstMatrixMap<Scalar> go(g.data(), N, O);
		MatrixMap<Scalar>(weight_.grad.data(), O, I).noalias() += go.transpose() * ConstMatrixMap<Scalar>(input_.data(), N, I);
		Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias_.grad.data(), O) += go.colwise().sum();
		Tensor<Scalar> gx({N, I});
		MatrixMap<Scalar>(gx.data(), N, I).noalias() = go * ConstMatrixMap<Scalar>(weight_.value.data(), O, I);
		return gx;
	}

	ParameterList<Scalar> parameters() { return {&weight_, &bias_}; }

private:
	Parameter<Scalar> weight_, bias_;
	Tensor<Scalar> input_;
};

/// 2x2 max pooling, stride 2. Ties resolve to the first element in row-major order.
template<typename Scalar>
class MaxPool2 {
public:
	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		if (x.rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2)
			throw ShapeError("max pool: expected NxCxHxW with even H, W, got " + shape_string(x.shape()));
		input_shape_ = x.shape();
		const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2) / 2, W = x.dim(3) / 2;
		Tensor<Scalar> y({N, C, H, W});
		argmax_.resize(y.size());
		std::size_t o = 0;
		for (std::size_t n = 0; n < N; ++n)
			for (std::size_t c = 0; c < C; ++c)
				for (std::size_t i = 0; i < H; ++i)
					for (std::size_t j = 0; j < W; ++j, ++o) {
						std::size_t best = ((n * C + c) * 2 * H + 2 * i) * 2 * W + 2 * j;
						for (std::size_t k : {best + 1, best + 2 * W, best + 2 * W + 1})
							if (x[k] > x[best]) best = k;
						argmax_[o] = best;
						y[o] = x[best];
					}
		return y;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		Tensor<Scalar> gx(input_shape_);
		for (std::size_t o = 0; o < g.size(); ++o) gx[argmax_[o]] += g[o];
		return gx;
	}

private:
	Shape input_shape_;
	std::vector<std::size_t> argmax_;
};

/// In-place ReLU; returns the mask needed for the backward pass.
template<typename Scalar>
std::vector<bool> relu_inplace(Tensor<Scalar>& x) {
	std::vector<bool> mask(x.size());
	for (std::size_t i = 0; i < x.size(); ++i) {
		mask[i] = x[i] > 0;
		if (!mask[i]) x[i] = 0;
	}
	return mask;
}

template<typename Scalar>
void relu_backward_inplace(Tensor<Scalar>& g, const std::vector<bool>& mask) {
	for (std::size_t i = 0; i < g.size(); ++i)
		if (!mask[i]) g[i] = 0;
}

/// Multilayer perceptron: Dense layers with ReLU between them and a linear output.
template<typename Scalar>
class Mlp {
public:
	Mlp() = default;
	Mlp(const std::string& name, const std::vector<std::size_t>& widths) : widths_(widths) {
		if (widths.size() < 2) throw std::invalid_argument("mlp needs at least input and output width");
		for (std::size_t i = 0; i + 1 < widths.size(); ++i)
			layers_.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1]);
		masks_.resize(layers_.size());
	}

	const std::vector<std::size_t>& widths() const { return widths_; }

	void init(Rng& rng, double output_gain = 3.0) {
		for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].init(rng, i + 1 < layers_.size() ? 6.0 : output_gain);
	}

	Tensor<Scalar> forward(const Tensor<Scalar>& x) {
		Tensor<Scalar> h = x;
		for (std::size_t i = 0; i < layers_.size(); ++i) {
			h = layers_[i].forward(h);
			if (i + 1 < layers_.size()) masks_[i] = relu_inplace(h);
		}
		return h;
	}

	Tensor<Scalar> backward(const Tensor<Scalar>& g) {
		Tensor<Scalar> d = g;
		for (std::size_t i = layers_.size(); i-- > 0;) {
			if (i + 1 < layers_.size()) relu_backward_inplace(d, masks_[i]);
			d = layers_[i].backward(d);
		}
		return d;
	}

	ParameterList<Scalar> parameters() {
		ParameterList<Scalar> out;
		for (auto& l : layers_)
			for (auto* p : l.parameters()) out.push_back(p);
		return out;
	}

private:
	std::vector<std::size_t> widths_;
	std::vector<Dense<Scalar>> layers_;
	std::vector<std::vector<bool>> masks_;
};

}  // namespace ballssl::nn
