#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ballssl {

using Shape = std::vector<std::size_t>;

/// Raised when an array does not have the dimensions an operation expects.
class ShapeError : public std::invalid_argument {
public:
	using std::invalid_argument::invalid_argument;
};

inline std::size_t volume(const Shape& shape) {
	return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
	std::ostringstream os;
	for (std::size_t i = 0; i < shape.size(); ++i) {
		if (i) os << 'x';
		os << shape[i];
	}
	return os.str();
}

/**
 * Dense row-major array with a runtime shape. Image batches use NCHW.
 */
template<typename Scalar>
class Tensor {
public:
	using value_type = Scalar;

	Tensor() = default;
	explicit Tensor(Shape shape, Scalar fill = Scalar(0)) :
			shape_(std::move(shape)),
			data_(volume(shape_), fill) { }
	Tensor(Shape shape, std::vector<Scalar> values) :
			shape_(std::move(shape)),
			data_(std::move(values)) {
		if (data_.size() != volume(shape_))
			throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
					std::to_string(data_.size()) + " values");
	}

	const Shape& shape() const { return shape_; }
	std::size_t rank() const { return shape_.size(); }
	std::size_t dim(std::size_t i) const { return shape_.at(i); }
	std::size_t size() const { return data_.size(); }
	bool empty() const { return data_.empty(); }

	Scalar* data() { return data_.data(); }
	const Scalar* data() const { return data_.data(); }
	std::span<Scalar> values() { return data_; }
	std::span<const Scalar> values() const { return data_; }
	std::vector<Scalar>& storage() { return data_; }
	const std::vector<Scalar>& storage() const { return data_; }

	Scalar& operator[](std::size_t i) { return data_[i]; }
	const Scalar& operator[](std::size_t i) const { return data_[i]; }

	Scalar& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
		return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
	}
	const Scalar& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
		return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
	}

	void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

	Tensor reshaped(Shape shape) const {
		if (volume(shape) != data_.size())
			throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
		return Tensor(std::move(shape), data_);
	}

	template<typename Other>
	Tensor<Other> cast() const {
		std::vector<Other> out(data_.begin(), data_.end());
		return Tensor<Other>(shape_, std::move(out));
	}

	Tensor& operator+=(const Tensor& other) {
		require_same_shape(other, "+=");
		for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
		return *this;
	}

	void require_same_shape(const Tensor& other, const char* what) const {
		if (other.shape_ != shape_)
			throw ShapeError(std::string(what) + ": shape " + shape_string(shape_) + " vs " +
					shape_string(other.shape_));
	}

	friend bool operator==(const Tensor&, const Tensor&) = default;

private:
	Shape shape_;
	std::vector<Scalar> data_;
};

/// Throws ShapeError unless `t` is exactly `expected`, naming `what` and both shapes.
template<typename Scalar>
void expect_shape(const Tensor<Scalar>& t, const Shape& expected, const std::string& what) {
	if (t.shape() != expected)
		throw ShapeError(what + ": expected " + shape_string(expected) + ", got " + shape_string(t.shape()));
}

}  // namespace ballssl
