#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

namespace ballssl {

/**
 * Interleaved (row-major, channel-last) floating point image with values in [0,1].
 * Grayscale images have one channel, color images three (RGB).
 */
struct Image {
	int width = 0;
	int height = 0;
	int channels = 1;
	std::vector<float> pixels;

	Image() = default;
	Image(int w, int h, int c, float fill = 0.0f) :
			width(w), height(h), channels(c),
			pixels(static_cast<std::size_t>(w) * h * c, fill) {
		if (w <= 0 || h <= 0 || (c != 1 && c != 3))
			throw std::invalid_argument("image dimensions must be positive with 1 or 3 channels");
	}

	bool empty() const { return pixels.empty(); }

	float& at(int y, int x, int c = 0) {
		return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
	}
	float at(int y, int x, int c = 0) const {
		return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
	}

	/// Pixel lookup with coordinates clamped to the image (edge replication).
	float clamped(int y, int x, int c = 0) const {
		return at(std::clamp(y, 0, height - 1), std::clamp(x, 0, width - 1), c);
	}

	/// Bilinear sample at continuous pixel coordinates (pixel centers at integer + 0.5).
	float bilinear(double y, double x, int c = 0) const {
		const double fy = y - 0.5, fx = x - 0.5;
		const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
		const double ty = fy - y0, tx = fx - x0;
		const double top = (1 - tx) * clamped(y0, x0, c) + tx * clamped(y0, x0 + 1, c);
		const double bottom = (1 - tx) * clamped(y0 + 1, x0, c) + tx * clamped(y0 + 1, x0 + 1, c);
		return static_cast<float>((1 - ty) * top + ty * bottom);
	}

	friend bool operator==(const Image&, const Image&) = default;
};

/// BT.601 luma coefficients.
inline constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

inline Image to_grayscale(const Image& color) {
	if (color.channels == 1) return color;
	if (color.channels != 3) throw std::invalid_argument("to_grayscale: expected 3 channels");
	Image gray(color.width, color.height, 1);
	for (std::size_t i = 0, n = gray.pixels.size(); i < n; ++i) {
		const float* p = &color.pixels[3 * i];
		gray.pixels[i] = static_cast<float>(kLumaR * p[0] + kLumaG * p[1] + kLumaB * p[2]);
	}
	return gray;
}

/**
 * Resamples the axis-aligned square [x0, x0+side) x [y0, y0+side) of `src` to
 * `size` x `size` pixels. Regions outside the image replicate the border.
 */
inline Image crop_resize(const Image& src, double x0, double y0, double side, int size) {
	Image out(size, size, src.channels);
	const double scale = side / size;
	for (int y = 0; y < size; ++y) {
		const double sy = y0 + (y + 0.5) * scale;
		for (int x = 0; x < size; ++x) {
			const double sx = x0 + (x + 0.5) * scale;
			for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.bilinear(sy, sx, c);
		}
	}
	return out;
}

class ImageIoError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Reads an 8-bit PNG as gray or RGB (alpha is dropped, palettes expanded).
inline Image read_png(const std::filesystem::path& path) {
	png_image img{};
	img.version = PNG_IMAGE_VERSION;
	if (!png_image_begin_read_from_file(&img, path.c_str()))
		throw ImageIoError("cannot read " + path.string() + ": " + img.message);
	const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
	img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
	std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
	if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
		std::string msg = img.message;
		png_image_free(&img);
		throw ImageIoError("cannot decode " + path.string() + ": " + msg);
	}
	Image out(static_cast<int>(img.width), static_cast<int>(img.height), gray ? 1 : 3);
	for (std::size_t i = 0; i < buffer.size(); ++i) out.pixels[i] = buffer[i] / 255.0f;
	return out;
}

/// Header-only probe of PNG dimensions; nullopt when the file is not a readable PNG.
inline std::optional<std::pair<int, int>> png_size(const std::filesystem::path& path) {
	png_image img{};
	img.version = PNG_IMAGE_VERSION;
	if (!png_image_begin_read_from_file(&img, path.c_str())) return std::nullopt;
	std::pair<int, int> wh{static_cast<int>(img.width), static_cast<int>(img.height)};
	png_image_free(&img);
	return wh;
}

inline void write_png(const std::filesystem::path& path, const Image& image) {
	std::vector<std::uint8_t> buffer(image.pixels.size());
	for (std::size_t i = 0; i < buffer.size(); ++i)
		buffer[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
	png_image img{};
	img.version = PNG_IMAGE_VERSION;
	img.width = static_cast<png_uint_32>(image.width);
	img.height = static_cast<png_uint_32>(image.height);
	img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
	if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr))
		throw ImageIoError("cannot write " + path.string() + ": " + img.message);
}

}  // namespace ballssl
