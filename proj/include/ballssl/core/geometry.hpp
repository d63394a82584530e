#pragma once

#include <algorithm>
#include <cmath>

namespace ballssl {

struct Circle {
	double cx = 0;
	double cy = 0;
	double r = 0;

	friend bool operator==(const Circle&, const Circle&) = default;
};

/// Axis-aligned box, top-left origin, in pixels.
struct BoundingBox {
	double x = 0;
	double y = 0;
	double w = 0;
	double h = 0;

	double area() const { return w * h; }
	friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
	const double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
	const double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
	return (ix > 0 && iy > 0) ? ix * iy : 0.0;
}

inline double box_iou(const BoundingBox& a, const BoundingBox& b) {
	const double inter = intersection_area(a, b);
	const double uni = a.area() + b.area() - inter;
	return uni > 0 ? inter / uni : 0.0;
}

/// Rotates `c` by `angle` radians about (ox, oy) in image coordinates (y down).
inline Circle rotate_circle(const Circle& c, double ox, double oy, double angle) {
	const double cs = std::cos(angle), sn = std::sin(angle);
	const double dx = c.cx - ox, dy = c.cy - oy;
	return {ox + cs * dx - sn * dy, oy + sn * dx + cs * dy, c.r};
}

}  // namespace ballssl
