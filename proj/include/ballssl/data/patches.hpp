#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ballssl/core/geometry.hpp"
#include "ballssl/core/random.hpp"
#include "ballssl/data/pseudo_labels.hpp"
#include "ballssl/image.hpp"

namespace ballssl::data {

enum class PatchLabel { no_ball, ball };

inline std::string_view to_string(PatchLabel l) { return l == PatchLabel::ball ? "ball" : "no_ball"; }

/// One square patch. `circle` is normalized by the patch side and present iff label is ball.
struct PatchSample {
	std::string id;
	Image pixels;
	PatchLabel label = PatchLabel::no_ball;
	std::optional<Circle> circle;
	std::string source_image_id;
	/// Square region of the source image the patch was resampled from.
	BoundingBox crop;

	bool is_ball() const { return label == PatchLabel::ball; }

	void validate() const {
		if (is_ball() != circle.has_value()) throw std::logic_error(id + ": label/circle mismatch");
		if (circle) {
			if (circle->cx < 0 || circle->cx > 1 || circle->cy < 0 || circle->cy > 1)
				throw std::logic_error(id + ": circle center outside patch");
			if (!(circle->r > 0 && circle->r <= 0.5 * std::sqrt(2.0)))
				throw std::logic_error(id + ": circle radius out of range");
		}
	}
};

struct PatchOptions {
	int patch_size = 32;
	/// Positive crop side = context_scale * max(bbox w, h). 1 crops the box itself.
	double context_scale = 3.0;
	/// Fraction of the free margin by which the crop center is randomly displaced.
	double jitter = 0.5;
	int negatives_per_image = 1;
	double negative_side_min = 16;
	double negative_side_max = 48;
	int max_negative_attempts = 100;
	double min_box_side = 4;
	std::uint64_t seed = 0;

	void validate() const {
		if (patch_size < 8) throw std::invalid_argument("patch_size must be >= 8");
		if (context_scale < 1) throw std::invalid_argument("context_scale must be >= 1");
		if (jitter < 0 || jitter > 1) throw std::invalid_argument("jitter must be in [0,1]");
		if (negatives_per_image < 0) throw std::invalid_argument("negatives_per_image must be >= 0");
		if (!(negative_side_min > 0 && negative_side_min <= negative_side_max))
			throw std::invalid_argument("invalid negative side range");
	}
};

struct PatchExtraction {
	std::vector<PatchSample> samples;
	std::size_t unreadable_images = 0;
	std::size_t small_boxes = 0;
	std::size_t negatives_skipped = 0;
};

using ImageLoader = std::function<std::optional<Image>(const ManifestEntry&)>;

inline std::optional<Image> load_image_from_disk(const ManifestEntry& e) {
	try {
		return read_png(e.image_path);
	} catch (const ImageIoError&) {
		return std::nullopt;
	}
}

/// Inscribed circle of `box`, normalized to the square crop at (x0, y0) with the given side.
inline Circle circle_in_crop(const BoundingBox& box, double x0, double y0, double side) {
	return {(box.x + box.w / 2 - x0) / side, (box.y + box.h / 2 - y0) / side, std::min(box.w, box.h) / 2 / side};
}

/**
 * One positive patch per ball box plus `negatives_per_image` ball-free patches per
 * image. Output is ordered by (image id, box index) with negatives after positives.
 * Robot boxes are kept in the manifest but yield no patches.
 */
inline PatchExtraction extract_patches(const DatasetManifest& manifest, const PatchOptions& opt,
		const ImageLoader& loader = load_image_from_disk) {
	opt.validate();
	std::vector<const ManifestEntry*> order;
	for (const auto& e : manifest.entries) order.push_back(&e);
	std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });

	PatchExtraction out;
	for (const ManifestEntry* entry : order) {
		auto image = loader(*entry);
		if (!image) {
			++out.unreadable_images;
			continue;
		}
		Rng rng = make_rng(opt.seed, "patches/" + entry->image_id);

		std::vector<BoundingBox> balls;
		for (const auto& rec : entry->records)
			if (rec.object_class == ObjectClass::ball) balls.push_back(rec.bbox);

		for (std::size_t k = 0; k < balls.size(); ++k) {
			const auto& b = balls[k];
			if (std::min(b.w, b.h) < opt.min_box_side) {
				++out.small_boxes;
				continue;
			}
			const double box_side = std::max(b.w, b.h);
			const double side = opt.context_scale * box_side;
			const double slack = opt.jitter * (side - box_side) / 2;
			const double dx = slack > 0 ? uniform(rng, -slack, slack) : 0.0;
			const double dy = slack > 0 ? uniform(rng, -slack, slack) : 0.0;
			const double x0 = b.x + b.w / 2 + dx - side / 2;
			const double y0 = b.y + b.h / 2 + dy - side / 2;
			PatchSample s;
			s.id = entry->image_id + "_b" + std::to_string(k);
			s.pixels = crop_resize(*image, x0, y0, side, opt.patch_size);
			s.label = PatchLabel::ball;
			s.circle = circle_in_crop(b, x0, y0, side);
			s.crop = {x0, y0, side, side};
			s.source_image_id = entry->image_id;
			out.samples.push_back(std::move(s));
		}

		const double max_side = std::min(image->width, image->height);
		for (int k = 0; k < opt.negatives_per_image; ++k) {
			std::optional<BoundingBox> crop;
			for (int attempt = 0; attempt < opt.max_negative_attempts && !crop; ++attempt) {
				const double lo = std::min(opt.negative_side_min, max_side);
				const double hi = std::min(opt.negative_side_max, max_side);
				const double side = lo < hi ? uniform(rng, lo, hi) : lo;
				const BoundingBox cand{uniform(rng, 0.0, image->width - side + 1e-12),
						uniform(rng, 0.0, image->height - side + 1e-12), side, side};
				if (std::all_of(balls.begin(), balls.end(), [&](const auto& b) { return box_iou(cand, b) == 0.0; }))
					crop = cand;
			}
			if (!crop) {
				++out.negatives_skipped;
				continue;
			}
			PatchSample s;
			s.id = entry->image_id + "_n" + std::to_string(k);
			s.pixels = crop_resize(*image, crop->x, crop->y, crop->w, opt.patch_size);
			s.crop = *crop;
			s.source_image_id = entry->image_id;
			out.samples.push_back(std::move(s));
		}
	}
	return out;
}

}  // namespace ballssl::data
