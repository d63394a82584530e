#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/core/geometry.hpp"
#include "ballssl/data/split.hpp"
#include "ballssl/image.hpp"

namespace ballssl::data {

/// Keeps elements at indices 0, stride, 2*stride, ...
template<typename T>
std::vector<T> subsample_frames(const std::vector<T>& frames, std::size_t stride) {
	if (stride == 0) throw std::invalid_argument("subsample_frames: stride must be >= 1");
	std::vector<T> out;
	out.reserve(frames.size() / stride + 1);
	for (std::size_t i = 0; i < frames.size(); i += stride) out.push_back(frames[i]);
	return out;
}

enum class ObjectClass { ball, robot };

struct PseudoLabelRecord {
	std::string image_id;
	ObjectClass object_class = ObjectClass::ball;
	BoundingBox bbox;
	double confidence = 1.0;
};

struct ManifestEntry {
	std::filesystem::path image_path;
	std::string image_id;
	std::optional<int> width;
	std::optional<int> height;
	std::vector<PseudoLabelRecord> records;
};

struct DatasetManifest {
	static constexpr int kSchemaVersion = 1;

	int schema_version = kSchemaVersion;
	std::vector<ManifestEntry> entries;
	std::map<std::string, Split> split_assignment;

	/// Assigns every entry to a split (see assign_splits).
	void assign(const SplitRatios& ratios, std::uint64_t seed) {
		std::vector<std::string> ids;
		for (const auto& e : entries) ids.push_back(e.image_id);
		split_assignment = assign_splits(std::move(ids), ratios, seed);
	}

	/// Throws std::logic_error on any violated invariant.
	void validate() const {
		std::set<std::string> seen;
		for (const auto& e : entries) {
			if (!seen.insert(e.image_id).second) throw std::logic_error("duplicate image id " + e.image_id);
			for (const auto& r : e.records) {
				if (!(r.bbox.w > 0 && r.bbox.h > 0)) throw std::logic_error("empty bbox in " + e.image_id);
				if (r.confidence < 0 || r.confidence > 1) throw std::logic_error("confidence out of range");
				if (e.width && e.height &&
						(r.bbox.x < 0 || r.bbox.y < 0 || r.bbox.x + r.bbox.w > *e.width || r.bbox.y + r.bbox.h > *e.height))
					throw std::logic_error("bbox outside image " + e.image_id);
			}
		}
		if (!split_assignment.empty()) {
			if (split_assignment.size() != seen.size()) throw std::logic_error("split assignment does not cover all images");
			for (const auto& id : seen)
				if (!split_assignment.contains(id)) throw std::logic_error("image " + id + " has no split");
		}
	}
};

/// Malformed pseudo-label input; `line()` is 1-based.
class ParseError : public std::runtime_error {
public:
	ParseError(std::size_t line, const std::string& what) :
			std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) { }
	std::size_t line() const { return line_; }

private:
	std::size_t line_;
};

struct IngestResult {
	DatasetManifest manifest;
	std::size_t dropped_low_confidence = 0;
	std::size_t skipped_unknown_class = 0;
	std::size_t skipped_outside_image = 0;
	std::size_t clamped_boxes = 0;
};

namespace detail {

inline BoundingBox clamp_box(const BoundingBox& b, int width, int height) {
	if (b.x >= 0 && b.y >= 0 && b.x + b.w <= width && b.y + b.h <= height) return b;
	const double x0 = std::clamp(b.x, 0.0, double(width)), y0 = std::clamp(b.y, 0.0, double(height));
	const double x1 = std::clamp(b.x + b.w, 0.0, double(width)), y1 = std::clamp(b.y + b.h, 0.0, double(height));
	return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace detail

/**
 * Parses detector output in JSON-lines form, one image per line:
 *   {"image": "<path>", "width": W, "height": H,
 *    "detections": [{"class": "ball", "bbox": [x, y, w, h], "conf": 0.93}]}
 * "width"/"height" are optional; when absent and `image_root` is given the PNG
 * header is probed so boxes can be clamped to the image.
 */
inline IngestResult parse_pseudo_labels(std::istream& in, double min_confidence,
		const std::optional<std::filesystem::path>& image_root = std::nullopt) {
	if (!(min_confidence >= 0 && min_confidence <= 1))
		throw std::invalid_argument("min_confidence must be in [0,1]");
	IngestResult result;
	std::set<std::string> ids;
	std::string text;
	std::size_t line_no = 0;
	while (std::getline(in, text)) {
		++line_no;
		if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
		nlohmann::json j;
		try {
			j = nlohmann::json::parse(text);
		} catch (const nlohmann::json::parse_error& e) {
			throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
		}
		if (!j.is_object() || !j.contains("image") || !j["image"].is_string())
			throw ParseError(line_no, "missing string field 'image'");
		if (!j.contains("detections") || !j["detections"].is_array())
			throw ParseError(line_no, "missing array field 'detections'");

		ManifestEntry entry;
		entry.image_path = j["image"].get<std::string>();
		entry.image_id = entry.image_path.stem().string();
		if (entry.image_id.empty()) throw ParseError(line_no, "empty image path");
		if (!ids.insert(entry.image_id).second) throw ParseError(line_no, "duplicate image id " + entry.image_id);
		if (j.contains("width") || j.contains("height")) {
			if (!j.value("width", nlohmann::json()).is_number_integer() ||
					!j.value("height", nlohmann::json()).is_number_integer())
				throw ParseError(line_no, "'width' and 'height' must both be integers");
			entry.width = j["width"].get<int>();
			entry.height = j["height"].get<int>();
			if (*entry.width <= 0 || *entry.height <= 0) throw ParseError(line_no, "non-positive image size");
		} else if (image_root) {
			const auto full = entry.image_path.is_absolute() ? entry.image_path : *image_root / entry.image_path;
			if (auto wh = png_size(full)) {
				entry.width = wh->first;
				entry.height = wh->second;
			}
		}

		for (const auto& d : j["detections"]) {
			if (!d.is_object() || !d.contains("class") || !d["class"].is_string() || !d.contains("bbox") ||
					!d["bbox"].is_array() || d["bbox"].size() != 4 || !d.contains("conf") || !d["conf"].is_number())
				throw ParseError(line_no, "detection needs 'class' string, 4-element 'bbox' and numeric 'conf'");
			for (const auto& v : d["bbox"])
				if (!v.is_number()) throw ParseError(line_no, "bbox entries must be numbers");
			PseudoLabelRecord rec;
			rec.image_id = entry.image_id;
			rec.bbox = {d["bbox"][0].get<double>(), d["bbox"][1].get<double>(), d["bbox"][2].get<double>(),
					d["bbox"][3].get<double>()};
			rec.confidence = d["conf"].get<double>();
			if (!(rec.confidence >= 0 && rec.confidence <= 1)) throw ParseError(line_no, "conf outside [0,1]");
			if (!(rec.bbox.w > 0 && rec.bbox.h > 0)) throw ParseError(line_no, "bbox width and height must be > 0");

			const auto cls = d["class"].get<std::string>();
			if (cls == "ball") rec.object_class = ObjectClass::ball;
			else if (cls == "robot") rec.object_class = ObjectClass::robot;
			else {
				++result.skipped_unknown_class;
				continue;
			}
			if (rec.confidence < min_confidence) {
				++result.dropped_low_confidence;
				continue;
			}
			if (entry.width && entry.height) {
				const auto clamped = detail::clamp_box(rec.bbox, *entry.width, *entry.height);
				if (!(clamped.w > 0 && clamped.h > 0)) {
					++result.skipped_outside_image;
					continue;
				}
				if (clamped != rec.bbox) ++result.clamped_boxes;
				rec.bbox = clamped;
			}
			entry.records.push_back(rec);
		}
		result.manifest.entries.push_back(std::move(entry));
	}
	result.manifest.validate();
	return result;
}

/// File variant of parse_pseudo_labels; relative image paths resolve against `image_root`
/// (default: the label file's directory).
inline IngestResult ingest_pseudo_labels(const std::filesystem::path& path, double min_confidence,
		std::optional<std::filesystem::path> image_root = std::nullopt) {
	std::ifstream in(path);
	if (!in) throw std::runtime_error("cannot open " + path.string());
	if (!image_root) image_root = path.parent_path();
	auto result = parse_pseudo_labels(in, min_confidence, image_root);
	for (auto& e : result.manifest.entries)
		if (e.image_path.is_relative()) e.image_path = *image_root / e.image_path;
	return result;
}

}  // namespace ballssl::data
