#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/data/patches.hpp"
#include "ballssl/data/pseudo_labels.hpp"
#include "ballssl/data/split.hpp"
#include "ballssl/data/synthetic.hpp"
#include "ballssl/image.hpp"

namespace ballssl::data {

namespace fs = std::filesystem;

inline constexpr Split kAllSplits[] = {Split::train, Split::val, Split::test};

/**
 * Writes <root>/{train,val,test}/{ball,no_ball}/<id>.png, targets.jsonl (circle per
 * positive) and index.jsonl (split, label and source image of every patch).
 * Pixels are quantized to 8 bits.
 */
inline void write_corpus(const fs::path& root, const SplitSet<PatchSample>& corpus) {
	std::ofstream targets(root / "targets.jsonl"), index(root / "index.jsonl");
	for (Split s : kAllSplits) {
		for (const char* label : {"ball", "no_ball"}) fs::create_directories(root / to_string(s) / label);
		for (const auto& p : corpus[s]) {
			p.validate();
			write_png(root / to_string(s) / to_string(p.label) / (p.id + ".png"), p.pixels);
			index << nlohmann::json{{"id", p.id}, {"split", to_string(s)}, {"label", to_string(p.label)},
					{"source", p.source_image_id}}.dump()
				  << '\n';
			if (p.circle)
				targets << nlohmann::json{{"id", p.id}, {"circle", {p.circle->cx, p.circle->cy, p.circle->r}}}.dump() << '\n';
		}
	}
	if (!targets || !index) throw std::runtime_error("failed writing corpus index under " + root.string());
}

namespace detail {

/// "<image>_b3" / "<image>_n0" -> "<image>"; other ids are their own source.
inline std::string source_from_patch_id(const std::string& id) {
	const auto pos = id.rfind('_');
	if (pos == std::string::npos || pos + 2 > id.size() || (id[pos + 1] != 'b' && id[pos + 1] != 'n')) return id;
	if (!std::all_of(id.begin() + std::ptrdiff_t(pos) + 2, id.end(), [](char c) { return c >= '0' && c <= '9'; }))
		return id;
	return id.substr(0, pos);
}

inline std::map<std::string, nlohmann::json> read_jsonl_by_id(const fs::path& path) {
	std::map<std::string, nlohmann::json> out;
	std::ifstream in(path);
	if (!in) return out;
	std::string line;
	std::size_t n = 0;
	while (std::getline(in, line)) {
		++n;
		if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
		try {
			auto j = nlohmann::json::parse(line);
			const auto id = j.at("id").get<std::string>();
			out[id] = std::move(j);
		} catch (const nlohmann::json::exception& e) {
			throw ParseError(n, path.filename().string() + ": " + e.what());
		}
	}
	return out;
}

}  // namespace detail

/// Loads one split of a corpus directory, sorted by patch id.
inline std::vector<PatchSample> read_corpus_split(const fs::path& root, Split split) {
	if (!fs::is_directory(root / to_string(split)))
		throw std::runtime_error("corpus " + root.string() + " has no " + std::string(to_string(split)) + " directory");
	const auto targets = detail::read_jsonl_by_id(root / "targets.jsonl");
	const auto index = detail::read_jsonl_by_id(root / "index.jsonl");
	std::vector<PatchSample> out;
	for (PatchLabel label : {PatchLabel::ball, PatchLabel::no_ball}) {
		const fs::path dir = root / to_string(split) / to_string(label);
		if (!fs::is_directory(dir)) continue;
		std::vector<fs::path> files;
		for (const auto& e : fs::directory_iterator(dir))
			if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
		for (const auto& f : files) {
			PatchSample p;
			p.id = f.stem().string();
			p.pixels = read_png(f);
			p.label = label;
			const auto idx = index.find(p.id);
			p.source_image_id = idx != index.end() && idx->second.contains("source")
					? idx->second["source"].get<std::string>()
					: detail::source_from_patch_id(p.id);
			if (label == PatchLabel::ball) {
				const auto t = targets.find(p.id);
				if (t == targets.end()) throw std::runtime_error("targets.jsonl has no circle for ball patch " + p.id);
				const auto& c = t->second.at("circle");
				p.circle = Circle{c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
			}
			p.validate();
			out.push_back(std::move(p));
		}
	}
	std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
	return out;
}

inline SplitSet<PatchSample> read_corpus(const fs::path& root) {
	SplitSet<PatchSample> out;
	for (Split s : kAllSplits) out[s] = read_corpus_split(root, s);
	return out;
}

/// Axis-aligned box around a rendered ball, as a detector would report it.
inline BoundingBox ball_box(const Circle& c) { return {c.cx - c.r, c.cy - c.r, 2 * c.r, 2 * c.r}; }

struct SyntheticCorpusOptions {
	std::size_t n_train = 2000;
	std::size_t n_val = 400;
	std::size_t n_test = 400;
	SyntheticSceneParams scene;
	PatchOptions patches;
	std::uint64_t seed = 0;

	std::size_t count(Split s) const { return s == Split::train ? n_train : s == Split::val ? n_val : n_test; }
};

/**
 * Balanced patch corpus with exact per-split sizes: every scene holds one ball and
 * yields one positive and one negative patch. Scenes are never shared between splits.
 */
inline SplitSet<PatchSample> build_synthetic_corpus(const SyntheticCorpusOptions& opt) {
	SyntheticSceneParams scene_params = opt.scene;
	scene_params.ball_count = 1;
	PatchOptions patch_opt = opt.patches;
	patch_opt.negatives_per_image = 1;
	patch_opt.seed = opt.seed;
	SplitSet<PatchSample> out;
	for (Split s : kAllSplits) {
		auto& dst = out[s];
		for (std::size_t i = 0; dst.size() < opt.count(s); ++i) {
			char id[64];
			std::snprintf(id, sizeof id, "syn_%s_%05zu", std::string(to_string(s)).c_str(), i);
			const auto scene = generate_synthetic_scene(scene_params, derive_seed(opt.seed, id));
			DatasetManifest m;
			ManifestEntry e;
			e.image_id = id;
			e.width = scene.image.width;
			e.height = scene.image.height;
			for (const auto& c : scene.balls) e.records.push_back({id, ObjectClass::ball, ball_box(c), 1.0});
			m.entries.push_back(std::move(e));
			auto patches = extract_patches(m, patch_opt, [&](const ManifestEntry&) { return std::optional<Image>(scene.image); });
			for (auto& p : patches.samples)
				if (dst.size() < opt.count(s)) dst.push_back(std::move(p));
		}
	}
	return out;
}

struct SyntheticDatasetSummary {
	std::size_t images = 0;
	std::size_t with_ball = 0;
};

/**
 * Full-frame synthetic images plus labels.jsonl in the pseudo-label format, so the
 * output can be fed to ingestion. Each image holds a ball with probability `ball_prob`.
 */
inline SyntheticDatasetSummary write_synthetic_dataset(const fs::path& out_dir, const SyntheticSceneParams& params,
		std::size_t n_images, double ball_prob, std::uint64_t seed) {
	if (ball_prob < 0 || ball_prob > 1) throw std::invalid_argument("ball probability must be in [0,1]");
	fs::create_directories(out_dir / "images");
	std::ofstream labels(out_dir / "labels.jsonl");
	Rng rng = make_rng(seed, "synth/ball_presence");
	SyntheticDatasetSummary summary;
	for (std::size_t i = 0; i < n_images; ++i) {
		char id[32];
		std::snprintf(id, sizeof id, "img_%05zu", i);
		SyntheticSceneParams p = params;
		p.ball_count = bernoulli(rng, ball_prob) ? 1 : 0;
		const auto scene = generate_synthetic_scene(p, derive_seed(seed, id));
		const std::string rel = std::string("images/") + id + ".png";
		write_png(out_dir / rel, scene.image);
		nlohmann::json dets = nlohmann::json::array();
		for (const auto& c : scene.balls) {
			const auto b = ball_box(c);
			dets.push_back({{"class", "ball"}, {"bbox", {b.x, b.y, b.w, b.h}}, {"conf", 1.0}});
		}
		labels << nlohmann::json{{"image", rel}, {"width", scene.image.width}, {"height", scene.image.height},
				{"detections", dets}}.dump()
			   << '\n';
		++summary.images;
		summary.with_ball += scene.balls.size();
	}
	if (!labels) throw std::runtime_error("failed writing " + (out_dir / "labels.jsonl").string());
	return summary;
}

}  // namespace ballssl::data
