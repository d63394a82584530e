#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "ballssl/backbone.hpp"
#include "ballssl/core/digest.hpp"
#include "ballssl/data/corpus.hpp"
#include "ballssl/detector.hpp"
#include "ballssl/meta.hpp"
#include "ballssl/pretext.hpp"

namespace ballssl::cli {

using nlohmann::json;

/// Every tunable of every command, with defaults. Config files may override any subset.
inline json default_run_config() {
	const data::PatchOptions patches;
	const data::SyntheticSceneParams scene;
	const PretextTrainConfig pretext;
	const meta::MetaConfig meta;
	const DetectorConfig detector;
	return {
			{"seed", 0},
			{"inputs", {{"labels", ""}, {"images", ""}, {"corpus", ""}, {"init", "random"}, {"model", ""},
							   {"runs", json::array()}}},
			{"data", {{"min_conf", 0.5}, {"patch_size", patches.patch_size},
							 {"negatives_per_image", patches.negatives_per_image}, {"ratios", {0.8, 0.1, 0.1}},
							 {"context_scale", patches.context_scale}, {"jitter", patches.jitter}}},
			{"synth", {{"n_images", 100}, {"ball_prob", 0.5}, {"image_size", scene.width},
							  {"radius_min", scene.radius_min}, {"radius_max", scene.radius_max},
							  {"line_density", scene.line_density}, {"shadow_probability", scene.shadow_probability},
							  {"noise_sigma", scene.noise_sigma}, {"patch_corpus", false}, {"n_train", 2000},
							  {"n_val", 400}, {"n_test", 400}}},
			{"pretext", {{"task", task_name(pretext.task)}, {"epochs", pretext.epochs}, {"batch_size", pretext.batch_size},
								{"learning_rate", pretext.learning_rate}, {"margin", pretext.margin},
								{"embedding_dim", pretext.embedding_dim}}},
			{"meta", {{"inner_lr", meta.inner_lr}, {"inner_steps", meta.inner_steps}, {"meta_lr", meta.meta_lr},
							 {"episodes_per_meta_batch", meta.episodes_per_meta_batch}, {"first_order", meta.first_order},
							 {"k_support", meta.k_support}, {"k_query", meta.k_query}, {"iterations", meta.iterations},
							 {"optimizer", meta::optimizer_name(meta.optimizer)}}},
			{"detector", {{"class_hidden", detector.class_hidden}, {"regression_hidden", detector.regression_hidden},
								 {"regression_weight", detector.regression_weight},
								 {"learning_rate", detector.learning_rate}, {"epochs", detector.epochs},
								 {"batch_size", detector.batch_size}}},
			{"eval", {{"split", "test"}}},
	};
}

/// Recursive override; keys absent from `base` are rejected so typos surface.
inline void merge_config(json& base, const json& patch, const std::string& path = "") {
	if (!patch.is_object()) throw ConfigError("config" + (path.empty() ? "" : " section '" + path + "'") + " must be an object");
	for (const auto& [key, value] : patch.items()) {
		const std::string where = path.empty() ? key : path + "." + key;
		if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
		if (base[key].is_object()) merge_config(base[key], value, where);
		else base[key] = value;
	}
}

inline json load_config_file(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) throw ConfigError("cannot open config file " + path.string());
	try {
		return json::parse(in);
	} catch (const json::parse_error& e) {
		throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
	}
}

/**
 * Resolved configuration of one command. The digest hashes the canonical dump
 * (keys sorted) of everything except the output directory.
 */
struct RunConfig {
	json doc = default_run_config();

	template<typename T>
	T get(const std::string& pointer) const {
		const json::json_pointer ptr(pointer);
		if (!doc.contains(ptr)) throw ConfigError("missing config key " + pointer);
		try {
			return doc.at(ptr).get<T>();
		} catch (const json::exception&) {
			throw ConfigError("config key " + pointer + " has the wrong type: " + doc.at(ptr).dump());
		}
	}

	void set(const std::string& pointer, json value) { doc[json::json_pointer(pointer)] = std::move(value); }

	std::uint64_t seed() const { return get<std::uint64_t>("/seed"); }
	std::string digest() const { return sha256_hex(doc.dump()); }

	json serialized(const std::string& command, const std::filesystem::path& out) const {
		return {{"command", command}, {"config", doc}, {"digest", digest()}, {"out", out.string()}};
	}

	data::PatchOptions patch_options() const {
		data::PatchOptions p;
		p.patch_size = get<int>("/data/patch_size");
		p.negatives_per_image = get<int>("/data/negatives_per_image");
		p.context_scale = get<double>("/data/context_scale");
		p.jitter = get<double>("/data/jitter");
		p.seed = seed();
		p.validate();
		return p;
	}

	data::SplitRatios ratios() const {
		const auto r = get<std::vector<double>>("/data/ratios");
		if (r.size() != 3) throw ConfigError("data.ratios needs three values (train, val, test)");
		data::SplitRatios out{r[0], r[1], r[2]};
		out.validate();
		return out;
	}

	data::SyntheticSceneParams scene_params() const {
		data::SyntheticSceneParams s;
		s.width = s.height = get<int>("/synth/image_size");
		s.radius_min = get<double>("/synth/radius_min");
		s.radius_max = get<double>("/synth/radius_max");
		s.line_density = get<double>("/synth/line_density");
		s.shadow_probability = get<double>("/synth/shadow_probability");
		s.noise_sigma = get<double>("/synth/noise_sigma");
		s.validate();
		return s;
	}

	PretextTrainConfig pretext() const {
		PretextTrainConfig c;
		c.task = parse_pretext_task(get<std::string>("/pretext/task"));
		c.epochs = get<int>("/pretext/epochs");
		c.batch_size = get<std::size_t>("/pretext/batch_size");
		c.learning_rate = get<double>("/pretext/learning_rate");
		c.margin = get<double>("/pretext/margin");
		c.embedding_dim = get<std::size_t>("/pretext/embedding_dim");
		c.seed = seed();
		c.validate();
		return c;
	}

	meta::MetaConfig meta() const {
		meta::MetaConfig c;
		c.inner_lr = get<double>("/meta/inner_lr");
		c.inner_steps = get<int>("/meta/inner_steps");
		c.meta_lr = get<double>("/meta/meta_lr");
		c.episodes_per_meta_batch = get<std::size_t>("/meta/episodes_per_meta_batch");
		c.first_order = get<bool>("/meta/first_order");
		c.k_support = get<std::size_t>("/meta/k_support");
		c.k_query = get<std::size_t>("/meta/k_query");
		c.iterations = get<int>("/meta/iterations");
		c.optimizer = meta::parse_optimizer(get<std::string>("/meta/optimizer"));
		c.seed = seed();
		c.validate();
		return c;
	}

	DetectorConfig detector() const {
		DetectorConfig c;
		c.class_hidden = get<std::vector<std::size_t>>("/detector/class_hidden");
		c.regression_hidden = get<std::vector<std::size_t>>("/detector/regression_hidden");
		c.regression_weight = get<double>("/detector/regression_weight");
		c.learning_rate = get<double>("/detector/learning_rate");
		c.epochs = get<int>("/detector/epochs");
		c.batch_size = get<std::size_t>("/detector/batch_size");
		c.seed = seed();
		c.validate();
		return c;
	}
};

}  // namespace ballssl::cli
