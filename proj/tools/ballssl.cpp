// Command-line driver: synth, ingest, pretrain, metatrain, finetune, eval, compare.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ballssl/cli/commands.hpp"

namespace {

using ballssl::cli::json;

/// Collects "flag value -> config pointer" bindings applied after the config file.
class Overrides {
public:
	template<typename T>
	CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
		auto holder = std::make_shared<std::optional<T>>();
		apply_.push_back([holder, pointer](ballssl::cli::RunConfig& c) {
			if (*holder) c.set(pointer, **holder);
		});
		return app->add_option(flag, *holder, help);
	}

	CLI::Option* add_flag(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
		auto holder = std::make_shared<bool>(false);
		apply_.push_back([holder, pointer](ballssl::cli::RunConfig& c) {
			if (*holder) c.set(pointer, true);
		});
		return app->add_flag(flag, *holder, help);
	}

	void apply(ballssl::cli::RunConfig& c) const {
		for (const auto& f : apply_) f(c);
	}

private:
	std::vector<std::function<void(ballssl::cli::RunConfig&)>> apply_;
};

std::vector<double> parse_ratios(const std::string& text) {
	std::vector<double> out;
	std::istringstream in(text);
	std::string cell;
	while (std::getline(in, cell, ',')) {
		try {
			std::size_t used = 0;
			out.push_back(std::stod(cell, &used));
			if (used != cell.size()) throw std::invalid_argument(cell);
		} catch (const std::exception&) {
			throw ballssl::ConfigError("--ratios expects three comma-separated numbers, got '" + text + "'");
		}
	}
	if (out.size() != 3) throw ballssl::ConfigError("--ratios expects three comma-separated numbers, got '" + text + "'");
	return out;
}

std::string one_line(std::string s) {
	for (char& c : s)
		if (c == '\n' || c == '\r') c = ' ';
	return s;
}

int fail(const std::string& kind, const std::string& message) {
	std::cerr << "error: " << kind << ": " << one_line(message) << std::endl;
	return kind == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
	CLI::App app{"Self-supervised pretraining, meta-learning and evaluation for patch-level ball detection"};
	app.require_subcommand(1);
	app.fallthrough();

	std::string config_file, out;
	std::optional<std::uint64_t> seed;
	bool force = false, quiet = false;
	app.add_option("--config", config_file, "JSON run configuration (overrides defaults, flags override it)");
	app.add_option("--seed", seed, "Global seed");
	app.add_option("--out", out, "Output directory");
	app.add_flag("--force", force, "Write into a non-empty output directory");
	app.add_flag("--quiet", quiet, "Suppress progress output");

	Overrides ov;
	std::optional<std::string> ratios;

	auto* synth = app.add_subcommand("synth", "Generate synthetic images and labels, or a patch corpus");
	ov.add<std::size_t>(synth, "--n-images", "/synth/n_images", "Number of full-frame images");
	ov.add<double>(synth, "--ball-prob", "/synth/ball_prob", "Probability that an image holds a ball");
	ov.add<int>(synth, "--image-size", "/synth/image_size", "Image side in pixels");
	ov.add<double>(synth, "--noise-sigma", "/synth/noise_sigma", "Pixel noise standard deviation");
	ov.add<double>(synth, "--shadow-prob", "/synth/shadow_probability", "Probability of a shadow ramp");
	ov.add_flag(synth, "--patch-corpus", "/synth/patch_corpus", "Write a balanced patch corpus instead of images");
	ov.add<std::size_t>(synth, "--n-train", "/synth/n_train", "Patch corpus train size");
	ov.add<std::size_t>(synth, "--n-val", "/synth/n_val", "Patch corpus val size");
	ov.add<std::size_t>(synth, "--n-test", "/synth/n_test", "Patch corpus test size");
	ov.add<int>(synth, "--patch-size", "/data/patch_size", "Patch side in pixels");

	auto* ingest = app.add_subcommand("ingest", "Build a patch corpus from pseudo-labels");
	ov.add<std::string>(ingest, "--labels", "/inputs/labels", "Pseudo-label JSON-lines file")->required();
	ov.add<std::string>(ingest, "--images", "/inputs/images", "Root for relative image paths (default: label file dir)");
	ov.add<double>(ingest, "--min-conf", "/data/min_conf", "Drop detections below this confidence");
	ov.add<int>(ingest, "--patch-size", "/data/patch_size", "Patch side in pixels");
	ov.add<int>(ingest, "--neg-per-image", "/data/negatives_per_image", "Negative patches per image");
	ov.add<double>(ingest, "--context-scale", "/data/context_scale", "Positive crop side relative to the box");
	ov.add<double>(ingest, "--jitter", "/data/jitter", "Positive crop center jitter (fraction of margin)");
	ingest->add_option("--ratios", ratios, "train,val,test split ratios");

	auto* pretrain = app.add_subcommand("pretrain", "Pretext pretraining of the backbone");
	ov.add<std::string>(pretrain, "task,--task", "/pretext/task", "triplet, color(ization) or edge");
	ov.add<std::string>(pretrain, "--corpus", "/inputs/corpus", "Patch corpus directory")->required();
	ov.add<int>(pretrain, "--epochs", "/pretext/epochs", "Training epochs");
	ov.add<std::size_t>(pretrain, "--batch-size", "/pretext/batch_size", "Batch size");
	ov.add<double>(pretrain, "--lr", "/pretext/learning_rate", "Adam learning rate");
	ov.add<double>(pretrain, "--margin", "/pretext/margin", "Triplet margin");

	auto* metatrain = app.add_subcommand("metatrain", "MAML meta-training over augmentation environments");
	ov.add<std::string>(metatrain, "--corpus", "/inputs/corpus", "Patch corpus directory")->required();
	ov.add<std::string>(metatrain, "--init", "/inputs/init", "Starting checkpoint (default: random backbone)");
	ov.add<int>(metatrain, "--iterations", "/meta/iterations", "Meta-iterations");
	ov.add<double>(metatrain, "--inner-lr", "/meta/inner_lr", "Inner-loop step size");
	ov.add<int>(metatrain, "--inner-steps", "/meta/inner_steps", "Inner-loop steps");
	ov.add<double>(metatrain, "--meta-lr", "/meta/meta_lr", "Meta learning rate");
	ov.add<std::size_t>(metatrain, "--episodes", "/meta/episodes_per_meta_batch", "Episodes per meta-batch");
	ov.add<std::size_t>(metatrain, "--k-support", "/meta/k_support", "Support samples per episode");
	ov.add<std::size_t>(metatrain, "--k-query", "/meta/k_query", "Query samples per episode");
	ov.add<std::string>(metatrain, "--optimizer", "/meta/optimizer", "adam or sgd");
	bool second_order = false;
	metatrain->add_flag("--second-order", second_order, "Differentiate through the inner updates");

	auto* ft = app.add_subcommand("finetune", "Supervised fine-tuning of the detector");
	ov.add<std::string>(ft, "--corpus", "/inputs/corpus", "Patch corpus directory")->required();
	ov.add<std::string>(ft, "--init", "/inputs/init", "random or a checkpoint path");
	ov.add<int>(ft, "--epochs", "/detector/epochs", "Training epochs");
	ov.add<std::size_t>(ft, "--batch-size", "/detector/batch_size", "Batch size");
	ov.add<double>(ft, "--lr", "/detector/learning_rate", "Adam learning rate");
	ov.add<double>(ft, "--reg-weight", "/detector/regression_weight", "Weight of the circle regression loss");

	auto* ev = app.add_subcommand("eval", "Evaluate a detector on a corpus split");
	ov.add<std::string>(ev, "--model", "/inputs/model", "Detector checkpoint")->required();
	ov.add<std::string>(ev, "--corpus", "/inputs/corpus", "Patch corpus directory")->required();
	ov.add<std::string>(ev, "--split", "/eval/split", "train, val or test");

	auto* compare = app.add_subcommand("compare", "Tabulate and plot several fine-tuning runs");
	std::vector<std::string> runs;
	compare->add_option("runs", runs, "Fine-tuning run directories")->required();

	try {
		app.parse(argc, argv);
	} catch (const CLI::CallForHelp& e) {
		return app.exit(e);
	} catch (const CLI::CallForAllHelp& e) {
		return app.exit(e);
	} catch (const CLI::ParseError& e) {
		return fail("usage", e.what());
	}

	try {
		ballssl::cli::Context ctx;
		if (!config_file.empty()) ballssl::cli::merge_config(ctx.config.doc, ballssl::cli::load_config_file(config_file));
		ov.apply(ctx.config);
		if (seed) ctx.config.set("/seed", *seed);
		if (ratios) ctx.config.set("/data/ratios", parse_ratios(*ratios));
		if (second_order) ctx.config.set("/meta/first_order", false);
		if (!runs.empty()) ctx.config.set("/inputs/runs", runs);
		ctx.out = out;
		ctx.force = force;
		ctx.quiet = quiet;

		const auto* sub = app.get_subcommands().front();
		const std::string name = sub->get_name();
		if (name == "synth") ballssl::cli::cmd_synth(ctx);
		else if (name == "ingest") ballssl::cli::cmd_ingest(ctx);
		else if (name == "pretrain") ballssl::cli::cmd_pretrain(ctx);
		else if (name == "metatrain") ballssl::cli::cmd_metatrain(ctx);
		else if (name == "finetune") ballssl::cli::cmd_finetune(ctx);
		else if (name == "eval") ballssl::cli::cmd_eval(ctx);
		else if (name == "compare") ballssl::cli::cmd_compare(ctx);
	} catch (const ballssl::ConfigError& e) {
		return fail("config", e.what());
	} catch (const ballssl::cli::CommandError& e) {
		return fail("input", e.what());
	} catch (const ballssl::CheckpointError& e) {
		return fail("checkpoint", e.what());
	} catch (const ballssl::data::ParseError& e) {
		return fail("parse", e.what());
	} catch (const ballssl::TrainingDiverged& e) {
		return fail("training", e.what());
	} catch (const std::invalid_argument& e) {
		return fail("config", e.what());
	} catch (const std::exception& e) {
		return fail("runtime", e.what());
	}
	return 0;
}
