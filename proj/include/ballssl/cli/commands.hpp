#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/checkpoint.hpp"
#include "ballssl/cli/run_config.hpp"
#include "ballssl/data/corpus.hpp"
#include "ballssl/detector.hpp"
#include "ballssl/finetune.hpp"
#include "ballssl/meta.hpp"
#include "ballssl/pretext.hpp"

namespace ballssl::cli {

namespace fs = std::filesystem;

class CommandError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

struct Context {
	RunConfig config;
	fs::path out;
	bool force = false;
	bool quiet = false;
	std::ostream* log = &std::cout;

	std::ostream& info() const {
		static std::ostream null(nullptr);
		return quiet ? null : *log;
	}
};

/// Text form of every CSV number.
inline std::string num(double v) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.10g", v);
	return buf;
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
	std::ofstream out(path, std::ios::binary);
	out << text;
	if (!out) throw CommandError("cannot write " + path.string());
}

inline std::string read_text(const fs::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) throw CommandError("cannot read " + path.string());
	std::ostringstream s;
	s << in.rdbuf();
	return s.str();
}

/// Creates the output directory (refusing a non-empty one without --force) and records the run config.
inline void begin_run(const Context& ctx, const std::string& command) {
	if (ctx.out.empty()) throw CommandError("no output directory given (--out)");
	if (fs::exists(ctx.out)) {
		if (!fs::is_directory(ctx.out)) throw CommandError("output path " + ctx.out.string() + " is not a directory");
		if (!fs::is_empty(ctx.out) && !ctx.force)
			throw CommandError("output directory " + ctx.out.string() + " is not empty (use --force to overwrite)");
	}
	fs::create_directories(ctx.out);
	write_text(ctx.out / "run_config.json", ctx.config.serialized(command, ctx.out).dump(2) + "\n");
}

inline fs::path require_input(const Context& ctx, const std::string& key, const std::string& flag) {
	const auto v = ctx.config.get<std::string>("/inputs/" + key);
	if (v.empty()) throw CommandError("missing input " + flag);
	return v;
}

inline Checkpoint load_checkpoint_arg(const fs::path& path) {
	if (!fs::is_regular_file(path)) throw CommandError("checkpoint " + path.string() + " does not exist");
	return load_checkpoint(path);
}

inline std::vector<data::PatchSample> load_split(const fs::path& corpus, data::Split split) {
	if (!fs::is_directory(corpus)) throw CommandError("corpus directory " + corpus.string() + " does not exist");
	auto samples = data::read_corpus_split(corpus, split);
	if (samples.empty())
		throw CommandError("corpus " + corpus.string() + " has no " + std::string(to_string(split)) + " patches");
	return samples;
}

/// Writes the corpus, prints per-split/class counts and stores them in counts.json.
inline json emit_corpus(const Context& ctx, const data::SplitSet<data::PatchSample>& corpus) {
	data::write_corpus(ctx.out, corpus);
	json counts = json::object();
	for (data::Split s : data::kAllSplits) {
		std::size_t balls = 0;
		for (const auto& p : corpus[s]) balls += p.is_ball();
		const std::string name(to_string(s));
		counts[name] = {{"ball", balls}, {"no_ball", corpus[s].size() - balls}};
		ctx.info() << name << ": ball " << balls << ", no_ball " << corpus[s].size() - balls << "\n";
	}
	write_text(ctx.out / "counts.json", counts.dump(2) + "\n");
	return counts;
}

inline json manifest_line(const data::ManifestEntry& e, const std::map<std::string, data::Split>& splits) {
	json dets = json::array();
	for (const auto& r : e.records)
		dets.push_back({{"class", r.object_class == data::ObjectClass::ball ? "ball" : "robot"},
				{"bbox", {r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h}}, {"conf", r.confidence}});
	json j = {{"schema_version", data::DatasetManifest::kSchemaVersion}, {"image_id", e.image_id},
			{"image", e.image_path.string()}, {"detections", dets}};
	if (const auto it = splits.find(e.image_id); it != splits.end()) j["split"] = to_string(it->second);
	if (e.width) j["width"] = *e.width;
	if (e.height) j["height"] = *e.height;
	return j;
}

}  // namespace detail

/**
 * Synthetic data. By default full-frame images plus labels.jsonl in the pseudo-label
 * format; with synth.patch_corpus a ready patch corpus with exact split sizes.
 */
inline json cmd_synth(const Context& ctx) {
	const auto& cfg = ctx.config;
	const auto scene = cfg.scene_params();
	detail::begin_run(ctx, "synth");
	if (cfg.get<bool>("/synth/patch_corpus")) {
		data::SyntheticCorpusOptions opt;
		opt.n_train = cfg.get<std::size_t>("/synth/n_train");
		opt.n_val = cfg.get<std::size_t>("/synth/n_val");
		opt.n_test = cfg.get<std::size_t>("/synth/n_test");
		opt.scene = scene;
		opt.patches = cfg.patch_options();
		opt.seed = cfg.seed();
		return detail::emit_corpus(ctx, data::build_synthetic_corpus(opt));
	}
	const auto n = cfg.get<std::size_t>("/synth/n_images");
	const auto summary = data::write_synthetic_dataset(ctx.out, scene, n, cfg.get<double>("/synth/ball_prob"), cfg.seed());
	ctx.info() << "images: " << summary.images << ", with ball: " << summary.with_ball << "\n";
	json j = {{"images", summary.images}, {"with_ball", summary.with_ball}};
	detail::write_text(ctx.out / "counts.json", j.dump(2) + "\n");
	return j;
}

/// Pseudo-labels -> manifest -> patches -> image-level splits -> corpus directory.
inline json cmd_ingest(const Context& ctx) {
	const auto& cfg = ctx.config;
	const fs::path labels = detail::require_input(ctx, "labels", "--labels");
	const auto images = cfg.get<std::string>("/inputs/images");
	const double min_conf = cfg.get<double>("/data/min_conf");
	if (!(min_conf >= 0 && min_conf <= 1)) throw ConfigError("min_conf must be in [0,1], got " + num(min_conf));
	const auto patch_opt = cfg.patch_options();
	const auto ratios = cfg.ratios();
	if (!fs::is_regular_file(labels)) throw CommandError("label file " + labels.string() + " does not exist");
	auto ingest = data::ingest_pseudo_labels(labels, min_conf,
			images.empty() ? std::nullopt : std::optional<fs::path>(images));
	auto& manifest = ingest.manifest;
	manifest.assign(ratios, cfg.seed());
	manifest.validate();
	auto extraction = data::extract_patches(manifest, patch_opt);
	data::SplitSet<data::PatchSample> corpus;
	for (auto& p : extraction.samples) corpus[manifest.split_assignment.at(p.source_image_id)].push_back(std::move(p));
	detail::begin_run(ctx, "ingest");

	std::ostringstream lines;
	for (const auto& e : manifest.entries) lines << detail::manifest_line(e, manifest.split_assignment).dump() << "\n";
	detail::write_text(ctx.out / "manifest.jsonl", lines.str());
	json counts = detail::emit_corpus(ctx, corpus);
	const json warnings = {{"dropped_low_confidence", ingest.dropped_low_confidence},
			{"skipped_unknown_class", ingest.skipped_unknown_class}, {"skipped_outside_image", ingest.skipped_outside_image},
			{"clamped_boxes", ingest.clamped_boxes}, {"unreadable_images", extraction.unreadable_images},
			{"small_boxes", extraction.small_boxes}, {"negatives_skipped", extraction.negatives_skipped}};
	for (const auto& [k, v] : warnings.items())
		if (v.get<std::size_t>() > 0) ctx.info() << "warning: " << k << " = " << v << "\n";
	detail::write_text(ctx.out / "ingest_report.json", warnings.dump(2) + "\n");
	return counts;
}

/// Pretext pretraining on the corpus train split: checkpoint.bssl + curve.csv.
inline PretextResult cmd_pretrain(const Context& ctx) {
	const auto config = ctx.config.pretext();
	const fs::path corpus = detail::require_input(ctx, "corpus", "--corpus");
	const auto train = detail::load_split(corpus, data::Split::train);
	detail::begin_run(ctx, "pretrain");
	auto result = train_pretext(config, train);
	save_checkpoint(result.checkpoint, ctx.out / "checkpoint.bssl");
	std::string csv = "epoch,mean_loss,wallclock_s\n";
	for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
		csv += std::to_string(e + 1) + "," + num(result.epoch_loss[e]) + "," + num(result.wallclock_s[e]) + "\n";
		ctx.info() << task_name(config.task) << " epoch " << e + 1 << " loss " << num(result.epoch_loss[e]) << "\n";
	}
	detail::write_text(ctx.out / "curve.csv", csv);
	return result;
}

/// MAML meta-training on the corpus train split, optionally from a pretrained backbone.
inline meta::MetaTrainResult cmd_metatrain(const Context& ctx) {
	const auto config = ctx.config.meta();
	const fs::path corpus = detail::require_input(ctx, "corpus", "--corpus");
	const auto init = ctx.config.get<std::string>("/inputs/init");
	std::optional<Checkpoint> start;
	if (!init.empty() && init != "random") start = detail::load_checkpoint_arg(init);
	const auto pool = detail::load_split(corpus, data::Split::train);
	detail::begin_run(ctx, "metatrain");
	auto result = meta::meta_train(config, pool, start ? &*start : nullptr, [&](int it, double loss) {
		if (it % 10 == 0) ctx.info() << "meta_iter " << it << " query loss " << num(loss) << "\n";
	});
	save_checkpoint(result.checkpoint, ctx.out / "checkpoint.bssl");
	std::string csv = "meta_iter,mean_query_loss\n";
	for (std::size_t i = 0; i < result.query_loss.size(); ++i)
		csv += std::to_string(i + 1) + "," + num(result.query_loss[i]) + "\n";
	detail::write_text(ctx.out / "curve.csv", csv);
	return result;
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& curve) {
	std::string csv = "epoch,train_loss,val_loss,val_acc,val_f1,val_mean_iou\n";
	for (const auto& e : curve)
		csv += std::to_string(e.epoch) + "," + num(e.train_loss) + "," + num(e.val_loss) + "," + num(e.val_acc) + "," +
				num(e.val_f1) + "," + num(e.val_mean_iou) + "\n";
	return csv;
}

/// Supervised fine-tuning from random init or a checkpoint's backbone: model.bssl + metrics.csv.
inline FinetuneResult cmd_finetune(const Context& ctx) {
	const auto config = ctx.config.detector();
	const fs::path corpus = detail::require_input(ctx, "corpus", "--corpus");
	const auto init = ctx.config.get<std::string>("/inputs/init");
	std::optional<Checkpoint> start;
	if (init.empty()) throw CommandError("missing input --init (random or a checkpoint path)");
	if (init != "random") start = detail::load_checkpoint_arg(init);
	const auto train = data::to_tensors<float>(detail::load_split(corpus, data::Split::train));
	const auto val = data::to_tensors<float>(detail::load_split(corpus, data::Split::val));
	detail::begin_run(ctx, "finetune");
	Detector<float> model(config);
	if (start) model.load_backbone(*start);
	auto result = finetune(model, train, val, start ? start->provenance.task : "random");
	save_checkpoint(result.best, ctx.out / "model.bssl");
	detail::write_text(ctx.out / "metrics.csv", metrics_csv(result.curve));
	for (const auto& e : result.curve)
		ctx.info() << "epoch " << e.epoch << " train_loss " << num(e.train_loss) << " val_loss " << num(e.val_loss)
				   << " val_f1 " << num(e.val_f1) << "\n";
	ctx.info() << "best epoch " << result.best_epoch << "\n";
	return result;
}

inline std::string predictions_csv(const std::vector<data::PatchSample>& samples, const Evaluation& ev) {
	std::string csv = "id,truth_label,pred_conf,truth_cx,truth_cy,truth_r,pred_cx,pred_cy,pred_r,iou\n";
	for (std::size_t i = 0; i < samples.size(); ++i) {
		const auto& s = samples[i];
		const auto& p = ev.predictions[i];
		csv += s.id + "," + std::string(to_string(s.label)) + "," + num(p.ball_confidence) + ",";
		csv += s.circle ? num(s.circle->cx) + "," + num(s.circle->cy) + "," + num(s.circle->r) + "," : std::string(",,,");
		csv += num(p.circle.cx) + "," + num(p.circle.cy) + "," + num(p.circle.r) + "," + num(ev.iou[i]) + "\n";
	}
	return csv;
}

/// Evaluates a detector checkpoint on one corpus split: metrics.json + predictions.csv.
inline Evaluation cmd_eval(const Context& ctx) {
	const auto config = ctx.config.detector();
	const fs::path corpus = detail::require_input(ctx, "corpus", "--corpus");
	const fs::path model_path = detail::require_input(ctx, "model", "--model");
	const auto split = data::parse_split(ctx.config.get<std::string>("/eval/split"));
	const auto ckpt = detail::load_checkpoint_arg(model_path);
	const auto samples = detail::load_split(corpus, split);
	Detector<float> model(config);
	model.load_all(ckpt);
	detail::begin_run(ctx, "eval");
	auto ev = evaluate(model, data::to_tensors<float>(samples));
	json report = ev.report.to_json();
	report["split"] = to_string(split);
	detail::write_text(ctx.out / "metrics.json", report.dump(2) + "\n");
	detail::write_text(ctx.out / "predictions.csv", predictions_csv(samples, ev));
	ctx.info() << "loss " << num(ev.report.loss) << " accuracy " << num(ev.report.accuracy) << " f1 "
			   << num(ev.report.f1) << " mean_iou " << num(ev.report.mean_iou) << " mAP " << num(ev.report.map_range)
			   << "\n";
	return ev;
}

/// One parsed metrics.csv.
struct RunCurve {
	std::string label;
	std::vector<EpochMetrics> curve;
	std::size_t best = 0;  // index of the minimum-val_loss row
};

inline RunCurve read_run_curve(const fs::path& dir) {
	const fs::path path = dir / "metrics.csv";
	if (!fs::is_regular_file(path)) throw CommandError("run directory " + dir.string() + " has no metrics.csv");
	std::istringstream in(detail::read_text(path));
	std::string line;
	std::getline(in, line);
	if (line.rfind("epoch,train_loss,val_loss,val_acc,val_f1,val_mean_iou", 0) != 0)
		throw CommandError(path.string() + " has an unexpected header");
	RunCurve run;
	run.label = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
	while (std::getline(in, line)) {
		if (line.empty()) continue;
		std::vector<double> v;
		std::istringstream cells(line);
		std::string cell;
		while (std::getline(cells, cell, ',')) v.push_back(std::stod(cell));
		if (v.size() != 6) throw CommandError(path.string() + ": malformed row '" + line + "'");
		run.curve.push_back({int(v[0]), v[1], v[2], v[3], v[4], v[5]});
	}
	if (run.curve.empty()) throw CommandError(path.string() + " has no rows");
	for (std::size_t i = 1; i < run.curve.size(); ++i)
		if (run.curve[i].val_loss < run.curve[run.best].val_loss) run.best = i;
	return run;
}

/// Validation-loss curves as an SVG line chart.
inline std::string loss_plot_svg(const std::vector<RunCurve>& runs) {
	static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
	const double W = 640, H = 400, left = 60, right = 150, top = 30, bottom = 50;
	int max_epoch = 1;
	double lo = std::numeric_limits<double>::infinity(), hi = -lo;
	for (const auto& r : runs)
		for (const auto& e : r.curve) {
			max_epoch = std::max(max_epoch, e.epoch);
			lo = std::min(lo, e.val_loss);
			hi = std::max(hi, e.val_loss);
		}
	if (hi - lo < 1e-12) {
		hi += 0.5;
		lo -= 0.5;
	}
	const double pw = W - left - right, ph = H - top - bottom;
	auto x = [&](double epoch) { return left + (max_epoch == 1 ? 0.5 : (epoch - 1) / (max_epoch - 1)) * pw; };
	auto y = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };
	std::ostringstream s;
	s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
	s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
	s << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">Validation loss</text>\n";
	s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
	s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
	for (int e = 1; e <= max_epoch; ++e)
		s << "<text x=\"" << num(x(e)) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << e << "</text>\n";
	for (int k = 0; k <= 4; ++k) {
		const double v = lo + (hi - lo) * k / 4;
		s << "<text x=\"" << left - 6 << "\" y=\"" << num(y(v) + 4) << "\" text-anchor=\"end\">" << num(std::round(v * 1e4) / 1e4)
		  << "</text>\n";
	}
	s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">epoch</text>\n";
	for (std::size_t i = 0; i < runs.size(); ++i) {
		const char* color = palette[i % std::size(palette)];
		s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
		for (const auto& e : runs[i].curve) s << num(x(e.epoch)) << "," << num(y(e.val_loss)) << " ";
		s << "\"/>\n";
		const double ly = top + 10 + 18 * double(i);
		s << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
		  << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
		s << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << runs[i].label << "</text>\n";
	}
	s << "</svg>\n";
	return s.str();
}

/// Best-epoch table of several fine-tuning runs (text + CSV) and their validation-loss plot.
inline std::vector<RunCurve> cmd_compare(const Context& ctx) {
	const auto dirs = ctx.config.get<std::vector<std::string>>("/inputs/runs");
	if (dirs.empty()) throw CommandError("compare needs at least one run directory");
	std::vector<RunCurve> runs;
	for (const auto& d : dirs) runs.push_back(read_run_curve(d));
	detail::begin_run(ctx, "compare");

	std::string csv = "init,best_epoch,val_loss,val_acc,val_f1,val_mean_iou\n";
	std::ostringstream table;
	std::size_t width = 4;
	for (const auto& r : runs) width = std::max(width, r.label.size());
	char row[256];
	std::snprintf(row, sizeof row, "%-*s  %5s  %9s  %9s  %9s  %9s\n", int(width), "init", "epoch", "loss", "accuracy",
			"f1", "iou");
	table << row;
	for (const auto& r : runs) {
		const auto& b = r.curve[r.best];
		csv += r.label + "," + std::to_string(b.epoch) + "," + num(b.val_loss) + "," + num(b.val_acc) + "," +
				num(b.val_f1) + "," + num(b.val_mean_iou) + "\n";
		std::snprintf(row, sizeof row, "%-*s  %5d  %9.5f  %9.5f  %9.5f  %9.5f\n", int(width), r.label.c_str(), b.epoch,
				b.val_loss, b.val_acc, b.val_f1, b.val_mean_iou);
		table << row;
	}
	detail::write_text(ctx.out / "comparison.csv", csv);
	detail::write_text(ctx.out / "comparison.txt", table.str());
	detail::write_text(ctx.out / "val_loss.svg", loss_plot_svg(runs));
	ctx.info() << table.str();
	return runs;
}

}  // namespace ballssl::cli
