#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"

using namespace ballssl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
	int code = -1;
	std::string out, err;
};

std::string slurp(const fs::path& p) {
	std::ifstream in(p, std::ios::binary);
	std::ostringstream s;
	s << in.rdbuf();
	return s.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

CliResult cli(const std::string& args, const fs::path& scratch) {
	const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
	const std::string cmd = quote(BALLSSL_CLI) + " " + args + " >" + quote(out) + " 2>" + quote(err);
	const int status = std::system(cmd.c_str());
	CliResult r;
	r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
	r.out = slurp(out);
	r.err = slurp(err);
	return r;
}

std::size_t count_lines(const std::string& text) {
	return std::size_t(std::count(text.begin(), text.end(), '\n'));
}

std::size_t count_files(const fs::path& dir) {
	if (!fs::is_directory(dir)) return 0;
	return std::size_t(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
	std::vector<std::vector<std::string>> rows;
	std::istringstream in(slurp(p));
	std::string line;
	while (std::getline(in, line)) {
		std::vector<std::string> cells;
		std::istringstream ls(line);
		std::string cell;
		while (std::getline(ls, cell, ',')) cells.push_back(cell);
		if (!line.empty() && line.back() == ',') cells.emplace_back();
		rows.push_back(cells);
	}
	return rows;
}

void expect_error(const CliResult& r, int code, const std::string& kind) {
	EXPECT_EQ(r.code, code) << r.err;
	EXPECT_TRUE(std::regex_match(r.err, std::regex("error: " + kind + ": [^\n]+\n"))) << r.err;
}

/// Shared 100-image synthetic dataset and its ingested corpus.
class CliFixture : public ::testing::Test {
protected:
	static void SetUpTestSuite() {
		dir_ = new oracle::TempDir("cli");
		const auto& d = *dir_;
		ASSERT_EQ(cli("synth --n-images 100 --seed 3 --out " + quote(d / "synth"), d.path()).code, 0);
		ASSERT_EQ(cli("ingest --labels " + quote(d / "synth/labels.jsonl") + " --out " + quote(d / "corpus"), d.path()).code, 0);
	}
	static void TearDownTestSuite() {
		delete dir_;
		dir_ = nullptr;
	}

	static fs::path root() { return dir_->path(); }
	static std::string corpus() { return quote(root() / "corpus"); }

	oracle::TempDir scratch{"cli_case"};

	CliResult run(const std::string& args) { return cli(args, scratch.path()); }
	fs::path out(const std::string& name) { return scratch / name; }

private:
	static inline oracle::TempDir* dir_ = nullptr;
};

}  // namespace

TEST_F(CliFixture, SynthWritesOneLabelLinePerImage) {
	const auto labels = slurp(root() / "synth/labels.jsonl");
	EXPECT_EQ(count_lines(labels), 100u);
	EXPECT_EQ(count_files(root() / "synth/images"), 100u);
	std::istringstream in(labels);
	std::string line;
	while (std::getline(in, line)) {
		const auto j = json::parse(line);
		EXPECT_TRUE(fs::is_regular_file(root() / "synth" / j.at("image").get<std::string>()));
	}
	EXPECT_TRUE(fs::is_regular_file(root() / "synth/run_config.json"));
}

TEST_F(CliFixture, SynthSameSeedIsByteIdentical) {
	ASSERT_EQ(run("synth --n-images 100 --seed 3 --out " + quote(out("again"))).code, 0);
	EXPECT_EQ(slurp(out("again/labels.jsonl")), slurp(root() / "synth/labels.jsonl"));
	EXPECT_EQ(slurp(out("again/images/img_00042.png")), slurp(root() / "synth/images/img_00042.png"));
	ASSERT_EQ(run("synth --n-images 100 --seed 4 --out " + quote(out("other"))).code, 0);
	EXPECT_NE(slurp(out("other/labels.jsonl")), slurp(root() / "synth/labels.jsonl"));
}

TEST_F(CliFixture, SynthBallFrequencyWithinBinomialBand) {
	ASSERT_EQ(run("synth --n-images 1000 --ball-prob 0.5 --image-size 48 --seed 0 --out " + quote(out("big"))).code, 0);
	std::istringstream in(slurp(out("big/labels.jsonl")));
	std::string line;
	std::size_t n = 0, balls = 0;
	while (std::getline(in, line)) {
		++n;
		const auto record = json::parse(line);
		for (const auto& d : record.at("detections")) {
			if (d.at("class") == "ball") {
				++balls;
				break;
			}
		}
	}
	ASSERT_EQ(n, 1000u);
	const double frac = double(balls) / double(n);
	EXPECT_GE(frac, 0.45);
	EXPECT_LE(frac, 0.55);
	EXPECT_EQ(json::parse(slurp(out("big/counts.json"))).at("with_ball").get<std::size_t>(), balls);
}

TEST_F(CliFixture, SynthPatchCorpusHasExactSplitSizes) {
	ASSERT_EQ(run("synth --patch-corpus --n-train 40 --n-val 10 --n-test 12 --seed 1 --out " + quote(out("pc"))).code, 0);
	const auto counts = json::parse(slurp(out("pc/counts.json")));
	const std::map<std::string, std::size_t> want = {{"train", 40}, {"val", 10}, {"test", 12}};
	for (const auto& [split, n] : want) {
		const std::size_t on_disk = count_files(out("pc") / split / "ball") + count_files(out("pc") / split / "no_ball");
		EXPECT_EQ(on_disk, n) << split;
		EXPECT_EQ(counts.at(split).at("ball").get<std::size_t>() + counts.at(split).at("no_ball").get<std::size_t>(), n);
	}
}

TEST_F(CliFixture, IngestCountsMatchFilesOnDisk) {
	const auto counts = json::parse(slurp(root() / "corpus/counts.json"));
	const auto printed = slurp(root() / "stdout.txt");
	std::size_t total = 0;
	for (const char* split : {"train", "val", "test"}) {
		for (const char* label : {"ball", "no_ball"}) {
			const auto on_disk = count_files(root() / "corpus" / split / label);
			EXPECT_EQ(counts.at(split).at(label).get<std::size_t>(), on_disk) << split << "/" << label;
			total += on_disk;
		}
		const std::string line = std::string(split) + ": ball " +
				std::to_string(count_files(root() / "corpus" / split / "ball")) + ", no_ball " +
				std::to_string(count_files(root() / "corpus" / split / "no_ball"));
		EXPECT_NE(printed.find(line), std::string::npos) << line;
	}
	EXPECT_GT(total, 100u);
	EXPECT_EQ(count_lines(slurp(root() / "corpus/index.jsonl")), total);
	EXPECT_EQ(count_lines(slurp(root() / "corpus/manifest.jsonl")), 100u);
}

TEST_F(CliFixture, IngestRejectsConfidenceAboveOne) {
	const auto r = run("ingest --labels " + quote(root() / "synth/labels.jsonl") + " --min-conf 1.1 --out " + quote(out("c")));
	expect_error(r, 1, "config");
	EXPECT_NE(r.err.find("min_conf"), std::string::npos);
	EXPECT_FALSE(fs::exists(out("c")));
}

TEST_F(CliFixture, IngestMissingLabelsIsInputError) {
	expect_error(run("ingest --labels " + quote(out("nope.jsonl")) + " --out " + quote(out("c"))), 1, "input");
}

TEST_F(CliFixture, PretrainEachTaskWritesCurveAndLoadableCheckpoint) {
	for (const std::string task : {"triplet", "color", "edge"}) {
		SCOPED_TRACE(task);
		const auto dir = out("pre_" + task);
		ASSERT_EQ(run("pretrain " + task + " --corpus " + corpus() + " --epochs 3 --out " + quote(dir)).code, 0);
		const auto rows = read_csv(dir / "curve.csv");
		ASSERT_EQ(rows.size(), 4u);
		EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "mean_loss", "wallclock_s"}));
		for (std::size_t e = 1; e < rows.size(); ++e) {
			ASSERT_EQ(rows[e].size(), 3u);
			EXPECT_EQ(rows[e][0], std::to_string(e));
			EXPECT_TRUE(std::isfinite(std::stod(rows[e][1])));
		}
		const auto ckpt = load_checkpoint(dir / "checkpoint.bssl");
		EXPECT_EQ(ckpt.provenance.epochs, 3);

		const auto ft = out("ft_" + task);
		const auto r = run("finetune --corpus " + corpus() + " --init " + quote(dir / "checkpoint.bssl") +
				" --epochs 1 --out " + quote(ft));
		ASSERT_EQ(r.code, 0) << r.err;
		const auto model = load_checkpoint(ft / "model.bssl");
		Detector<float> from_model(DetectorConfig{}), from_pretext(DetectorConfig{});
		from_model.load_all(model);
		from_pretext.load_backbone(ckpt);
		EXPECT_NE(nn::flatten_values(from_model.backbone().parameters()),
				nn::flatten_values(from_pretext.backbone().parameters()));
	}
}

TEST_F(CliFixture, MetatrainWritesCurveAndCheckpoint) {
	ASSERT_EQ(run("pretrain edge --corpus " + corpus() + " --epochs 1 --out " + quote(out("edge"))).code, 0);
	const auto r = run("metatrain --corpus " + corpus() + " --init " + quote(out("edge/checkpoint.bssl")) +
			" --iterations 6 --out " + quote(out("meta")));
	ASSERT_EQ(r.code, 0) << r.err;
	const auto rows = read_csv(out("meta/curve.csv"));
	ASSERT_EQ(rows.size(), 7u);
	EXPECT_EQ(rows[0], (std::vector<std::string>{"meta_iter", "mean_query_loss"}));
	ASSERT_EQ(run("finetune --corpus " + corpus() + " --init " + quote(out("meta/checkpoint.bssl")) +
					  " --epochs 1 --out " + quote(out("ft")))
					  .code,
			0);
}

TEST_F(CliFixture, FinetuneMetricsCsvColumnsAndInitErrors) {
	ASSERT_EQ(run("finetune --corpus " + corpus() + " --init random --epochs 2 --out " + quote(out("ft"))).code, 0);
	const auto rows = read_csv(out("ft/metrics.csv"));
	ASSERT_EQ(rows.size(), 3u);
	EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "train_loss", "val_loss", "val_acc", "val_f1", "val_mean_iou"}));
	EXPECT_TRUE(fs::is_regular_file(out("ft/model.bssl")));

	const auto bad = run("finetune --corpus " + corpus() + " --init " + quote(out("missing.bssl")) + " --out " + quote(out("x")));
	expect_error(bad, 1, "input");
	EXPECT_NE(bad.err.find("missing.bssl"), std::string::npos);

	std::ofstream(out("junk.bssl")) << "not a checkpoint";
	expect_error(run("finetune --corpus " + corpus() + " --init " + quote(out("junk.bssl")) + " --out " + quote(out("y"))),
			1, "checkpoint");
}

TEST_F(CliFixture, EvalIsDeterministicAndMatchesPredictionDump) {
	ASSERT_EQ(run("finetune --corpus " + corpus() + " --init random --epochs 2 --out " + quote(out("ft"))).code, 0);
	const std::string model = " --model " + quote(out("ft/model.bssl")) + " --corpus " + corpus();
	ASSERT_EQ(run("eval" + model + " --out " + quote(out("e1"))).code, 0);
	ASSERT_EQ(run("eval" + model + " --out " + quote(out("e2"))).code, 0);
	EXPECT_EQ(slurp(out("e1/metrics.json")), slurp(out("e2/metrics.json")));
	EXPECT_EQ(slurp(out("e1/predictions.csv")), slurp(out("e2/predictions.csv")));

	const auto report = json::parse(slurp(out("e1/metrics.json")));
	EXPECT_EQ(report.at("split"), "test");
	const auto rows = read_csv(out("e1/predictions.csv"));
	ASSERT_EQ(rows.size() - 1, count_files(root() / "corpus/test/ball") + count_files(root() / "corpus/test/no_ball"));
	std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
	double iou_sum = 0;
	for (std::size_t i = 1; i < rows.size(); ++i) {
		const bool truth = rows[i][1] == "ball";
		const bool pred = std::stod(rows[i][2]) >= 0.5;
		tp += truth && pred;
		fp += !truth && pred;
		fn += truth && !pred;
		tn += !truth && !pred;
		if (truth && pred) iou_sum += std::stod(rows[i][9]);
	}
	const double n = double(rows.size() - 1);
	const double precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
	const double recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
	const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
	EXPECT_EQ(report.at("samples").get<std::size_t>(), rows.size() - 1);
	EXPECT_EQ(report.at("true_positives").get<std::size_t>(), tp);
	EXPECT_NEAR(report.at("accuracy").get<double>(), double(tp + tn) / n, 1e-12);
	EXPECT_NEAR(report.at("f1").get<double>(), f1, 1e-12);
	EXPECT_NEAR(report.at("mean_iou").get<double>(), tp ? iou_sum / double(tp) : 0.0, 1e-8);

	ASSERT_EQ(run("eval" + model + " --split val --out " + quote(out("ev"))).code, 0);
	EXPECT_EQ(json::parse(slurp(out("ev/metrics.json"))).at("split"), "val");
}

TEST_F(CliFixture, CompareTabulatesBestEpochRows) {
	for (const std::string init : {"random", "again"}) {
		const std::string seed = init == "random" ? "0" : "1";
		ASSERT_EQ(run("finetune --corpus " + corpus() + " --init random --seed " + seed + " --epochs 3 --out " +
						  quote(out("runs/" + init)))
						  .code,
				0);
	}
	const auto r = run("compare " + quote(out("runs/random")) + " " + quote(out("runs/again")) + " --out " + quote(out("cmp")));
	ASSERT_EQ(r.code, 0) << r.err;
	const auto table = read_csv(out("cmp/comparison.csv"));
	ASSERT_EQ(table.size(), 3u);
	EXPECT_EQ(table[0], (std::vector<std::string>{"init", "best_epoch", "val_loss", "val_acc", "val_f1", "val_mean_iou"}));
	for (std::size_t i = 1; i < 3; ++i) {
		const auto run_rows = read_csv(out("runs") / table[i][0] / "metrics.csv");
		std::size_t best = 1;
		for (std::size_t e = 2; e < run_rows.size(); ++e)
			if (std::stod(run_rows[e][2]) < std::stod(run_rows[best][2])) best = e;
		EXPECT_EQ(table[i][1], run_rows[best][0]);
		for (std::size_t c = 2; c < 6; ++c) EXPECT_EQ(table[i][c], run_rows[best][c]) << c;
	}
	EXPECT_EQ(count_lines(slurp(out("cmp/comparison.txt"))), 3u);
	const auto svg = slurp(out("cmp/val_loss.svg"));
	EXPECT_EQ(svg.rfind("<svg", 0), 0u);
	std::size_t polylines = 0;
	for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
	EXPECT_EQ(polylines, 2u);
}

TEST_F(CliFixture, CompareMissingMetricsNamesDirectory) {
	fs::create_directories(out("empty_run"));
	const auto r = run("compare " + quote(out("empty_run")) + " --out " + quote(out("cmp")));
	expect_error(r, 1, "input");
	EXPECT_NE(r.err.find(out("empty_run").string()), std::string::npos) << r.err;
}

TEST_F(CliFixture, DigestStableUnderKeyReorder) {
	std::ofstream(out("a.json")) << R"({"seed": 5, "synth": {"n_images": 7, "ball_prob": 0.3}, "data": {"patch_size": 32}})";
	std::ofstream(out("b.json")) << R"({"data": {"patch_size": 32}, "synth": {"ball_prob": 0.3, "n_images": 7}, "seed": 5})";
	std::ofstream(out("c.json")) << R"({"data": {"patch_size": 32}, "synth": {"ball_prob": 0.3, "n_images": 8}, "seed": 5})";
	for (const char* name : {"a", "b", "c"})
		ASSERT_EQ(run(std::string("synth --config ") + quote(out(std::string(name) + ".json")) + " --out " +
						  quote(out(std::string("o") + name)))
						  .code,
				0);
	const auto a = json::parse(slurp(out("oa/run_config.json")));
	const auto b = json::parse(slurp(out("ob/run_config.json")));
	const auto c = json::parse(slurp(out("oc/run_config.json")));
	EXPECT_EQ(a.at("digest"), b.at("digest"));
	EXPECT_EQ(a.at("config"), b.at("config"));
	EXPECT_NE(a.at("digest"), c.at("digest"));
	EXPECT_EQ(a.at("digest").get<std::string>(), sha256_hex(a.at("config").dump()));
	EXPECT_EQ(a.at("config").at("synth").at("n_images"), 7);
	EXPECT_EQ(slurp(out("oa/labels.jsonl")), slurp(out("ob/labels.jsonl")));
}

TEST_F(CliFixture, FlagsOverrideConfigFile) {
	std::ofstream(out("cfg.json")) << R"({"seed": 5, "synth": {"n_images": 7}})";
	ASSERT_EQ(run("synth --config " + quote(out("cfg.json")) + " --n-images 4 --seed 9 --out " + quote(out("o"))).code, 0);
	const auto cfg = json::parse(slurp(out("o/run_config.json"))).at("config");
	EXPECT_EQ(cfg.at("synth").at("n_images"), 4);
	EXPECT_EQ(cfg.at("seed"), 9);
	EXPECT_EQ(count_lines(slurp(out("o/labels.jsonl"))), 4u);
}

TEST_F(CliFixture, UnknownConfigKeyRejected) {
	std::ofstream(out("cfg.json")) << R"({"synth": {"n_imgs": 7}})";
	const auto r = run("synth --config " + quote(out("cfg.json")) + " --out " + quote(out("o")));
	expect_error(r, 1, "config");
	EXPECT_NE(r.err.find("n_imgs"), std::string::npos);
	std::ofstream(out("broken.json")) << "{\"synth\": ";
	expect_error(run("synth --config " + quote(out("broken.json")) + " --out " + quote(out("o"))), 1, "config");
}

TEST_F(CliFixture, NonEmptyOutputRefusedWithoutForce) {
	fs::create_directories(out("o"));
	std::ofstream(out("o/keep.txt")) << "x";
	const auto r = run("synth --n-images 3 --out " + quote(out("o")));
	expect_error(r, 1, "input");
	EXPECT_FALSE(fs::exists(out("o/labels.jsonl")));
	EXPECT_EQ(run("synth --n-images 3 --force --out " + quote(out("o"))).code, 0);
	EXPECT_EQ(count_lines(slurp(out("o/labels.jsonl"))), 3u);
	fs::create_directories(out("empty"));
	EXPECT_EQ(run("synth --n-images 3 --out " + quote(out("empty"))).code, 0);
}

TEST_F(CliFixture, UsageErrorsExitTwo) {
	expect_error(run(""), 2, "usage");
	expect_error(run("frobnicate"), 2, "usage");
	expect_error(run("synth --n-images notanumber --out " + quote(out("o"))), 2, "usage");
	expect_error(run("finetune --corpus"), 2, "usage");
}

TEST_F(CliFixture, QuietSuppressesProgress) {
	ASSERT_EQ(run("synth --n-images 3 --quiet --out " + quote(out("o"))).code, 0);
	EXPECT_EQ(slurp(out("stdout.txt")), "");
}

TEST_F(CliFixture, RerunIsByteIdentical) {
	for (const char* d : {"r1", "r2"}) {
		ASSERT_EQ(run("finetune --corpus " + corpus() + " --init random --epochs 2 --seed 4 --out " + quote(out(d))).code, 0);
	}
	EXPECT_EQ(slurp(out("r1/metrics.csv")), slurp(out("r2/metrics.csv")));
	EXPECT_EQ(slurp(out("r1/model.bssl")), slurp(out("r2/model.bssl")));
	EXPECT_EQ(json::parse(slurp(out("r1/run_config.json"))).at("digest"),
			json::parse(slurp(out("r2/run_config.json"))).at("digest"));
}
