#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "bicross/cli/app.hpp"

namespace fs = std::filesystem;
using namespace bicross;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("bicross_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Runs the installed binary with stdout and stderr captured together.
CliRun run(const std::string& args, const std::string& env = "") {
  const auto log = fs::temp_directory_path() / "bicross_cli_last.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + BICROSS_CLI_PATH + std::string(" ") + args + " > " +
                          log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

bool contains(const std::string& s, const std::string& what) { return s.find(what) != std::string::npos; }

std::size_t file_count(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) ++n;
  return n;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream f(p);
  f << j.dump(2);
}

nlohmann::json tiny_dataset_config() {
  return {{"n_source", 12},
          {"n_target", 12},
          {"target_shift", "fog"},
          {"scene", {{"height", 16}, {"width", 16}, {"t_lum", 8}, {"focal", 16.0}, {"supersample", 1}}}};
}

nlohmann::json tiny_train_config(const fs::path& dataset) {
  return {{"dataset", dataset.string()}, {"batch_size", 2},   {"epochs_pretrain", 1}, {"epochs_modality", 1},
          {"epochs_glfa", 1},            {"epochs_ugds", 1},  {"warmup_steps", 2},    {"max_skip_fraction", 1.0},
          {"height", 16},                {"width", 16},       {"t_model", 4},         {"base_width", 4},
          {"decoder_width", 4},          {"global_width", 8}, {"token_width", 8},     {"se_reduction", 2},
          {"head_hidden", 4},            {"norm_groups", 2},  {"disc_hidden", 4},     {"encoder_depth", 3},
          {"fusion_levels", 3},          {"source_holdout", 0.2}};
}

}  // namespace

TEST(Cli, NoSubcommandPrintsUsage) {
  const CliRun r = run("");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.out, "make-dataset")) << r.out;
  EXPECT_TRUE(contains(r.out, "gradcheck")) << r.out;
}

TEST(Cli, UnknownFlagAndSubcommandRejected) {
  EXPECT_EQ(run("gradcheck --bogus").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --stage sideways --dry-run").code, 2);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run("--help").code, 0); }

TEST(Cli, GradcheckAllPasses) {
  const CliRun r = run("gradcheck --all");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(contains(r.out, "max_rel_err")) << r.out;
  EXPECT_TRUE(contains(r.out, "PASS")) << r.out;
  EXPECT_FALSE(contains(r.out, "FAIL")) << r.out;
  EXPECT_TRUE(contains(r.out, "seed: 7")) << r.out;
  EXPECT_EQ(run("gradcheck --only no_such_loss").code, 2);
}

TEST(Cli, ModalityWithoutPretrainNamesMissingFile) {
  const auto dir = temp_dir("nopre");
  const CliRun r = run("train --stage modality --out " + dir.string() + " --dataset " + dir.string());
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_TRUE(contains(r.out, (dir / "pretrain.ckpt").string())) << r.out;
  EXPECT_FALSE(fs::exists(dir / "modality.ckpt"));
}

TEST(Cli, SeedEnvironmentOverride) {
  const auto dir = temp_dir("seed");
  const CliRun r = run("make-dataset --out " + (dir / "d").string() + " --dry-run", "BICROSS_SEED=31337");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(contains(r.out, "seed: 31337")) << r.out;
  const CliRun t = run("train --dry-run --dataset x --out " + (dir / "t").string(), "BICROSS_SEED=99");
  EXPECT_EQ(t.code, 0) << t.out;
  EXPECT_TRUE(contains(t.out, "seed: 99")) << t.out;
  EXPECT_TRUE(contains(t.out, "resolved config:")) << t.out;
  EXPECT_EQ(run("gradcheck --dry-run", "BICROSS_SEED=abc").code, 2);
}

TEST(Cli, DryRunWritesNothing) {
  const auto dir = temp_dir("dry");
  const auto frame = dir / "f.pgm";
  write_pnm(Image8{4, 3, 1, std::vector<std::uint8_t>(12, 100)}, frame);
  const std::size_t before = file_count(dir);
  const auto out = dir / "out";
  for (const std::string& args : std::vector<std::string>
       {"make-dataset --desk --out " + out.string() + " --dry-run",
        "encode --input " + frame.string() + " --output " + (out / "x.spk").string() + " --rate-image " +
            (out / "r.pgm").string() + " --dry-run",
        "train --desk --stage all --dataset " + dir.string() + " --out " + out.string() + " --dry-run",
        "train --stage pretrain --dataset " + dir.string() + " --out " + out.string() + " --dry-run",
        std::string("gradcheck --dry-run"), "report --run " + out.string() + " --dry-run"}) {
    const CliRun r = run(args);
    EXPECT_EQ(r.code, 0) << args << "\n" << r.out;
    EXPECT_TRUE(contains(r.out, "plan:")) << args << "\n" << r.out;
  }
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(file_count(dir), before);
}

TEST(Cli, EncodeWritesStreamAndRateImage) {
  const auto dir = temp_dir("encode");
  auto frames = dir / "frames";
  fs::create_directories(frames);
  for (int k = 0; k < 3; ++k) {
    Image8 img{5, 4, 1, std::vector<std::uint8_t>(20)};
    for (int i = 0; i < 20; ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 12);
    write_pnm(img, frames / ("f" + std::to_string(k) + ".pgm"));
  }
  const CliRun r = run("encode --input " + frames.string() + " --output " + (dir / "s.spk").string() + " --interp 2" +
                    " --rate-image " + (dir / "rate.pgm").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto s = spike::read_spk(dir / "s.spk");
  EXPECT_EQ(s.t, 5);
  EXPECT_EQ(s.h, 4);
  EXPECT_EQ(s.w, 5);
  EXPECT_EQ(read_pnm(dir / "rate.pgm").pixels, spike::firing_rate_image(s));
  EXPECT_EQ(run("encode --input " + frames.string() + " --output " + (dir / "t.spk").string() + " --theta -1").code, 2);
  EXPECT_EQ(run("encode --input " + (dir / "none").string() + " --output " + (dir / "t.spk").string()).code, 1);
}

TEST(Cli, MalformedFilesAreFormatErrors) {
  const auto dir = temp_dir("malformed");
  {
    std::ofstream f(dir / "bad.ckpt");
    f << "not a checkpoint at all";
  }
  EXPECT_EQ(run("eval --checkpoint " + (dir / "bad.ckpt").string()).code, 2);
  EXPECT_EQ(run("eval --checkpoint " + (dir / "none.ckpt").string()).code, 1);
  {
    std::ofstream f(dir / "cfg.json");
    f << "{\"no_such_key\": 1}";
  }
  EXPECT_EQ(run("train --dry-run --config " + (dir / "cfg.json").string()).code, 2);
  EXPECT_EQ(run("report --run " + (dir / "empty").string()).code, 1);
}

TEST(Cli, StagedTinyRunEndToEnd) {
  const auto dir = temp_dir("staged");
  const auto data = dir / "data", run_dir = dir / "run";
  write_json(dir / "dataset.json", tiny_dataset_config());
  write_json(dir / "train.json", tiny_train_config(data));
  const std::string cfg = " --config " + (dir / "train.json").string() + " --out " + run_dir.string();

  CliRun r = run("make-dataset --config " + (dir / "dataset.json").string() + " --out " + data.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(data / "manifest.json"));

  for (const char* stage : {"pretrain", "modality", "domain", "source"}) {
    r = run(std::string("train --stage ") + stage + cfg);
    ASSERT_EQ(r.code, 0) << stage << "\n" << r.out;
    EXPECT_TRUE(fs::exists(run_dir / (std::string(stage) + ".ckpt"))) << stage;
  }
  EXPECT_TRUE(fs::exists(run_dir / "config.json"));
  EXPECT_TRUE(fs::exists(run_dir / "metrics.jsonl"));

  // resuming a finished stage is a no-op; a changed config is refused
  r = run("train --stage pretrain --resume " + (run_dir / "pretrain.ckpt").string() + cfg);
  EXPECT_EQ(r.code, 0) << r.out;
  r = run("train --stage pretrain --resume " + (run_dir / "pretrain.ckpt").string() + cfg, "BICROSS_SEED=5");
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_TRUE(contains(r.out, "seed")) << r.out;

  r = run("eval --checkpoint " + (run_dir / "domain.ckpt").string() + " --render " + (dir / "maps").string() +
          " --limit 1");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto json_start = r.out.find('{', r.out.find("seed:"));
  const auto j = nlohmann::json::parse(r.out.substr(json_start, r.out.rfind('}') - json_start + 1));
  EXPECT_EQ(j.at("model"), "student");
  EXPECT_EQ(j.at("split"), "target_test");
  EXPECT_GT(j.at("metrics").at("n_valid").get<int>(), 0);
  EXPECT_EQ(file_count(dir / "maps"), 3u);

  r = run("report --run " + run_dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(run_dir / "report.txt"));
  EXPECT_TRUE(fs::exists(run_dir / "summary.json"));
}

TEST(Cli, DispatchInProcess) {
  std::ostringstream out, err;
  const char* argv[] = {"bicross", "gradcheck", "--dry-run"};
  EXPECT_EQ(cli::dispatch(3, argv, out, err), cli::kExitOk);
  EXPECT_TRUE(contains(out.str(), "plan:"));
  const char* bad[] = {"bicross", "report"};
  EXPECT_EQ(cli::dispatch(2, bad, out, err), cli::kExitUsage);
}
