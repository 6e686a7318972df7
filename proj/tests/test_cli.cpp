#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mvp/config.hpp"
#include "mvp/io_util.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream oss;
  oss << in.rdbuf();
  return oss.str();
}

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string base =
      (fs::temp_directory_path() / ("mvp_cli_" + std::to_string(counter++))).string();
  const std::string out_path = base + ".out";
  const std::string err_path = base + ".err";
  const std::string cmd =
      std::string(MVP_CLI_PATH) + " " + args + " > " + out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  fs::remove(out_path);
  fs::remove(err_path);
  return r;
}

// Byte-for-byte comparison of two directories (regular files, by name).
bool dirs_identical(const std::string& a, const std::string& b) {
  std::map<std::string, std::string> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa[fs::relative(e.path(), a).string()] = slurp(e.path().string());
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb[fs::relative(e.path(), b).string()] = slurp(e.path().string());
  return fa == fb;
}

std::string tmp_dir(const std::string& name) {
  const std::string d = (fs::temp_directory_path() / name).string();
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("synth with the same seed twice writes byte-identical corpora") {
  const std::string d1 = tmp_dir("mvp_cli_synth1");
  const std::string d2 = tmp_dir("mvp_cli_synth2");
  CHECK(run_cli("synth --subjects 5 --trials 1 --seed 7 --out " + d1).exit_code == 0);
  CHECK(run_cli("synth --subjects 5 --trials 1 --seed 7 --out " + d2).exit_code == 0);
  CHECK(dirs_identical(d1, d2));

  // A different seed must change the corpus.
  const std::string d3 = tmp_dir("mvp_cli_synth3");
  CHECK(run_cli("synth --subjects 5 --trials 1 --seed 8 --out " + d3).exit_code == 0);
  CHECK(!dirs_identical(d1, d3));
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
}

TEST_CASE("missing required option exits 2 naming the option") {
  const CliResult r = run_cli("train --out /tmp/nowhere");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("--corpus") != std::string::npos);
  CHECK(r.err.rfind("error: config:", 0) == 0);
}

TEST_CASE("nonexistent manifest exits 3 with an io error line") {
  const CliResult r = run_cli("train --corpus /tmp/does_not_exist.jsonl --out /tmp/nowhere");
  CHECK(r.exit_code == 3);
  CHECK(r.err.rfind("error: io:", 0) == 0);
}

TEST_CASE("unknown config key exits 2") {
  const std::string d = tmp_dir("mvp_cli_synth_cfg");
  REQUIRE(run_cli("synth --subjects 5 --trials 1 --seed 1 --out " + d).exit_code == 0);
  const CliResult r = run_cli("train --corpus " + d + "/manifest.jsonl --out " + d +
                              "/run --set bogus.key=1");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("bogus.key") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("gradcheck prints the max relative error and exits 0") {
  const CliResult r = run_cli("gradcheck");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);
}

TEST_CASE("train --help matches the golden file and lists every config key") {
  const CliResult r = run_cli("train --help");
  CHECK(r.exit_code == 0);
  const std::string golden = slurp(std::string(MVP_TEST_DATA_DIR) + "/help_train_golden.txt");
  CHECK(r.out == golden);
  for (const auto& spec : mvp::config_keys())
    CHECK(r.out.find(spec.key) != std::string::npos);
}

TEST_CASE("preprocess converts raw signals and is idempotent") {
  const std::string in_dir = tmp_dir("mvp_cli_pre_in");
  fs::create_directories(in_dir);
  // 40 s of 2 Hz sine at 256 Hz, ECG channel.
  std::string csv = "t,ECG\n";
  char buf[64];
  for (int i = 0; i < 10240; ++i) {
    std::snprintf(buf, sizeof buf, "%.8f,%.8f\n", i / 256.0,
                  std::sin(2.0 * M_PI * 2.0 * i / 256.0));
    csv += buf;
  }
  mvp::write_file_atomic(in_dir + "/ecg_a.csv", csv);

  const std::string out1 = tmp_dir("mvp_cli_pre_out1");
  const std::string out2 = tmp_dir("mvp_cli_pre_out2");
  const CliResult r1 = run_cli("preprocess --in " + in_dir + " --out " + out1 +
                               " --dataset amigos");
  CHECK(r1.exit_code == 0);
  CHECK(fs::exists(out1 + "/ecg_a.csv"));
  const CliResult r2 = run_cli("preprocess --in " + in_dir + " --out " + out2 +
                               " --dataset amigos");
  CHECK(r2.exit_code == 0);
  CHECK(dirs_identical(out1, out2));

  // amigos trims 1 s: 10240 samples at 256 Hz -> 5120 at 128 Hz -> minus 128.
  const std::string produced = slurp(out1 + "/ecg_a.csv");
  std::size_t lines = 0;
  for (char c : produced)
    if (c == '\n') ++lines;
  CHECK(lines == 1 + 5120 - 128);

  const CliResult bad = run_cli("preprocess --in /tmp/missing_dir_x --out " + out1 +
                                " --dataset amigos");
  CHECK(bad.exit_code == 3);
  fs::remove_all(in_dir);
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("train then eval round-trips through checkpoints and reports") {
  const std::string corpus = tmp_dir("mvp_cli_corpus");
  REQUIRE(run_cli("synth --subjects 6 --trials 2 --seed 5 --out " + corpus).exit_code == 0);
  const std::string run1 = tmp_dir("mvp_cli_run1");
  const std::string run2 = tmp_dir("mvp_cli_run2");
  const std::string overrides =
      " --set model.dim=8 --set model.heads=1 --set model.layers=1 --set model.ffn_dim=16"
      " --set model.tokens=4 --set video.conv=8x3 --set physio.conv=8x5 --set epochs=1"
      " --set model.dropout=0.1";

  const CliResult t1 =
      run_cli("train --corpus " + corpus + "/manifest.jsonl --out " + run1 + overrides);
  CHECK(t1.exit_code == 0);
  CHECK(fs::exists(run1 + "/summary.json"));
  CHECK(fs::exists(run1 + "/summary.txt"));
  CHECK(fs::exists(run1 + "/fold0.ckpt"));
  CHECK(t1.out.find("valence weighted F1") != std::string::npos);

  // Identical seeds give bit-identical checkpoints and reports.
  const CliResult t2 =
      run_cli("train --corpus " + corpus + "/manifest.jsonl --out " + run2 + overrides);
  CHECK(t2.exit_code == 0);
  CHECK(dirs_identical(run1, run2));

  const CliResult ev =
      run_cli("eval --checkpoint " + run1 + "/fold0.ckpt --corpus " + corpus +
              "/manifest.jsonl");
  CHECK(ev.exit_code == 0);
  CHECK(ev.out.find("valence weighted F1") != std::string::npos);
  CHECK(ev.out.find("arousal weighted F1") != std::string::npos);

  // Ablation mode flows through the same path.
  const std::string run3 = tmp_dir("mvp_cli_run3");
  const CliResult ab = run_cli("ablate --mode video_only --corpus " + corpus +
                               "/manifest.jsonl --out " + run3 + overrides);
  CHECK(ab.exit_code == 0);
  CHECK(ab.out.find("mode: video_only") != std::string::npos);
  const CliResult bad_mode = run_cli("ablate --mode nonsense --corpus " + corpus +
                                     "/manifest.jsonl --out " + run3 + overrides);
  CHECK(bad_mode.exit_code == 2);

  fs::remove_all(corpus);
  fs::remove_all(run1);
  fs::remove_all(run2);
  fs::remove_all(run3);
}

TEST_CASE("workdir resolves relative paths") {
  const std::string wd = tmp_dir("mvp_cli_wd");
  fs::create_directories(wd);
  const CliResult r =
      run_cli("--workdir " + wd + " synth --subjects 5 --trials 1 --seed 3 --out corpus_rel");
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(wd + "/corpus_rel/manifest.jsonl"));
  fs::remove_all(wd);
}
