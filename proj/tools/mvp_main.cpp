// mvp: multimodal emotion-recognition pipeline CLI.
//
// Subcommands: synth, preprocess, train, eval, ablate, gradcheck.
// Exit codes: 0 success, 2 bad config or input, 3 I/O failure, 4 numeric
// abort. Errors print one machine-parsable line: "error: <category>: <msg>".

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mvp/config.hpp"
#include "mvp/data_io.hpp"
#include "mvp/gradcheck.hpp"
#include "mvp/synthetic.hpp"
#include "mvp/train.hpp"

namespace fs = std::filesystem;

namespace {

std::string config_keys_footer() {
  std::string s = "Config keys (file `key = value` lines or --set key=value):\n";
  for (const auto& spec : mvp::config_keys())
    s += mvp::str("  ", spec.key, " (default ", spec.def, "): ", spec.help, "\n");
  return s;
}

struct TrainArgs {
  std::string corpus;
  std::string config_path;
  std::string out_dir;
  std::string mode = "fused";
  std::vector<std::string> sets;
  bool verbose = false;
};

mvp::RunConfig make_run_config(const TrainArgs& args) {
  auto kv = args.config_path.empty() ? mvp::default_config_kv()
                                     : mvp::parse_config_file(args.config_path);
  mvp::apply_overrides(kv, args.sets);
  return mvp::run_config_from_kv(kv);
}

int run_train(const TrainArgs& args) {
  mvp::RunConfig cfg = make_run_config(args);
  const mvp::FusionMode mode = mvp::fusion_mode_from_name(args.mode);
  const std::vector<mvp::Trial> corpus = mvp::load_corpus(args.corpus);
  cfg.resolve_maxes(mvp::scan_maxes(corpus));
  cfg.validate();
  const mvp::CvSummary summary =
      mvp::cross_validate(corpus, cfg, mode, args.out_dir, args.verbose);
  mvp::write_file_atomic((fs::path(args.out_dir) / "summary.json").string(),
                         mvp::emit_summary_json(summary));
  mvp::write_file_atomic((fs::path(args.out_dir) / "summary.txt").string(),
                         mvp::emit_summary_text(summary));
  std::fputs(mvp::emit_summary_text(summary).c_str(), stdout);
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& corpus_path) {
  mvp::LoadedModel lm = mvp::load_model(checkpoint);
  const std::vector<mvp::Trial> corpus = mvp::load_corpus(corpus_path);
  std::vector<const mvp::Trial*> ptrs;
  for (const auto& t : corpus) ptrs.push_back(&t);
  const mvp::EvalResult r =
      mvp::evaluate_model(*lm.model, ptrs, lm.video_stats, lm.physio_stats, lm.cfg);
  std::printf("mode: %s\n", mvp::fusion_mode_name(lm.mode));
  std::printf("trials: %zu\n", r.count);
  std::printf("valence weighted F1: %s (support %zu/%zu)\n",
              mvp::fmt_double(r.f1_valence).c_str(), r.support_valence[0],
              r.support_valence[1]);
  std::printf("arousal weighted F1: %s (support %zu/%zu)\n",
              mvp::fmt_double(r.f1_arousal).c_str(), r.support_arousal[0],
              r.support_arousal[1]);
  return 0;
}

int run_synth(std::size_t subjects, std::size_t trials, uint64_t seed,
              const std::string& out_dir) {
  const auto corpus = mvp::generate_synthetic(subjects, trials, seed);
  const std::string manifest = mvp::write_synthetic_corpus(out_dir, corpus);
  std::printf("wrote %zu trials (%zu subjects) to %s\n", corpus.size(), subjects,
              manifest.c_str());
  return 0;
}

int run_preprocess(const std::string& in_dir, const std::string& out_dir,
                   const std::string& dataset, bool verbose) {
  const mvp::DatasetTag tag = mvp::dataset_from_name(dataset);
  if (!fs::is_directory(in_dir)) throw mvp::IoError(mvp::str(in_dir, " is not a directory"));
  std::size_t count = 0;
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".csv" || ext == ".bin") inputs.push_back(entry.path());
  }
  std::sort(inputs.begin(), inputs.end());
  for (const auto& path : inputs) {
    const mvp::RawSignal sig = mvp::read_raw_signal(path.string());
    const mvp::PipelineResult result = mvp::preprocess_channel(sig, tag);
    const std::string out_path =
        (fs::path(out_dir) / (path.stem().string() + ".csv")).string();
    mvp::write_raw_signal_csv(out_path, result.signal);
    if (verbose) {
      std::fprintf(stderr, "%s:", path.filename().string().c_str());
      for (const auto& stage : result.stages) std::fprintf(stderr, " %s", stage.c_str());
      std::fprintf(stderr, "\n");
    }
    ++count;
  }
  std::printf("preprocessed %zu signals into %s\n", count, out_dir.c_str());
  return 0;
}

int run_gradcheck(uint64_t seed) {
  const mvp::GradcheckReport r = mvp::run_tiny_gradcheck(seed);
  std::printf("gradcheck: %zu coordinates, max relative error %.3e (worst: %s)\n",
              r.coords_checked, r.max_rel_err, r.worst_param.c_str());
  if (!r.pass()) throw mvp::NumericError("gradient check exceeded tolerance 1e-3");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvp: cross-attention fusion of video features and physiological signals"};
  app.name("mvp");
  app.require_subcommand(1);
  std::string workdir;
  app.add_option("--workdir", workdir, "Directory all relative paths resolve against");

  TrainArgs train_args;
  std::string eval_checkpoint, eval_corpus;
  std::size_t synth_subjects = 20, synth_trials = 16;
  uint64_t synth_seed = 7, gradcheck_seed = 42;
  std::string synth_out;
  std::string pre_in, pre_out, pre_dataset;
  bool pre_verbose = false;

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  synth->add_option("--subjects", synth_subjects, "Number of subjects (>= 5)")
      ->capture_default_str();
  synth->add_option("--trials", synth_trials, "Trials per subject")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output corpus directory")->required();

  CLI::App* pre = app.add_subcommand("preprocess", "Filter and resample raw signal files");
  pre->add_option("--in", pre_in, "Directory of raw signal files (.csv or .bin)")->required();
  pre->add_option("--out", pre_out, "Output directory")->required();
  pre->add_option("--dataset", pre_dataset, "Dataset tag: amigos | deap | synthetic")
      ->required();
  pre->add_flag("--verbose", pre_verbose, "Print the applied pipeline stages");

  CLI::App* train = app.add_subcommand("train", "Train with subject-independent CV");
  train->add_option("--corpus", train_args.corpus, "Corpus manifest (JSON lines)")->required();
  train->add_option("--config", train_args.config_path, "Run config file");
  train->add_option("--set", train_args.sets, "Override a config key (key=value)");
  train->add_option("--out", train_args.out_dir, "Output directory for reports/checkpoints")
      ->required();
  train->add_flag("--verbose", train_args.verbose, "Per-epoch loss logging");
  train->footer(config_keys_footer());

  TrainArgs ablate_args;
  CLI::App* ablate = app.add_subcommand("ablate", "Train one ablation mode");
  ablate->add_option("--mode", ablate_args.mode, "video_only | physio_only | fused")
      ->required();
  ablate->add_option("--corpus", ablate_args.corpus, "Corpus manifest (JSON lines)")
      ->required();
  ablate->add_option("--config", ablate_args.config_path, "Run config file");
  ablate->add_option("--set", ablate_args.sets, "Override a config key (key=value)");
  ablate->add_option("--out", ablate_args.out_dir, "Output directory")->required();
  ablate->add_flag("--verbose", ablate_args.verbose, "Per-epoch loss logging");
  ablate->footer(config_keys_footer());

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
  eval->add_option("--corpus", eval_corpus, "Corpus manifest (JSON lines)")->required();

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference check of the tiny network");
  gradcheck->add_option("--seed", gradcheck_seed, "Model/input seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  }

  try {
    if (!workdir.empty()) {
      std::error_code ec;
      fs::current_path(workdir, ec);
      if (ec) throw mvp::IoError(mvp::str("cannot enter workdir ", workdir, ": ", ec.message()));
    }
    if (synth->parsed()) return run_synth(synth_subjects, synth_trials, synth_seed, synth_out);
    if (pre->parsed()) return run_preprocess(pre_in, pre_out, pre_dataset, pre_verbose);
    if (train->parsed()) return run_train(train_args);
    if (ablate->parsed()) return run_train(ablate_args);
    if (eval->parsed()) return run_eval(eval_checkpoint, eval_corpus);
    if (gradcheck->parsed()) return run_gradcheck(gradcheck_seed);
    std::fprintf(stderr, "error: config: no subcommand\n");
    return 2;
  } catch (const mvp::ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const mvp::IoError& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return 3;
  } catch (const mvp::NumericError& e) {
    std::fprintf(stderr, "error: numeric: %s\n", e.what());
    return 4;
  } catch (const mvp::Error& e) {  // validation, schema, parse, dimension
    std::fprintf(stderr, "error: input: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
}
