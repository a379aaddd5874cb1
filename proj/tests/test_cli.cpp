// Command-line interface: run-config parsing/serialization round trips,
// flag-to-config mapping, and end-to-end behavior of the compiled binary
// (exit codes, artifacts, determinism, output-directory discipline).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <frontsr/runconfig.hpp>
#include <frontsr/synthdata.hpp>
#include <frontsr/util.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace frontsr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "frontsr_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Runs the binary through the shell, capturing combined output; returns the
// exit code (or -1 if the process did not exit normally).
struct CmdResult {
  int code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path log =
      fs::temp_directory_path() / "frontsr_cli_tests" / ("log_" + std::to_string(counter++));
  fs::create_directories(log.parent_path());
  const std::string cmd =
      env + (env.empty() ? "" : " ") + FRONTSR_BIN + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  if (rc != -1 && WIFEXITED(rc)) r.code = WEXITSTATUS(rc);
  r.output = read_file(log);
  return r;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

// Small deterministic dataset shared by the command tests.
const std::string kSynthArgs =
    "--identities 6 --test-identities 2 --yaws -30,-15,0,15,30 --illums 1.0 --channels 1 "
    "--seed 5";

const std::string kTinyTrainArgs =
    "--mode si --epochs 1 --batch-size 8 --lr 1e-4 --decay-epochs= --seed 11 "
    "--base-channels 4 --n-rdb 1 --rdb-layers 1 --growth 4 --d-base 4 "
    "--emb-base 4 --emb-d1 16 --emb-epochs 2";

}  // namespace

// ---- run config -----------------------------------------------------------------------

TEST_CASE("run config: canonical text round-trips exactly") {
  cli::RunConfig defaults;
  const std::string text = cli::serialize(defaults);
  CHECK(contains(text, "[dataset]"));
  CHECK(contains(text, "[generator]"));
  CHECK(contains(text, "[train]"));
  CHECK(contains(text, "[weights]"));
  CHECK(contains(text, "[eval]"));
  CHECK(contains(text, "yaws = -60,-45,-30,-15,0,15,30,45,60"));

  cli::RunConfig parsed = cli::parse_runconfig(text);
  CHECK(cli::serialize(parsed) == text);
}

TEST_CASE("run config: sections, comments, overrides, and typo rejection") {
  const std::string text =
      "# toy run\n"
      "[train]\n"
      "epochs = 5   # short smoke\n"
      "lr = 0.002\n"
      "\n"
      "[dataset]\n"
      "identities = 8\n"
      "yaws = -30, 0, 30\n";
  cli::RunConfig cfg = cli::parse_runconfig(text);
  CHECK(cfg.epochs == 5);
  CHECK(cfg.lr == 0.002);
  CHECK(cfg.identities == 8);
  CHECK(cfg.yaws == std::vector<int>{-30, 0, 30});
  // untouched keys keep defaults
  CHECK(cfg.batch_size == 8);

  cli::set_key(cfg, "weights.patch", "0");
  CHECK(cfg.weights.patch == 0.0);
  CHECK_THROWS_WITH_AS(cli::set_key(cfg, "train.epochz", "3"), doctest::Contains("unknown key"),
                       std::invalid_argument);
  CHECK_THROWS(cli::parse_runconfig("[nosuch]\nx = 1\n"));
  CHECK_THROWS_WITH_AS(cli::parse_runconfig("epochs = 5\n"), doctest::Contains("section"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::parse_runconfig("[train]\nepochs 5\n"),
                       doctest::Contains("key = value"), std::invalid_argument);
}

TEST_CASE("run config: conversions into module configs") {
  cli::RunConfig cfg;
  cfg.mode = "mi";
  cfg.fusion = "feature_fuse_orth";
  cfg.n_inputs = 2;
  cfg.identities = 9;
  cfg.test_identities = 3;

  synth::DatasetSpec spec = cli::to_dataset_spec(cfg);
  CHECK(spec.n_identities == 9);
  CHECK(spec.n_test == 3);

  train::TrainConfig tc = cli::to_train_config(cfg);
  CHECK(tc.mode == train::Mode::multi_image);
  CHECK(tc.gen.fusion == model::Fusion::feature_fuse_orth);
  CHECK(tc.gen.n_inputs == 2);
  CHECK(tc.emb.image_size == cfg.hr_size);
  tc.validate();

  cfg.mode = "nope";
  CHECK_THROWS_WITH_AS(cli::to_train_config(cfg), doctest::Contains("mode"),
                       std::invalid_argument);
}

TEST_CASE("run config: ablation switches map one-to-one onto the loss setup") {
  cli::RunConfig cfg;
  cli::apply_ablation(cfg, "no_l1");
  CHECK(cfg.weights.pixel == 0.0);
  cli::apply_ablation(cfg, "no_ssim");
  CHECK(cfg.weights.patch == 0.0);
  cli::apply_ablation(cfg, "no_id");
  CHECK(cfg.weights.id == 0.0);
  cli::apply_ablation(cfg, "no_adv");
  CHECK(cfg.weights.adv == 0.0);
  cli::apply_ablation(cfg, "no_sr_module");
  CHECK_FALSE(cfg.sr_module);
  cli::apply_ablation(cfg, "no_sr_supervision");
  CHECK_FALSE(cfg.sr_supervision);
  CHECK_THROWS_WITH_AS(cli::apply_ablation(cfg, "no_magic"), doctest::Contains("unknown ablation"),
                       std::invalid_argument);
}

// ---- synth command --------------------------------------------------------------------

TEST_CASE("cli synth: builds a dataset, reruns are byte-identical, usage errors exit 1") {
  fs::path a = fresh_dir("synth_a") / "ds";
  CmdResult r = run_cli("synth " + kSynthArgs + " --out " + a.string());
  CHECK(r.code == 0);
  CHECK(contains(r.output, "identities"));
  CHECK(fs::exists(a / "manifest.tsv"));
  CHECK(fs::exists(a / "runconfig.txt"));

  fs::path b = fresh_dir("synth_b") / "ds";
  run_cli("synth " + kSynthArgs + " --out " + b.string());
  CHECK(read_file(a / "manifest.tsv") == read_file(b / "manifest.tsv"));
  CHECK(read_file(a / "runconfig.txt") == read_file(b / "runconfig.txt"));

  CmdResult no_out = run_cli("synth " + kSynthArgs);
  CHECK(no_out.code == 1);
  CHECK(contains(no_out.output, "--out"));

  CmdResult bad_flag = run_cli("synth --no-such-flag 3 --out " + fresh_dir("synth_c").string());
  CHECK(bad_flag.code == 1);
}

TEST_CASE("cli synth: environment variable supplies the default output root") {
  fs::path root = fresh_dir("synth_env");
  CmdResult r = run_cli("synth " + kSynthArgs, "FRONTSR_OUT_ROOT=" + root.string());
  CHECK(r.code == 0);
  CHECK(fs::exists(root / "synth" / "manifest.tsv"));
}

// ---- train / eval / pretrain-embedder lifecycle ----------------------------------------

TEST_CASE("cli lifecycle: train then eval from the serialized artifacts") {
  fs::path ds = fresh_dir("life") / "ds";
  REQUIRE(run_cli("synth " + kSynthArgs + " --out " + ds.string()).code == 0);
  const std::string manifest_before = read_file(ds / "manifest.tsv");
  const std::string image_before = read_file(ds / "images" / "id0000_ym30_i0.pgm");

  fs::path run = fresh_dir("life_run");
  CmdResult tr = run_cli("train --data " + ds.string() + " " + kTinyTrainArgs + " --out " +
                         run.string());
  CHECK(tr.code == 0);
  CHECK(fs::exists(run / "runconfig.txt"));
  CHECK(fs::exists(run / "metrics.jsonl"));
  CHECK(fs::exists(run / "ckpt_init.bin"));
  CHECK(fs::exists(run / "ckpt_0000.bin"));
  // the serialized run config is the merged flag view
  const std::string rc_text = read_file(run / "runconfig.txt");
  CHECK(contains(rc_text, "epochs = 1"));
  CHECK(contains(rc_text, "base_channels = 4"));

  fs::path ev = fresh_dir("life_eval");
  CmdResult er = run_cli("eval --data " + ds.string() + " --checkpoint " +
                         (run / "ckpt_0000.bin").string() + " --mode si --out " + ev.string());
  CHECK(er.code == 0);
  CHECK(fs::exists(ev / "eval_report.json"));
  CHECK(fs::exists(ev / "eval_report.txt"));
  CHECK(fs::exists(ev / "runconfig.txt"));
  CHECK(contains(er.output, "Avg"));

  // dataset inputs were read, never written
  CHECK(read_file(ds / "manifest.tsv") == manifest_before);
  CHECK(read_file(ds / "images" / "id0000_ym30_i0.pgm") == image_before);

  // runtime failure (missing checkpoint) exits 2
  CmdResult missing = run_cli("eval --data " + ds.string() + " --checkpoint " +
                              (run / "nope.bin").string() + " --mode si --out " +
                              fresh_dir("life_eval2").string());
  CHECK(missing.code == 2);
}

TEST_CASE("cli train: ablation flags are recorded in the run config") {
  fs::path ds = fresh_dir("ablate") / "ds";
  REQUIRE(run_cli("synth " + kSynthArgs + " --out " + ds.string()).code == 0);
  fs::path run = fresh_dir("ablate_run");
  CmdResult r = run_cli("train --data " + ds.string() + " " + kTinyTrainArgs +
                        " --ablate no_ssim --ablate no_id --out " + run.string());
  CHECK(r.code == 0);
  const std::string rc_text = read_file(run / "runconfig.txt");
  CHECK(contains(rc_text, "patch = 0\n"));
  CHECK(contains(rc_text, "id = 0\n"));

  // a rerun driven only by the serialized config reproduces the run exactly
  fs::path rerun = fresh_dir("ablate_rerun");
  CmdResult r2 = run_cli("train --data " + ds.string() + " --config " +
                         (run / "runconfig.txt").string() + " --out " + rerun.string());
  CHECK(r2.code == 0);
  CHECK(read_file(run / "metrics.jsonl") == read_file(rerun / "metrics.jsonl"));
  CHECK(read_file(run / "ckpt_0000.bin") == read_file(rerun / "ckpt_0000.bin"));
}

TEST_CASE("cli train: conflicting mode/fusion flags exit with the usage code") {
  fs::path ds = fresh_dir("conflict") / "ds";
  REQUIRE(run_cli("synth " + kSynthArgs + " --out " + ds.string()).code == 0);
  CmdResult r = run_cli("train --data " + ds.string() + " " + kTinyTrainArgs +
                        " --fusion feature_fuse --out " + fresh_dir("conflict_run").string());
  CHECK(r.code == 1);
  CHECK(contains(r.output, "single"));

  CmdResult bad_ablate = run_cli("train --data " + ds.string() + " " + kTinyTrainArgs +
                                 " --ablate no_magic --out " +
                                 fresh_dir("conflict_run2").string());
  CHECK(bad_ablate.code == 1);
  CHECK(contains(bad_ablate.output, "unknown ablation"));
}

TEST_CASE("cli pretrain-embedder: frozen embedder artifact, deterministic") {
  fs::path ds = fresh_dir("pretrain") / "ds";
  REQUIRE(run_cli("synth " + kSynthArgs + " --out " + ds.string()).code == 0);
  fs::path a = fresh_dir("pretrain_a");
  CmdResult r = run_cli("pretrain-embedder --data " + ds.string() +
                        " --emb-epochs 2 --emb-base 4 --emb-d1 16 --seed 11 --out " + a.string());
  CHECK(r.code == 0);
  CHECK(fs::exists(a / "embedder.bin"));
  CHECK(contains(r.output, "accuracy"));

  fs::path b = fresh_dir("pretrain_b");
  run_cli("pretrain-embedder --data " + ds.string() +
          " --emb-epochs 2 --emb-base 4 --emb-d1 16 --seed 11 --out " + b.string());
  CHECK(read_file(a / "embedder.bin") == read_file(b / "embedder.bin"));

  // a train run can adopt the pre-trained embedder instead of fitting its own
  fs::path run = fresh_dir("pretrain_run");
  CmdResult tr = run_cli("train --data " + ds.string() + " " + kTinyTrainArgs + " --embedder " +
                         (a / "embedder.bin").string() + " --out " + run.string());
  CHECK(tr.code == 0);
}

TEST_CASE("cli eval: probe-set protocol is a multi-image study") {
  fs::path ds = fresh_dir("proto") / "ds";
  REQUIRE(run_cli("synth " + kSynthArgs + " --out " + ds.string()).code == 0);
  fs::path run = fresh_dir("proto_run");
  REQUIRE(run_cli("train --data " + ds.string() + " " + kTinyTrainArgs + " --out " +
                  run.string())
              .code == 0);
  CmdResult r = run_cli("eval --data " + ds.string() + " --checkpoint " +
                        (run / "ckpt_0000.bin").string() +
                        " --mode si --protocol probesets --out " +
                        fresh_dir("proto_eval").string());
  CHECK(r.code == 1);
  CHECK(contains(r.output, "probesets"));
}

// ---- selfcheck ------------------------------------------------------------------------

TEST_CASE("cli selfcheck: green suite, corrupted-backward fixture reported by name") {
  CmdResult r = run_cli("selfcheck");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "[ok]"));
  CHECK_FALSE(contains(r.output, "[FAIL]"));
  // the deliberately broken backward rule must be caught and named
  CHECK(contains(r.output, "corrupted-backward"));
  CHECK(contains(r.output, "detected"));
}
