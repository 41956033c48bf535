#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#ifndef SEGRL_CLI_PATH
#error "SEGRL_CLI_PATH must be defined by the build"
#endif

namespace {

namespace fs = std::filesystem;

struct RunOutput {
  int exit_code = -1;
  std::string stdout_text;
};

RunOutput run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const std::string cmd = std::string(SEGRL_CLI_PATH) + " " + args + " > " +
                          out.string() + " 2> " + (scratch / "stderr.txt").string();
  int status = std::system(cmd.c_str());
  RunOutput result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  result.stdout_text.assign(std::istreambuf_iterator<char>(in), {});
  return result;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("segrl_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

fs::path write_config(const TempDir& dir, long steps,
                      const std::string& name = "config.json") {
  nlohmann::json j = {
      {"seed", 3},
      {"steps", steps},
      {"env",
       {{"horizon", 20},
        {"image_size", 32},
        {"patch_size", 8},
        {"distractors_max", 1}}},
      {"arch",
       {{"model_dim", 16},
        {"decoder_layers", 1},
        {"decoder_heads", 2},
        {"ffn_hidden", 32},
        {"proj_hidden_layers", 2},
        {"proj_hidden_size", 16},
        {"segment_dim", 8}}},
      {"sac",
       {{"batch_size", 16},
        {"warmup_steps", 60},
        {"num_envs", 2},
        {"replay_capacity", 2000}}},
      {"eval",
       {{"every", 80},
        {"episodes", 2},
        {"bootstrap_replications", 100},
        {"checkpoint_every", 160}}},
  };
  fs::path path = dir.path / name;
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("cli train: zero-step run exits 0 with an initial checkpoint") {
  TempDir dir("train0");
  fs::path cfg = write_config(dir, 0);
  auto out = run_cli("train --config " + cfg.string() + " --run-dir " +
                         (dir.path / "run").string(),
                     dir.path);
  CHECK(out.exit_code == 0);
  CHECK(fs::exists(dir.path / "run" / "checkpoints" / "final.ckpt"));
  std::string metrics = slurp(dir.path / "run" / "metrics.jsonl");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 1);
}

TEST_CASE("cli train: invalid config exits 2 with diagnostics") {
  TempDir dir("badcfg");
  fs::path cfg = dir.path / "bad.json";
  std::ofstream(cfg) << R"({"banana": 1})";
  auto out = run_cli("train --config " + cfg.string() + " --run-dir " +
                         (dir.path / "run").string(),
                     dir.path);
  CHECK(out.exit_code == 2);
}

TEST_CASE("cli train twice: identical eval CSVs, then eval/attn/perturb run") {
  TempDir dir("determinism");
  fs::path cfg = write_config(dir, 240);

  auto r1 = run_cli("train --config " + cfg.string() + " --run-dir " +
                        (dir.path / "a").string(),
                    dir.path);
  auto r2 = run_cli("train --config " + cfg.string() + " --run-dir " +
                        (dir.path / "b").string(),
                    dir.path);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  const std::string csv_a = slurp(dir.path / "a" / "eval.csv");
  CHECK(csv_a == slurp(dir.path / "b" / "eval.csv"));
  CHECK(csv_a.find("segment,3,240,") != std::string::npos);

  const std::string ckpt = (dir.path / "a" / "checkpoints" / "final.ckpt").string();

  SUBCASE("eval emits a report with returns in [0,1]") {
    auto out = run_cli("eval --checkpoint " + ckpt +
                           " --episodes 3 --seed 7 --reps 100",
                       dir.path);
    REQUIRE(out.exit_code == 0);
    auto j = nlohmann::json::parse(out.stdout_text);
    REQUIRE(j.at("returns").size() == 3);
    for (double r : j.at("returns")) {
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
    }
    CHECK(j.contains("iqm"));
  }
  SUBCASE("eval accepts env overrides and rejects bad ones") {
    auto ok = run_cli("eval --checkpoint " + ckpt +
                          " --episodes 1 --horizon 10 --distractors-max 3 "
                          "--reps 50",
                      dir.path);
    CHECK(ok.exit_code == 0);
    auto bad = run_cli("eval --checkpoint " + ckpt + " --task juggle",
                       dir.path);
    CHECK(bad.exit_code == 2);
  }
  SUBCASE("attn exports a trace file") {
    fs::path trace = dir.path / "trace.json";
    auto out = run_cli("attn --checkpoint " + ckpt + " --out " +
                           trace.string() + " --seed 5",
                       dir.path);
    REQUIRE(out.exit_code == 0);
    auto j = nlohmann::json::parse(slurp(trace));
    CHECK(j.size() == 20);  // horizon
  }
  SUBCASE("perturb runs a suite file") {
    fs::path suite = dir.path / "suite.json";
    std::ofstream(suite)
        << R"(["identity","segment_dropout:p=0.3,seed=2","spurious_segments:k=4,noise=1.0,seed=3"])";
    auto out = run_cli("perturb --checkpoint " + ckpt + " --suite " +
                           suite.string() + " --episodes 1 --eval-seeds 2",
                       dir.path);
    REQUIRE(out.exit_code == 0);
    auto j = nlohmann::json::parse(out.stdout_text);
    REQUIRE(j.size() == 3);
    CHECK(j[0].at("perturbation") == "identity");
    CHECK(std::abs(j[0].at("delta_iqm").get<double>()) < 1e-12);
  }
  SUBCASE("corrupt checkpoint exits 4") {
    fs::path broken = dir.path / "broken.ckpt";
    fs::copy_file(ckpt, broken);
    fs::resize_file(broken, fs::file_size(broken) - 40);
    auto out = run_cli("eval --checkpoint " + broken.string(), dir.path);
    CHECK(out.exit_code == 4);
  }
  SUBCASE("resume continues the counter") {
    auto out = run_cli("train --config " + cfg.string() + " --run-dir " +
                           (dir.path / "resumed").string() + " --resume " +
                           ckpt + " --steps 80",
                       dir.path);
    REQUIRE(out.exit_code == 0);
    std::string csv = slurp(dir.path / "resumed" / "eval.csv");
    CHECK(csv.find("segment,3,320,") != std::string::npos);
  }
}

TEST_CASE("cli stats: constant scores give a zero-width interval, seeded") {
  TempDir dir("stats");
  fs::path scores = dir.path / "scores.csv";
  std::ofstream(scores) << "task,seed,score\n"
                        << "reach,0,0.5\nreach,1,0.5\nreach,2,0.5\n"
                        << "push,0,0.5\npush,1,0.5\n";
  auto a = run_cli("stats " + scores.string() + " --reps 2000 --seed 1",
                   dir.path);
  REQUIRE(a.exit_code == 0);
  CHECK(a.stdout_text.find("iqm=0.5") != std::string::npos);
  CHECK(a.stdout_text.find("ci_low=0.5") != std::string::npos);
  CHECK(a.stdout_text.find("ci_high=0.5") != std::string::npos);

  auto b = run_cli("stats " + scores.string() + " --reps 2000 --seed 1",
                   dir.path);
  CHECK(a.stdout_text == b.stdout_text);

  auto missing = run_cli("stats " + (dir.path / "nope.csv").string(), dir.path);
  CHECK(missing.exit_code == 2);
}

TEST_CASE("cli compare emits matched learning curves") {
  TempDir dir("compare");
  fs::path cfg = write_config(dir, 80);
  fs::path out = dir.path / "curves.csv";
  auto run = run_cli("compare --config " + cfg.string() +
                         " --seeds 1 --threshold 2.0 --out " + out.string(),
                     dir.path);
  REQUIRE(run.exit_code == 0);
  std::string csv = slurp(out);
  CHECK(csv.rfind("agent,seed,env_step,iqm_return,ci_low,ci_high\n", 0) == 0);
  CHECK(csv.find("segment,") != std::string::npos);
  CHECK(csv.find("global_baseline,") != std::string::npos);
}

TEST_CASE("cli train honors SEGRL_RUN_DIR as the run_dir default") {
  TempDir dir("envvar");
  fs::path cfg = write_config(dir, 0);
  ::setenv("SEGRL_RUN_DIR", (dir.path / "from_env").string().c_str(), 1);
  auto out = run_cli("train --config " + cfg.string(), dir.path);
  ::unsetenv("SEGRL_RUN_DIR");
  CHECK(out.exit_code == 0);
  CHECK(fs::exists(dir.path / "from_env" / "checkpoints" / "final.ckpt"));
}
