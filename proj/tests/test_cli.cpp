// End-to-end tests driving the installed binary through std::system.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return LIQUIDBENCH_CLI_PATH; }

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args, const fs::path& workdir) {
  fs::create_directories(workdir);
  fs::path log = workdir / "cli_output.txt";
  std::string cmd = "cd " + workdir.string() + " && " + std::string(cli_path()) +
                    " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json metrics_without_walltime(const fs::path& p) {
  json j = json::parse(slurp(p));
  j.erase("wall_time_seconds");
  return j;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "lqb_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string kTinyTrain =
    "train --task irregular_sine_class --n-samples 150 --cell cfc --hidden 8 "
    "--epochs 3 --batch 16 --lr 5e-3 --seed 11";

}  // namespace

TEST_CASE("unknown flags exit 2 with usage text") {
  fs::path dir = fresh_dir("usage");
  RunResult r = run_cli("train --task irregular_sine_class --frobnicate 7", dir);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("Usage") != std::string::npos);

  RunResult none = run_cli("", dir);
  CHECK(none.exit_code == 2);
}

TEST_CASE("malformed config file exits 2 naming the line") {
  fs::path dir = fresh_dir("badcfg");
  std::ofstream bad(dir / "bad.cfg");
  bad << "[train]\nepochs = 3\nthis line is wrong\n";
  bad.close();
  RunResult r = run_cli("train --config bad.cfg", dir);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("line 3") != std::string::npos);

  std::ofstream badval(dir / "badval.cfg");
  badval << "[train]\nlr = not_a_number\n";
  badval.close();
  RunResult rv = run_cli("train --config badval.cfg", dir);
  CHECK(rv.exit_code == 2);
  CHECK(rv.output.find("train.lr") != std::string::npos);
}

TEST_CASE("missing checkpoint exits nonzero with a diagnostic") {
  fs::path dir = fresh_dir("missing");
  RunResult r = run_cli("eval --checkpoint nowhere.ckpt", dir);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("nowhere.ckpt") != std::string::npos);
}

TEST_CASE("train then eval then stress: rate-0 accuracy equals eval exactly") {
  fs::path dir = fresh_dir("pipeline");
  RunResult t = run_cli(kTinyTrain + " --out run", dir);
  REQUIRE(t.exit_code == 0);
  REQUIRE(fs::exists(dir / "run/best.ckpt"));
  REQUIRE(fs::exists(dir / "run/log.csv"));
  REQUIRE(fs::exists(dir / "run/metrics.json"));

  RunResult e = run_cli("eval --checkpoint run/best.ckpt --out evald", dir);
  REQUIRE(e.exit_code == 0);
  json eval_metrics = json::parse(slurp(dir / "evald/metrics.json"));

  RunResult s = run_cli(
      "stress --checkpoint run/best.ckpt --drop_rates 0 --trials 3 --seed 4 "
      "--out stressed",
      dir);
  REQUIRE(s.exit_code == 0);
  json stress_payload = json::parse(slurp(dir / "stressed/metrics.json"));

  // bit-identical via the shortest-round-trip JSON rendering of the doubles
  CHECK(stress_payload["stress"]["cells"][0]["metrics"]["accuracy"].dump() ==
        eval_metrics["metrics"]["accuracy"].dump());
  std::string csv = slurp(dir / "stressed/stress.csv");
  CHECK(csv.rfind("rate,trial,accuracy\n", 0) == 0);
}

TEST_CASE("inspect reports the closed-form core counts") {
  fs::path dir = fresh_dir("inspect");
  // stroke features are 5-dim; identity encoder feeds them straight into
  // the core, so lstm(input=5, hidden=4) has 4 (5*4 + 4*4 + 4) = 160
  RunResult t = run_cli(
      "train --task stroke_shapes --n-samples 60 --cell lstm --hidden 4 "
      "--encoder identity --mlp-hidden 0 --epochs 1 --batch 16 --seed 2 "
      "--out run",
      dir);
  REQUIRE(t.exit_code == 0);
  RunResult i = run_cli("inspect --checkpoint run/final.ckpt --json", dir);
  REQUIRE(i.exit_code == 0);
  json info = json::parse(i.output);
  CHECK(info["counts"]["core"] == 160);
  CHECK(info["counts"]["total"] == info["actual_total"]);

  // cfc core: (d + h) h + 3h with d = 5, h = 4
  RunResult t2 = run_cli(
      "train --task stroke_shapes --n-samples 60 --cell cfc --hidden 4 "
      "--encoder identity --mlp-hidden 0 --epochs 1 --batch 16 --seed 2 "
      "--out run2",
      dir);
  REQUIRE(t2.exit_code == 0);
  RunResult i2 = run_cli("inspect --checkpoint run2/final.ckpt --json", dir);
  REQUIRE(i2.exit_code == 0);
  json info2 = json::parse(i2.output);
  CHECK(info2["counts"]["core"] == (5 + 4) * 4 + 3 * 4);
  CHECK(info2["counts"]["total"] == info2["actual_total"]);
}

TEST_CASE("repeated runs produce byte-identical numeric outputs") {
  fs::path a = fresh_dir("deta");
  fs::path b = fresh_dir("detb");
  REQUIRE(run_cli(kTinyTrain + " --out run", a).exit_code == 0);
  REQUIRE(run_cli(kTinyTrain + " --out run", b).exit_code == 0);

  CHECK(slurp(a / "run/log.csv") == slurp(b / "run/log.csv"));
  CHECK(slurp(a / "run/best.ckpt") == slurp(b / "run/best.ckpt"));
  CHECK(slurp(a / "run/final.ckpt") == slurp(b / "run/final.ckpt"));
  CHECK(metrics_without_walltime(a / "run/metrics.json") ==
        metrics_without_walltime(b / "run/metrics.json"));

  std::string stress_args =
      "stress --checkpoint run/best.ckpt --drop_rates 0,0.4 --trials 2 "
      "--mode drop_merge_dt --seed 9 --out s";
  REQUIRE(run_cli(stress_args, a).exit_code == 0);
  REQUIRE(run_cli(stress_args, b).exit_code == 0);
  CHECK(slurp(a / "s/stress.csv") == slurp(b / "s/stress.csv"));
  CHECK(metrics_without_walltime(a / "s/metrics.json") ==
        metrics_without_walltime(b / "s/metrics.json"));
}

TEST_CASE("LIQUIDBENCH_SEED provides the default seed") {
  fs::path dir = fresh_dir("envseed");
  std::string with_env =
      "LIQUIDBENCH_SEED=11 " + std::string(cli_path()) +
      " train --task irregular_sine_class --n-samples 150 --cell cfc "
      "--hidden 8 --epochs 1 --batch 16 --lr 5e-3 --out run_env > /dev/null 2>&1";
  int status = std::system(("cd " + dir.string() + " && " + with_env).c_str());
  REQUIRE(WIFEXITED(status));
  REQUIRE(WEXITSTATUS(status) == 0);

  RunResult explicit_seed = run_cli(
      "train --task irregular_sine_class --n-samples 150 --cell cfc --hidden 8 "
      "--epochs 1 --batch 16 --lr 5e-3 --seed 11 --out run_flag",
      dir);
  REQUIRE(explicit_seed.exit_code == 0);
  CHECK(slurp(dir / "run_env/final.ckpt") == slurp(dir / "run_flag/final.ckpt"));
}

TEST_CASE("train accepts a stroke ndjson file as the task") {
  fs::path dir = fresh_dir("filetask");
  // export a stroke dataset through the CLI-facing file format
  {
    std::ofstream out(dir / "shapes.ndjson");
    // two tiny labeled drawings per class, enough for a 1-epoch smoke run
    for (int label = 0; label < 4; ++label) {
      for (int rep = 0; rep < 8; ++rep) {
        out << "{\"label\": " << label << ", \"drawing\": [[[0, "
            << (1 + label + rep) << ", " << (2 + label) << "], [0, "
            << (2 + rep) << ", " << (1 + label) << "]]]}\n";
      }
    }
  }
  RunResult r = run_cli(
      "train --task shapes.ndjson --cell cfc --hidden 6 --epochs 1 --batch 8 "
      "--seed 3 --out run",
      dir);
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(dir / "run/metrics.json"));
}
