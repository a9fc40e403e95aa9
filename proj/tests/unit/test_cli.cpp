#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "nwflow/cli.hpp"
#include "nwflow/io.hpp"

using namespace nwflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_quiet(const CliConfig& c) {
  std::ostringstream out, err;
  return run(c, out, err);
}

CliConfig tiny_train(const fs::path& dir) {
  CliConfig c;
  c.command = "train";
  c.out_dir = dir.string();
  c.overrides = {"epochs=2",      "n_train=32",         "n_holdout=16",  "batch_size=16",
                 "prior_batch=8", "hidden=[4]",         "mu_samples=8",  "integrator.steps=4",
                 "lambda=0.5",    "eval.samples=32",    "eval.w2_points=8"};
  return c;
}

// metrics.csv without its wall-clock column.
std::string strip_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("check exits 0") {
  CliConfig c;
  c.command = "check";
  CHECK(run_quiet(c) == kExitOk);
}

TEST_CASE("exit codes") {
  CliConfig c;
  c.command = "bogus";
  CHECK(run_quiet(c) == kExitUsage);

  c.command = "train";
  c.config_path = "/nonexistent/config.toml";
  CHECK(run_quiet(c) == kExitConfig);

  c.config_path.clear();
  c.overrides = {"no_such_key=1"};
  CHECK(run_quiet(c) == kExitConfig);

  CliConfig e;
  e.command = "eval";
  e.ckpt = "/nonexistent/model.ckpt";
  e.data = "/nonexistent/data.csv";
  e.out = "/tmp/x.json";
  CHECK(run_quiet(e) == kExitIo);
}

TEST_CASE("sample-data is byte-identical across runs") {
  TempDir dir("nwflow_cli_sd");
  CliConfig c;
  c.command = "sample-data";
  c.name = "pinwheel";
  c.n = 50;
  c.seed = 7;
  c.out = (dir.path / "a.csv").string();
  REQUIRE(run_quiet(c) == kExitOk);
  c.out = (dir.path / "b.csv").string();
  REQUIRE(run_quiet(c) == kExitOk);
  CHECK(read_file(dir.path / "a.csv") == read_file(dir.path / "b.csv"));
  CHECK(read_file(dir.path / "a.csv").rfind("z1,z2\n", 0) == 0);
}

TEST_CASE("train, sample, eval and density-grid end to end") {
  TempDir dir("nwflow_cli_train");
  const fs::path run_a = dir.path / "a", run_b = dir.path / "b";
  REQUIRE(run_quiet(tiny_train(run_a)) == kExitOk);
  REQUIRE(run_quiet(tiny_train(run_b)) == kExitOk);
  for (const char* f : {"model.ckpt", "initial.ckpt", "config.resolved.toml", "train_data.csv", "holdout.csv",
                        "report.json"}) {
    CAPTURE(f);
    CHECK(read_file(run_a / f) == read_file(run_b / f));
  }
  CHECK(strip_seconds(read_file(run_a / "metrics.csv")) == strip_seconds(read_file(run_b / "metrics.csv")));
  CHECK(read_file(run_a / "metrics.csv").rfind("epoch,nll,reg,total,t1,seconds\n", 0) == 0);

  CliConfig s;
  s.command = "sample";
  s.ckpt = (run_a / "model.ckpt").string();
  s.n = 20;
  s.seed = 1;
  s.overrides = {"integrator.steps=4"};
  s.out = (dir.path / "s.csv").string();
  s.trajectory = (dir.path / "traj.csv").string();
  REQUIRE(run_quiet(s) == kExitOk);
  CHECK(parse_csv(read_file(dir.path / "s.csv")).values.rows() == 20);
  const CsvTable traj = parse_csv(read_file(dir.path / "traj.csv"));
  CHECK(traj.header == std::vector<std::string>{"t", "particle_id", "z1", "z2", "logp"});
  CHECK(traj.values.rows() == 20 * 5);

  CliConfig g;
  g.command = "density-grid";
  g.ckpt = s.ckpt;
  g.resolution = 6;
  g.t = 0.5;
  g.overrides = {"integrator.steps=4"};
  g.out = (dir.path / "grid.csv").string();
  REQUIRE(run_quiet(g) == kExitOk);
  const CsvTable grid = parse_csv(read_file(dir.path / "grid.csv"));
  CHECK(grid.values.rows() == 36);

  CliConfig e;
  e.command = "eval";
  e.ckpt = s.ckpt;
  e.data = (run_a / "holdout.csv").string();
  e.overrides = {"integrator.steps=4", "eval.samples=16", "eval.w2_points=8"};
  e.out = (dir.path / "r1.json").string();
  REQUIRE(run_quiet(e) == kExitOk);
  e.out = (dir.path / "r2.json").string();
  REQUIRE(run_quiet(e) == kExitOk);
  CHECK(read_file(dir.path / "r1.json") == read_file(dir.path / "r2.json"));
}

TEST_CASE("density grid at t = 0 is the standard normal") {
  const Eigen::MatrixXd g = density_grid(ZeroField(2), 1.0, {-1, 1, -1, 1}, 2, 0.0, IntegratorConfig{});
  REQUIRE(g.rows() == 4);
  CHECK(g(0, 0) == -0.5);
  CHECK(g(1, 0) == 0.5);
  CHECK(g(0, 1) == -0.5);
  CHECK(g(0, 2) == doctest::Approx(-std::log(2 * M_PI) - 0.25));
}

TEST_CASE("every schema key has a default") {
  for (const auto* schema : {&train_schema(), &causal_schema(), &eval_schema()}) {
    for (const auto& k : *schema) CHECK_FALSE(k.default_text.empty());
  }
}

}  // TEST_SUITE
