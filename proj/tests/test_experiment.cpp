#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tcbm/error.hpp"
#include "tcbm/experiment.hpp"

using namespace tcbm;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = TCBM_SOURCE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tcbm_test_experiment" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

struct CliResult {
  int code = -1;
  std::string log;
};

CliResult run_cli_process(const std::string& args, const fs::path& log_file) {
  const std::string cmd = quote(TCBM_CLI_PATH) + " " + args + " 2> " + quote(log_file.string());
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.log = slurp(log_file);
  return r;
}

CliResult run_config(const std::string& sub, const std::string& config, const fs::path& out,
                     const std::string& extra = "") {
  return run_cli_process(sub + " --config " + quote((kSource / "configs" / config).string()) +
                             " --out " + quote(out.string()) + " --serial " + extra,
                         out.parent_path() / (out.filename().string() + ".log"));
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path file = dir / "config.toml";
  std::ofstream(file) << text;
  return file;
}

ErrorCode parse_code(const std::string& text, ExperimentKind kind) {
  try {
    parse_experiment_config(text, kind, {});
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::NumericalFailure;
}

const char* kVerifyBase = R"(seed = 5
paths = 4
dt = 0.125
identity = "forward"
[timechange]
kind = "drift_plus_jumps"
jumps = 1
[integrand]
family = "constant"
)";

}  // namespace

TEST(Config, ParsesAndAppliesOverrides) {
  Overrides ov;
  ov.paths = 7;
  ov.dt = 0.25;
  const auto c = parse_experiment_config(kVerifyBase, ExperimentKind::verify_cov, ov);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.paths, 7u);
  EXPECT_EQ(c.dt, 0.25);
  EXPECT_EQ(c.identity, Identity::forward);
  EXPECT_EQ(c.config_hash, fnv1a64(kVerifyBase));
}

TEST(Config, Rejections) {
  EXPECT_EQ(parse_code("paths = 3\n", ExperimentKind::simulate), ErrorCode::ConfigError);
  EXPECT_EQ(parse_code(std::string(kVerifyBase) + "colour = 1\n", ExperimentKind::verify_cov),
            ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("experiment = \"simulate\"\nseed = 1\n", ExperimentKind::optimize),
            ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("seed = 1\npaths = 1\n", ExperimentKind::simulate),
            ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("seed = 1\n[timechange]\nmin_separation = -1\n", ExperimentKind::simulate),
            ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("seed = 1\nlevels = 3\n", ExperimentKind::convergence),
            ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("seed = 1 = 2\n", ExperimentKind::simulate), ErrorCode::ConfigError);
}

TEST(Config, KindNames) {
  EXPECT_EQ(parse_experiment_kind("verify-cov"), ExperimentKind::verify_cov);
  EXPECT_EQ(parse_experiment_kind("martingale-test"), ExperimentKind::martingale_test);
  EXPECT_EQ(to_string(ExperimentKind::optimize), "optimize");
}

TEST(Fnv, KnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Cli, VerifyConstantIsExact) {
  const fs::path out = scratch("verify") / "run";
  const auto r = run_config("verify-cov", "verify_constant.toml", out, "--paths 50");
  ASSERT_EQ(r.code, 0) << r.log;
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_TRUE(summary["pass"].get<bool>());
  const auto csv = slurp(out / "results.csv");
  EXPECT_EQ(csv.rfind("experiment_id,formula,dt,n_paths,rms_diff,max_diff,seed", 0), 0u);
  EXPECT_TRUE(summary["results"]["exact"].get<bool>());
  EXPECT_LE(summary["results"]["rms"].get<double>(), 1e-12);
}

TEST(Cli, NegativeWealthIsAConfigError) {
  const fs::path out = scratch("negative") / "run";
  const auto r = run_config("optimize", "invalid_negative_x.toml", out);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.log.find("market.x"), std::string::npos) << r.log;
  EXPECT_FALSE(fs::exists(out / "results.csv"));
}

TEST(Cli, MissingSeedAndUnknownKey) {
  const fs::path dir = scratch("bad");
  const fs::path no_seed = write_config(dir, "paths = 10\n");
  auto r = run_cli_process("simulate --config " + quote(no_seed.string()), dir / "a.log");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.log.find("seed"), std::string::npos) << r.log;

  const fs::path unknown = write_config(dir, "seed = 1\npaths = 10\nwobble = 2\n");
  r = run_cli_process("simulate --config " + quote(unknown.string()), dir / "b.log");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.log.find("wobble"), std::string::npos) << r.log;

  r = run_cli_process("simulate --config " + quote((dir / "absent.toml").string()),
                      dir / "c.log");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, OptimizeSummaryCarriesClosedForm) {
  const fs::path out = scratch("optimize") / "run";
  const auto r = run_config("optimize", "optimize_power_p2.toml", out, "--paths 2000");
  ASSERT_EQ(r.code, 0) << r.log;
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  const auto& results = summary["results"];
  EXPECT_NEAR(results["closed_form"].get<double>(), -std::exp(-0.25), 1e-12);
  EXPECT_TRUE(results["power"].get<bool>());
  EXPECT_EQ(results["pullback_max_deviation"].get<double>(), 0.0);
  EXPECT_EQ(summary["n_paths"].get<std::size_t>(), 2000u);
}

TEST(Cli, ManifestCommandReproducesResults) {
  const fs::path dir = scratch("rerun");
  const fs::path first = dir / "first";
  const auto r = run_config("simulate", "simulate_poisson.toml", first, "--paths 300");
  ASSERT_EQ(r.code, 0) << r.log;
  const auto manifest = nlohmann::json::parse(slurp(first / "manifest.json"));
  EXPECT_EQ(manifest["config_hash"].get<std::string>().rfind("fnv1a64:", 0), 0u);

  std::string args;
  const auto cmd = manifest["command"].get<std::vector<std::string>>();
  for (std::size_t i = 0; i < cmd.size(); ++i) {
    const bool is_out = i > 0 && cmd[i - 1] == "--out";
    args += quote(is_out ? (dir / "second").string() : cmd[i]) + " ";
  }
  const auto again = run_cli_process(args, dir / "second.log");
  ASSERT_EQ(again.code, 0) << again.log;
  EXPECT_EQ(slurp(first / "results.csv"), slurp(dir / "second" / "results.csv"));
  EXPECT_EQ(slurp(first / "summary.json"), slurp(dir / "second" / "summary.json"));
}
