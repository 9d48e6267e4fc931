#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "wentropy/job.hpp"

using namespace wentropy;
using job::json;
namespace fs = std::filesystem;

namespace {

json parse(const std::string& s) { return json::parse(s); }

std::string schema_path_of(const std::string& text) {
  try {
    job::run_job(job::parse_job(parse(text)));
  } catch (const job::SchemaError& e) {
    return e.path();
  }
  return "";
}

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / ("wentropy_cli_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_job(const std::string& name, const std::string& text) {
  const fs::path p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::string& args) {
  static int counter = 0;
  const fs::path o = scratch() / ("out" + std::to_string(counter) + ".txt");
  const fs::path e = scratch() / ("err" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string("cd ") + scratch().string() + " && " + WENTROPY_CLI_PATH + " " + args + " > " +
                          o.string() + " 2> " + e.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

const std::string kNormal = R"({"command": "entropy", "numeric": {"rng_seed": 42},
  "model": {"distribution": {"kind": "normal", "mean": 0, "variance": 1}}})";

}  // namespace

TEST(JobParse, EntropyOfStandardNormal) {
  const auto rep = job::run_job(job::parse_job(parse(kNormal)));
  EXPECT_NEAR(rep.document["results"]["value"].get<double>(), 0.5 * std::log(2 * M_PI * M_E), 1e-9);
  EXPECT_EQ(rep.document["provenance"]["rng_seed"], 42);
  EXPECT_EQ(rep.document["tool"], "wentropy");
}

TEST(JobParse, UnknownFieldNamesPath) {
  EXPECT_EQ(schema_path_of(R"({"command": "entropy", "numeric": {"rng_seed": 1},
    "model": {"distribution": {"kind": "normal", "mean": 0, "variance": 1, "sigma": 2}}})"),
            "model.distribution.sigma");
  EXPECT_EQ(schema_path_of(R"({"command": "entropy", "numeric": {"rng_seed": 1}, "colour": 3})"), "colour");
}

TEST(JobParse, SeedIsRequired) {
  EXPECT_EQ(schema_path_of(R"({"command": "entropy", "model": {}})"), "numeric.rng_seed");
  EXPECT_EQ(schema_path_of(R"({"command": "entropy", "numeric": {}})"), "numeric.rng_seed");
  EXPECT_EQ(schema_path_of(R"({"command": "entropy", "numeric": {"rng_seed": -3}})"), "numeric.rng_seed");
}

TEST(JobParse, NumericFieldsValidated) {
  EXPECT_EQ(schema_path_of(R"({"command": "entropy", "numeric": {"rng_seed": 1, "mc_samples": 0}})"), "numeric.mc_samples");
  EXPECT_EQ(schema_path_of(R"({"command": "entropy", "numeric": {"rng_seed": 1, "quad_abs_tol": "x"}})"),
            "numeric.quad_abs_tol");
}

TEST(JobParse, BadEnumsAndValues) {
  EXPECT_EQ(schema_path_of(R"({"command": "entropyy", "numeric": {"rng_seed": 1}})"), "command");
  const std::string bad_kind = R"({"command": "entropy", "numeric": {"rng_seed": 1},
    "model": {"distribution": {"kind": "cauchy"}}})";
  EXPECT_THROW(job::run_job(job::parse_job(parse(bad_kind))), job::SchemaError);
  const std::string bad_var = R"({"command": "entropy", "numeric": {"rng_seed": 1},
    "model": {"distribution": {"kind": "normal", "variance": -1}}})";
  try {
    job::run_job(job::parse_job(parse(bad_var)));
    FAIL();
  } catch (const job::SchemaError& e) {
    EXPECT_EQ(e.path(), "model.distribution");
  }
  const std::string missing = R"({"command": "gibbs", "numeric": {"rng_seed": 1},
    "model": {"f": {"kind": "normal", "variance": 1}}})";
  try {
    job::run_job(job::parse_job(parse(missing)));
    FAIL();
  } catch (const job::SchemaError& e) {
    EXPECT_EQ(e.path(), "model.g");
  }
}

TEST(JobParse, EchoRoundTrips) {
  const auto spec = job::parse_job(parse(slurp(fs::path(WENTROPY_JOBS_DIR) / "kyfan_sweep.json")));
  const auto again = job::parse_job(spec.echo);
  EXPECT_EQ(again.echo, spec.echo);
  EXPECT_EQ(spec.echo["numeric"]["mc_samples"], NumericConfig{}.mc_samples);
}

TEST(JobParse, AllSampleJobsParse) {
  for (const auto& e : fs::directory_iterator(WENTROPY_JOBS_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(job::parse_job(job::read_json_file(e.path().string()))) << e.path();
  }
}

TEST(Sweep, KyFanGrid) {
  auto spec = job::parse_job(parse(slurp(fs::path(WENTROPY_JOBS_DIR) / "kyfan_sweep.json")));
  const auto rep = job::run_job(spec);
  const auto& s = rep.document["results"]["summary"];
  int total = 0;
  for (auto it = s.begin(); it != s.end(); ++it) total += it.value().get<int>();
  EXPECT_EQ(total, 81);
  EXPECT_EQ(s["VIOLATED"], 0);
  EXPECT_EQ(s["ERROR"], 0);
  EXPECT_GT(s["HOLDS"].get<int>(), 0);
  const std::string csv = rep.series.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t1,t2,verdict,gap,F1,F2,in_S,lambda1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 82);
}

TEST(Sweep, CellFailuresAreCounted) {
  const std::string j = R"({"command": "sweep", "numeric": {"rng_seed": 3, "mc_samples": 2000},
    "model": {"mode": "ar1", "alpha": 0.5, "n": 2},
    "sweep": {"command": "rates", "axes": [{"pointer": "/alpha", "values": [0.5, 1.0]}]}})";
  const auto rep = job::run_job(job::parse_job(parse(j)));
  EXPECT_EQ(rep.document["results"]["summary"]["ERROR"], 1);
  EXPECT_TRUE(rep.document["results"]["cells"][1]["result"].contains("error"));
}

TEST(Sweep, RejectsBadAxes) {
  const std::string base = R"({"command": "sweep", "numeric": {"rng_seed": 3},
    "model": {"t": [0.5], "c1": 1, "c2": 4, "lambda": 0.5}, "sweep": {"command": "kyfan", "axes": AXES}})";
  auto with = [&](const std::string& axes) {
    std::string s = base;
    s.replace(s.find("AXES"), 4, axes);
    try {
      job::run_job(job::parse_job(parse(s)));
    } catch (const job::SchemaError& e) {
      return e.path();
    }
    return std::string();
  };
  EXPECT_EQ(with(R"([{"pointer": "/nowhere/0", "values": [1]}])"), "sweep.axes[0].pointer");
  EXPECT_EQ(with(R"([{"pointer": "/lambda", "from": 0, "to": 1, "count": 2000}, {"pointer": "/t/0", "from": 0, "to": 1, "count": 2000}])"),
            "sweep.axes");
  EXPECT_EQ(with(R"([])"), "sweep.axes");
  EXPECT_EQ(with(R"([{"pointer": "/lambda", "from": 0, "to": 1, "count": 3, "scale": "log"}])"), "sweep.axes[0].from");
  EXPECT_EQ(with(R"([{"pointer": "/lambda", "values": [0.2], "step": 1}])"), "sweep.axes[0].step");
}

TEST(Sweep, LogAxisAndIntegerPreservation) {
  const std::string j = R"({"command": "sweep", "numeric": {"rng_seed": 3},
    "model": {"mode": "iid_additive", "distribution": {"kind": "pmf", "masses": [0.5, 0.5]}, "n": 1},
    "sweep": {"command": "rates", "axes": [{"pointer": "/n", "from": 1, "to": 100, "count": 3, "scale": "log"}]}})";
  const auto rep = job::run_job(job::parse_job(parse(j)));
  const auto& cells = rep.document["results"]["cells"];
  ASSERT_EQ(cells.size(), 3u);
  // psi = 1: the weight is n and the entropy n ln 2
  EXPECT_EQ(cells[1]["result"]["n"], 10);
  EXPECT_NEAR(cells[1]["result"]["value"].get<double>(), 10 * 10 * std::log(2.0), 1e-9);
}

TEST(Binary, RunsAndIsDeterministic) {
  const fs::path job = fs::path(WENTROPY_JOBS_DIR) / "smb_iid.json";
  const CliRun a = cli("run " + job.string());
  const CliRun b = cli("run " + job.string());
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.err.find("finished in"), std::string::npos);
  EXPECT_EQ(a.out.find("finished"), std::string::npos);
  const json doc = parse(a.out);
  EXPECT_EQ(doc["job"], job::parse_job(job::read_json_file(job.string())).echo);
}

TEST(Binary, ExitCodes) {
  EXPECT_EQ(cli("run " + (fs::path(WENTROPY_JOBS_DIR) / "invalid" / "unknown_field.json").string()).code, 2);
  EXPECT_EQ(cli("run " + (scratch() / "does_not_exist.json").string()).code, 2);
  EXPECT_EQ(cli("run " + write_job("broken.json", "{\"command\": ").string()).code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  const CliRun r = cli("run " + write_job("unit_root.json", R"({"command": "rates", "numeric": {"rng_seed": 1},
    "model": {"mode": "ar1", "alpha": 1.0, "n": 3}})").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("numerical failure"), std::string::npos);
  // a sweep job through `run` is fine; a plain job through `sweep` is not
  EXPECT_EQ(cli("sweep " + write_job("plain.json", kNormal).string()).code, 2);
}

TEST(Binary, WritesReportAndCsv) {
  const CliRun r = cli("sweep " + (fs::path(WENTROPY_JOBS_DIR) / "kyfan_sweep.json").string() + " -o rep.json --csv grid.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  const json doc = parse(slurp(scratch() / "rep.json"));
  EXPECT_EQ(doc["results"]["command"], "kyfan");
  const std::string csv = slurp(scratch() / "grid.csv");
  EXPECT_EQ(csv.rfind("t1,t2,verdict", 0), 0u);
}

TEST(Binary, Schema) {
  const CliRun r = cli("schema");
  ASSERT_EQ(r.code, 0);
  const json s = parse(r.out);
  EXPECT_EQ(s["required"], json::array({"command", "numeric"}));
  EXPECT_EQ(s["$defs"]["numeric"]["required"], json::array({"rng_seed"}));
  EXPECT_EQ(s["properties"]["command"]["enum"].size(), job::commands().size());
}
