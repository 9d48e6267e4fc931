// wentropy: run weighted-entropy jobs described in JSON.
//
//   wentropy run job.json [-o report.json] [--csv series.csv]
//   wentropy sweep job.json [...]
//   wentropy schema
//
// Exit codes: 0 ran (whatever the verdicts), 2 bad job, 3 numerical failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "wentropy/job.hpp"

namespace {

int write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) {
    std::cerr << "wentropy: cannot write " << path << "\n";
    return 3;
  }
  out << text;
  return 0;
}

int execute(const std::string& file, std::string out_path, std::string csv_path, bool require_sweep) {
  using namespace wentropy;
  try {
    const job::JobSpec spec = job::parse_job(job::read_json_file(file));
    if (require_sweep && spec.command != "sweep") throw job::SchemaError("command", "'sweep' requires command \"sweep\"");
    if (out_path.empty()) out_path = spec.output_path;
    if (csv_path.empty()) csv_path = spec.csv_path;
    double seconds = 0.0;
    const job::Report rep = job::run_job(spec, &seconds);
    const std::string text = rep.document.dump(2) + "\n";
    if (out_path.empty()) {
      std::cout << text;
    } else if (int rc = write_text(out_path, text)) {
      return rc;
    }
    if (!csv_path.empty() && !rep.series.empty())
      if (int rc = write_text(csv_path, rep.series.csv())) return rc;
    std::cerr << "wentropy: " << spec.command << " finished in " << seconds << " s\n";
    return 0;
  } catch (const job::SchemaError& e) {
    std::cerr << "wentropy: invalid job: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "wentropy: numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const NonConvergence& e) {
    std::cerr << "wentropy: numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const StructureError& e) {
    std::cerr << "wentropy: numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "wentropy: numerical failure: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted entropy and information inequalities"};
  app.require_subcommand(1);
  std::string file, out_path, csv_path;

  auto* run = app.add_subcommand("run", "run a job file");
  run->add_option("job", file, "job specification (JSON)")->required();
  run->add_option("-o,--output", out_path, "report path (default: job's output.path, else stdout)");
  run->add_option("--csv", csv_path, "CSV path for data series");

  auto* sweep = app.add_subcommand("sweep", "run a sweep job file");
  sweep->add_option("job", file, "job specification (JSON)")->required();
  sweep->add_option("-o,--output", out_path, "report path");
  sweep->add_option("--csv", csv_path, "CSV path for the cell table");

  app.add_subcommand("schema", "print the job JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (app.got_subcommand("schema")) {
    std::cout << wentropy::job::schema();
    return 0;
  }
  return execute(file, out_path, csv_path, app.got_subcommand("sweep"));
}
