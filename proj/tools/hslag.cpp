// hslag: experiment suites and plot data.
//
//   hslag <suite> [--config file.json] [--out dir] [--seed n] [overrides]
//   hslag plot-data --run dir [--out file.csv]
//
// Exit status: 0 all assertions pass, 1 an assertion failed, 2 usage or
// configuration error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "hslag/experiments.hpp"

namespace fs = std::filesystem;
using namespace hslag;

namespace {

struct Overrides {
  std::string config, out, model;
  std::optional<std::uint64_t> seed;
  std::optional<double> t, amplitude;
  std::optional<int> n, grid;
};

void add_suite_options(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--t", o.t, "scale t for the reduction");
  sub->add_option("--amplitude", o.amplitude, "metric perturbation amplitude");
  sub->add_option("--model", o.model, "torus or ln (spectrum table)");
  sub->add_option("--n", o.n, "complex dimension");
  sub->add_option("--grid", o.grid, "nodes per axis");
}

ExperimentConfig build_config(const std::string& suite, const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : parse_config(read_text(o.config));
  if (!c.suite.empty() && c.suite != suite) throw ConfigError("config is for suite '" + c.suite + "', not '" + suite + "'");
  c.suite = suite;
  if (const char* env = std::getenv("HSLAG_OUT_DIR"); env && *env) c.out_dir = env;
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.t) c.t = *o.t;
  if (o.amplitude) c.metric.amplitude = *o.amplitude;
  if (!o.model.empty()) c.model = o.model;
  if (o.n) c.n = *o.n;
  if (o.grid) c.grid = *o.grid;
  validate(c);
  return c;
}

int run_suite(const std::string& suite, const Overrides& o) {
  ExperimentConfig cfg;
  try {
    cfg = build_config(suite, o);
  } catch (const Error& e) {
    std::cerr << "hslag: " << e.what() << "\n";
    return 2;
  }
  const auto start = std::chrono::steady_clock::now();
  Experiment ex(cfg);
  std::vector<Criterion> results;
  int status = 0;
  try {
    results = ex.run_suite([](const Criterion& c) {
      std::cout << (c.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << c.summary << std::endl;
    });
  } catch (const Error& e) {
    std::cerr << "hslag: suite aborted: " << e.what() << "\n";
    status = 1;
  }
  for (const auto& c : results)
    if (!c.pass) status = 1;

  nlohmann::json m = ex.manifest(results);
  if (status && results.empty()) m["passed"] = false;
  try {
    fs::create_directories(cfg.out_dir);
    for (const auto& [name, table] : ex.tables()) write_csv(fs::path(cfg.out_dir) / name, table);
    write_text(fs::path(cfg.out_dir) / "manifest.json", m.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "hslag: cannot write results: " << e.what() << "\n";
    return 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << suite << ": " << (status ? "FAILED" : "passed") << " in " << secs << " s, results in " << cfg.out_dir
            << std::endl;
  return status;
}

int run_plot_data(const std::string& run, const std::string& out) {
  CsvTable t;
  try {
    t = plot_data(run);
  } catch (const Error& e) {
    std::cerr << "hslag: " << e.what() << "\n";
    return 2;
  }
  const std::string text = to_csv(t);
  if (out.empty()) {
    std::cout << text;
  } else {
    try {
      write_text(out, text);
    } catch (const std::exception& e) {
      std::cerr << "hslag: " << e.what() << "\n";
      return 2;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hamiltonian stationary Lagrangian tori: experiment suites"};
  app.require_subcommand(1);
  Overrides o;
  std::string selected;
  for (const auto& s : suite_names()) {
    auto* sub = app.add_subcommand(s, "run the " + s + " suite");
    add_suite_options(sub, o);
    sub->callback([&selected, s] { selected = s; });
  }
  std::string run_dir, plot_out;
  auto* plot = app.add_subcommand("plot-data", "long-format (series, x, y) CSV from a run directory");
  plot->add_option("--run", run_dir, "run directory")->required();
  plot->add_option("--out", plot_out, "output file (default stdout)");
  plot->callback([&selected] { selected = "plot-data"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (selected == "plot-data") return run_plot_data(run_dir, plot_out);
  return run_suite(selected, o);
}
