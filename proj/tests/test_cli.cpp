#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "hslag/experiments.hpp"
#include "hslag/io.hpp"

using namespace hslag;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hslag_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HSLAG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  write_text(p, text);
  return p;
}

}  // namespace

// ------------------------------------------------------------------ config

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig c = parse_config(R"({"suite": "sweep", "t_list": [0.06, 0.03], "metric": {"amplitude": 0.02}})");
  EXPECT_EQ(c.suite, "sweep");
  EXPECT_EQ(c.grid, 32);
  EXPECT_EQ(c.t_list, (std::vector<double>{0.06, 0.03}));
  EXPECT_DOUBLE_EQ(c.metric.amplitude, 0.02);
  EXPECT_EQ(c.metric.type, "shear");
  EXPECT_DOUBLE_EQ(c.tol.solve, 1e-10);
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_config(R"({"suite": "reduce", "gird": 32})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"grid": "big"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"tolerances": {"sovle": 1e-3}})"), ConfigError);
  auto invalid = [](const std::string& text) { validate(parse_config(text)); };
  EXPECT_THROW(invalid(R"({"suite": "bogus"})"), ConfigError);
  EXPECT_THROW(invalid(R"({"suite": "reduce", "t": 0.5})"), ConfigError);
  EXPECT_THROW(invalid(R"({"suite": "sweep", "t_list": [0.05, 0.2]})"), ConfigError);
  EXPECT_THROW(invalid(R"({"suite": "reduce", "tolerances": {"solve": 0}})"), ConfigError);
  EXPECT_THROW(invalid(R"({"suite": "reduce", "tolerances": {"cross": -1e-3}})"), ConfigError);
  EXPECT_THROW(invalid(R"({"suite": "spectrum", "n": 3})"), ConfigError);
  EXPECT_THROW(invalid(R"({"suite": "reduce", "grid": 15})"), ConfigError);
}

TEST(Config, ShippedConfigsValidate) {
  for (const auto& s : suite_names()) {
    const ExperimentConfig c = parse_config(read_text(fs::path(HSLAG_SOURCE_DIR) / "configs" / (s + ".json")));
    EXPECT_EQ(c.suite, s);
    EXPECT_NO_THROW(validate(c));
  }
}

TEST(Config, EchoRoundTrips) {
  ExperimentConfig c;
  c.suite = "reduce";
  c.seed = 99;
  c.tol.q_rel = 0.05;
  nlohmann::json j = to_json(c);
  const ExperimentConfig back = parse_config(j.dump());
  EXPECT_EQ(to_json(back), j);
}

// --------------------------------------------------------------------- io

TEST(Csv, RoundTripIsExact) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  CsvTable t;
  t.header = {"index", "eigenvalue", "residual"};
  for (int i = 0; i < 50; ++i) t.add({double(i), std::exp(8 * nd(rng)), 1e-300 * nd(rng)});
  const CsvTable back = parse_csv(to_csv(t));
  EXPECT_EQ(back.header, t.header);
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) EXPECT_EQ(back.rows[r], t.rows[r]);
  EXPECT_EQ(to_csv(back), to_csv(t));
}

TEST(Csv, LabelledAndMalformed) {
  CsvTable t;
  t.header = {"series", "x", "y"};
  t.add({1.0, 2.0}, "a/b");
  t.add({3.0, -4.5}, "c");
  const CsvTable back = parse_csv(to_csv(t), true);
  EXPECT_EQ(back.labels, t.labels);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_THROW(parse_csv("a,b\n1,2,3\n"), Error);
  EXPECT_THROW(parse_csv("a,b\n1,x\n"), Error);
  EXPECT_THROW(parse_csv(""), Error);
  EXPECT_THROW(t.add({1.0, 1.0}), Error);
}

TEST(FieldFile, RoundTripKeepsGridAndValues) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (const GridDescriptor& g :
       {GridDescriptor::uniform(2, 8), GridDescriptor({8, 10}, {kTwoPi, 3.0}, QuotientRule{{true, true}})}) {
    ScalarField f(g);
    for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values[i] = nd(rng);
    const ScalarField back = field_from_json(nlohmann::json::parse(field_to_json(f).dump()));
    EXPECT_TRUE(back.grid == g);
    EXPECT_EQ(back.values, f.values);
  }
  nlohmann::json bad = field_to_json(ScalarField(GridDescriptor::uniform(2, 8)));
  bad["values"].erase(0);
  EXPECT_THROW(field_from_json(bad), GridMismatch);
}

// -------------------------------------------------------------- plot data

TEST(PlotData, ScalingTraceIsLongFormatAndMonotone) {
  const fs::path dir = scratch("plot");
  CsvTable sweep;
  sweep.header = {"t", "f_norm", "H_norm", "P0_norm", "K", "iterations"};
  for (double t : {0.02, 0.08, 0.04}) sweep.add({t, 0.07 * t, t * t, t, 51.0, 5});
  write_csv(dir / "sweep.csv", sweep);
  const CsvTable out = plot_data(dir);
  EXPECT_EQ(out.header, (std::vector<std::string>{"series", "x", "y"}));
  ASSERT_EQ(out.rows.size(), 9u);
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    EXPECT_EQ(out.rows[i].size(), 2u);
    if (i > 0 && out.labels[i] == out.labels[i - 1]) EXPECT_LT(out.rows[i - 1][0], out.rows[i][0]);
  }
  EXPECT_EQ(out.labels[0], "scaling/f_norm");
}

TEST(PlotData, EmptyDirectoryIsAnError) {
  const fs::path dir = scratch("empty");
  EXPECT_THROW(plot_data(dir), Error);
  EXPECT_THROW(plot_data(dir / "missing"), Error);
}

// ---------------------------------------------------------------- process

TEST(Cli, UsageErrorsExitTwo) {
  const fs::path dir = scratch("usage");
  EXPECT_EQ(run("", dir / "log"), 2);
  EXPECT_EQ(run("no-such-suite", dir / "log"), 2);
  EXPECT_EQ(run("estimates --bogus-flag", dir / "log"), 2);
  EXPECT_EQ(run("estimates --config " + (dir / "missing.json").string(), dir / "log"), 2);
  EXPECT_EQ(run("estimates --config " + write_config(dir, "{oops").string(), dir / "log"), 2);
  EXPECT_EQ(run("reduce --t 0.5 --out " + (dir / "out").string(), dir / "log"), 2);
  EXPECT_EQ(run("estimates --config " + write_config(dir, R"({"suite": "reduce"})").string(), dir / "log"), 2);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, EstimatesPassAndAreDeterministic) {
  const fs::path dir = scratch("det");
  ASSERT_EQ(run("estimates --seed 11 --out " + (dir / "a").string(), dir / "log"), 0) << read_text(dir / "log");
  ASSERT_EQ(run("estimates --seed 11 --out " + (dir / "b").string(), dir / "log"), 0);
  const std::string ma = read_text(dir / "a" / "manifest.json");
  EXPECT_EQ(ma, read_text(dir / "b" / "manifest.json"));
  EXPECT_EQ(read_text(dir / "a" / "estimates.csv"), read_text(dir / "b" / "estimates.csv"));
  const auto m = nlohmann::json::parse(ma);
  EXPECT_EQ(m["seed"], 11);
  EXPECT_TRUE(m["passed"].get<bool>());
  ASSERT_EQ(m["criteria"].size(), 2u);
  EXPECT_EQ(m["criteria"][0]["id"], 6);
  EXPECT_EQ(m["criteria"][1]["id"], 7);
  // a different seed draws different frames
  ASSERT_EQ(run("estimates --seed 12 --out " + (dir / "c").string(), dir / "log"), 0);
  EXPECT_NE(read_text(dir / "c" / "estimates.csv"), read_text(dir / "a" / "estimates.csv"));
}

TEST(Cli, FailedAssertionExitsOne) {
  const fs::path dir = scratch("fail");
  const fs::path cfg = write_config(dir, R"({"suite": "estimates", "tolerances": {"estimate_ratio": 1.0001}})");
  EXPECT_EQ(run("estimates --config " + cfg.string() + " --out " + (dir / "out").string(), dir / "log"), 1);
  const auto m = nlohmann::json::parse(read_text(dir / "out" / "manifest.json"));
  EXPECT_FALSE(m["passed"].get<bool>());
  EXPECT_NE(read_text(dir / "log").find("FAIL [6]"), std::string::npos);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const fs::path dir = scratch("env");
  const std::string cmd = "HSLAG_OUT_DIR=" + (dir / "envout").string() + " " + HSLAG_CLI_PATH + " estimates > " +
                          (dir / "log").string() + " 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "envout" / "manifest.json"));
}

TEST(Cli, VerifyModelsWritesTable) {
  const fs::path dir = scratch("models");
  ASSERT_EQ(run("verify-models --out " + (dir / "out").string(), dir / "log"), 0) << read_text(dir / "log");
  const CsvTable t = read_csv(dir / "out" / "models.csv", true);
  EXPECT_EQ(t.labels, (std::vector<std::string>{"torus", "ln"}));
  for (const auto& r : t.rows) {
    EXPECT_LE(r[t.column("hs_residual_max")], 1e-8);
    EXPECT_NEAR(r[t.column("volume")], r[t.column("volume_exact")], 1e-10 * r[t.column("volume_exact")]);
  }
}

TEST(Cli, SpectrumTableRoundTripsThroughPlotData) {
  const fs::path dir = scratch("spectrum");
  ASSERT_EQ(run("spectrum --model ln --n 2 --out " + (dir / "out").string(), dir / "log"), 0) << read_text(dir / "log");
  const CsvTable modes = read_csv(dir / "out" / "ln_modes.csv");
  EXPECT_EQ(modes.header, (std::vector<std::string>{"k", "l", "analytic", "numeric", "abs_diff"}));
  for (const auto& r : modes.rows) {
    EXPECT_LE(r[0], 4.0);
    EXPECT_LE(r[1], 4.0);
    EXPECT_EQ(static_cast<int>(r[0] + r[1]) % 2, 0);
    EXPECT_LE(r[4], 1e-4 * std::max(1.0, r[2]));
  }
  const std::string raw = read_text(dir / "out" / "spectrum.csv");
  EXPECT_EQ(to_csv(parse_csv(raw)), raw);
  ASSERT_EQ(run("plot-data --run " + (dir / "out").string() + " --out " + (dir / "plot.csv").string(), dir / "log"), 0);
  const CsvTable plot = read_csv(dir / "plot.csv", true);
  EXPECT_GT(plot.rows.size(), modes.rows.size());
}

TEST(Cli, PlotDataOnEmptyRunLeavesNoFile) {
  const fs::path dir = scratch("plotempty");
  fs::create_directories(dir / "run");
  EXPECT_EQ(run("plot-data --run " + (dir / "run").string() + " --out " + (dir / "plot.csv").string(), dir / "log"), 2);
  EXPECT_FALSE(fs::exists(dir / "plot.csv"));
  EXPECT_FALSE(fs::exists(dir / "plot.csv.tmp"));
}
