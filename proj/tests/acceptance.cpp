// Runs every acceptance criterion at the default configuration and prints
// one PASS/FAIL line per criterion. Tolerances are the defaults of
// hslag::Tolerances and are not configurable here.

#include <chrono>
#include <iostream>

#include "hslag/experiments.hpp"

int main() {
  using namespace hslag;
  ExperimentConfig cfg;
  cfg.suite = "all";
  const auto start = std::chrono::steady_clock::now();
  Experiment ex(cfg);
  int failed = 0;
  std::vector<Criterion> results;
  try {
    results = ex.run_all([&](const Criterion& c) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << (c.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << c.summary
                << "  [t=" << static_cast<int>(secs) << "s]" << std::endl;
    });
  } catch (const std::exception& e) {
    std::cout << "FAIL aborted: " << e.what() << std::endl;
    return 1;
  }
  for (const auto& c : results) failed += c.pass ? 0 : 1;
  std::cout << (results.size() - failed) << "/" << results.size() << " criteria pass" << std::endl;
  return failed ? 1 : 0;
}
