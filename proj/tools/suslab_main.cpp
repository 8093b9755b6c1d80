#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

#include "suslab/error.hpp"
#include "suslab/harness.hpp"

namespace {

using namespace suslab;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  bool timings = false;
  bool quiet = false;
};

harness::RunConfig resolve(const GlobalFlags& g) {
  harness::RunConfig c = g.config.empty() ? harness::RunConfig{} : harness::load_config(g.config);
  if (g.seed) c.apply_seed(*g.seed);
  if (!g.out.empty()) c.out_dir = g.out;
  if (g.threads) c.estimate.threads = *g.threads;
  if (g.timings) c.estimate.timings = true;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compare Monte Carlo and Fisher estimates of in-context susceptibility on a toy language model"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed; overrides the config");
  app.add_option("--out", g.out, "output directory; overrides the config");
  app.add_option("--threads", g.threads, "estimate worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("--timings", g.timings, "record per-query wall time in results.csv");
  app.add_flag("-q,--quiet", g.quiet, "suppress progress messages");

  auto* gen = app.add_subcommand("gen-data", "generate the world, corpus, queries and context pools");
  auto* train = app.add_subcommand("train", "train the toy model on the corpus");
  auto* estimate = app.add_subcommand("estimate", "compute both susceptibilities for every query");
  auto* compare = app.add_subcommand("compare", "estimate, then report correlations, bins and plots");
  auto* factors = app.add_subcommand("factors", "bootstrap means per query form, openness and entity kind");
  auto* bench = app.add_subcommand("bench", "time both estimators on a query subset");
  auto* plot = app.add_subcommand("plot", "redraw the scatter plots from results.csv");
  auto* config = app.add_subcommand("config", "print the resolved configuration");

  CLI11_PARSE(app, argc, argv);

  const auto start = std::chrono::steady_clock::now();
  const harness::Log log = [&](const std::string& msg) {
    if (g.quiet) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
  };
  try {
    const harness::RunConfig c = resolve(g);
    if (*gen) harness::run_gen_data(c, log);
    if (*train) harness::run_train(c, log);
    if (*estimate) harness::run_estimate(c, log);
    if (*compare) harness::run_compare(c, log);
    if (*factors) harness::run_factors(c, log);
    if (*bench) harness::run_bench(c, log);
    if (*plot) harness::run_plot(c, log);
    if (*config) std::cout << harness::dump_config(c);
  } catch (const std::exception& e) {
    const auto* err = dynamic_cast<const Error*>(&e);
    std::fprintf(stderr, "suslab: %s%s%s\n", err ? to_string(err->kind()) : "", err ? ": " : "", e.what());
    return harness::exit_code_for(e);
  }
  return 0;
}
