#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "suslab/datagen.hpp"
#include "suslab/suscept.hpp"
#include "suslab/train.hpp"

// Experiment pipeline: configuration, the stages behind each CLI subcommand,
// and the CSV / JSON / SVG artifacts they exchange. Every artifact except the
// optional timing columns and bench.json is a deterministic function of the
// resolved configuration.
namespace suslab::harness {

struct EstimateConfig {
  int context_pool = 200;
  int n_contexts = 128;
  std::optional<int> n_relevant;  // unset: max(1, n_contexts/32)
  int k = 10;
  int context_slots = 0;  // 0: longest context template in the world
  bool with_quad = true;
  bool timings = false;   // fill mc_ms / fisher_ms instead of "NA"
  int threads = 0;        // 0: hardware concurrency
  bool operator==(const EstimateConfig&) const = default;
};

struct ReportConfig {
  int permutations = 10000;
  int bootstrap = 1000;
  bool operator==(const ReportConfig&) const = default;
};

struct BenchConfig {
  int queries = 50;
  int repetitions = 5;
  int n_contexts = 256;
  int k = 10;
  bool operator==(const BenchConfig&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 7;
  toylm::ModelConfig model;  // vocab_size is taken from the generated world
  toylm::TrainSchedule schedule;
  datagen::WorldConfig world;
  datagen::CorpusConfig corpus;
  EstimateConfig estimate;
  ReportConfig report;
  BenchConfig bench;
  std::filesystem::path out_dir = "runs/default";

  /// Pushes `seed` into every seeded component.
  void apply_seed(std::uint64_t s);
  /// Throws Config naming the first invalid knob.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Missing keys keep their defaults; unknown keys are a Config error.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& json_text);
std::string dump_config(const RunConfig& config);

/// Artifact locations under config.out_dir.
struct Layout {
  std::filesystem::path root;
  std::filesystem::path world() const { return root / "data" / "world.jsonl"; }
  std::filesystem::path corpus() const { return root / "data" / "corpus.jsonl"; }
  std::filesystem::path queries() const { return root / "data" / "queries.jsonl"; }
  std::filesystem::path contexts() const { return root / "data" / "contexts.jsonl"; }
  std::filesystem::path checkpoint() const { return root / "model.ckpt"; }
  std::filesystem::path train_report() const { return root / "train_report.json"; }
  std::filesystem::path results() const { return root / "results.csv"; }
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path bins() const { return root / "bins.csv"; }
  std::filesystem::path scatter_query() const { return root / "scatter_query.svg"; }
  std::filesystem::path scatter_relation() const { return root / "scatter_relation.svg"; }
  std::filesystem::path factors() const { return root / "factors.csv"; }
  std::filesystem::path bench() const { return root / "bench.json"; }
  std::filesystem::path resolved_config() const { return root / "config.json"; }
};

using Log = std::function<void(const std::string&)>;

void run_gen_data(const RunConfig& config, const Log& log = {});
toylm::TrainReport run_train(const RunConfig& config, const Log& log = {});
std::vector<suscept::SusceptibilityRecord> run_estimate(const RunConfig& config, const Log& log = {});

struct CorrelationReport {
  std::string split;     // "overall" | "open" | "closed"
  std::string grouping;  // "per-query" | "per-relation-mean"
  std::string metric;    // fisher column correlated against mc_sus_nats
  std::size_t n = 0;
  double pearson = 0.0;
  double spearman = 0.0;
  double p_value = 0.0;  // permutation test on spearman
};

/// Correlations of MC against Fisher susceptibility for every split and grouping.
std::vector<CorrelationReport> correlation_reports(const std::vector<suscept::SusceptibilityRecord>& records,
                                                   const ReportConfig& config, std::uint64_t seed);

/// Runs the estimate stage, then writes report.json, bins.csv and both
/// scatter plots. Statistics that are undefined for a split are NaN.
std::vector<CorrelationReport> run_compare(const RunConfig& config, const Log& log = {});

struct FactorRow {
  std::string group;   // e.g. "form=qa"
  std::string metric;  // "mc_sus_nats" | "fisher_sus"
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 0;
};

std::vector<FactorRow> factor_table(const std::vector<suscept::SusceptibilityRecord>& records,
                                    const ReportConfig& config, std::uint64_t seed, const Log& log = {});
std::vector<FactorRow> run_factors(const RunConfig& config, const Log& log = {});

struct BenchResult {
  std::size_t queries = 0;
  int repetitions = 0;
  int n_contexts = 0;
  int k = 0;
  fisher::PassCounter mc_passes;      // per query
  fisher::PassCounter fisher_passes;  // per query
  double mc_ms_median = 0.0;          // per query
  double fisher_ms_median = 0.0;      // per query
  double ratio = 0.0;                 // mc / fisher wall time
  double expected_ratio = 0.0;        // n_c / (2K + 1)
};

BenchResult run_bench(const RunConfig& config, const Log& log = {});

/// Regenerates the SVG plots from results.csv.
void run_plot(const RunConfig& config, const Log& log = {});

// --- artifacts --------------------------------------------------------------

inline constexpr const char* kResultColumns =
    "query_id,relation,form,openness,entity_kind,mc_sus_nats,fisher_sus,fisher_sus_per_dim,quad_sus,"
    "n_contexts,K,covered_mass,mc_forwards,fisher_backwards,mc_ms,fisher_ms";

std::string result_row(const suscept::SusceptibilityRecord& r, bool timings);
void write_results(const std::filesystem::path& path, const std::vector<suscept::SusceptibilityRecord>& records,
                   bool timings);
/// Throws MissingArtifact when absent and MalformedHeader on a schema mismatch.
std::vector<suscept::SusceptibilityRecord> read_results(const std::filesystem::path& path);

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Standalone SVG with one circle per point and the least-squares line.
/// Throws Precondition on empty input.
void emit_svg_scatter(const std::vector<ScatterPoint>& points, const std::string& x_label,
                      const std::string& y_label, const std::filesystem::path& path);

/// Mean Fisher susceptibility per MC bin: five equal-width bins on [0, 1]
/// plus an overflow bin for values above 1.
struct BinRow {
  std::string bin;
  std::size_t n = 0;
  double mean_fisher = 0.0;
};
std::vector<BinRow> mc_bins(const std::vector<suscept::SusceptibilityRecord>& records);

/// Maps an exception to the CLI exit code: 2 config, 3 missing artifact,
/// 4 numeric failure, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace suslab::harness
