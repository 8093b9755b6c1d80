#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "suslab/datagen.hpp"
#include "suslab/fisher.hpp"
#include "suslab/reparam.hpp"

// Susceptibility estimators for a query: Monte Carlo mutual information
// between context and answer, the Fisher trace surrogate, and the empirical
// quadratic form that links them.
namespace suslab::suscept {

using fisher::PassCounter;
using toylm::ModelParams;
using toylm::NextTokenDistribution;

/// Contexts drawn without replacement from one relation's pool.
struct ContextSample {
  std::vector<datagen::ContextRecord> contexts;
  std::size_t relevant_count = 0;  // contexts mentioning the queried entity

  std::size_t size() const { return contexts.size(); }
};

/// max(1, n/32).
std::size_t default_relevant_count(std::size_t n);

/// Draws min(n_relevant, available) contexts that mention `entity` and fills
/// the rest with contexts that do not, then shuffles. Throws Precondition when
/// the pool is too small.
ContextSample sample_contexts(std::span<const datagen::ContextRecord> pool, const std::string& entity,
                              std::size_t n, std::size_t n_relevant, std::uint64_t seed);

/// (1/n) Σ_i KL(p_i ‖ p̄) with p̄ the uniform mixture. Throws Precondition on
/// an empty table.
double mutual_information_plugin(std::span<const NextTokenDistribution> rows);

/// One forward per context on θ(c_i ⊕ q) in the L_c-slot layout.
double mc_susceptibility(const ModelParams& params, std::span<const TokenId> query, const ContextSample& sample,
                         int context_slots, PassCounter* counter = nullptr);

struct FisherSusceptibility {
  fisher::TraceEstimate trace;
  Eigen::Index dim = 0;  // |q|·d
  double per_dim() const { return dim == 0 ? 0.0 : trace.value / static_cast<double>(dim); }
};

/// Top-K Fisher trace at θ(q); never reads contexts.
FisherSusceptibility fisher_susceptibility(const ModelParams& params, std::span<const TokenId> query, int k,
                                           PassCounter* counter = nullptr);

/// The lifted expansion point and the context perturbations of a sample.
struct LiftedSample {
  reparam::ThetaVector base;          // lifted θ(q)
  std::vector<bool> attend;           // open window: query slots plus every used context slot
  std::vector<reparam::DeltaVector> deltas;
};

LiftedSample lift_sample(const ModelParams& params, std::span<const TokenId> query, const ContextSample& sample,
                         int context_slots, reparam::LiftMode mode = reparam::LiftMode::Aligned);

/// ½ (1/n) Σ_i (tδ_i)ᵀ J(θ_lifted) (tδ_i) with J exact over the full vocabulary.
/// Throws CapExceeded when the lifted dimension exceeds `cap`.
double quad_susceptibility(const ModelParams& params, std::span<const TokenId> query, const ContextSample& sample,
                           int context_slots, double t = 1.0, Eigen::Index cap = fisher::kDefaultDimensionCap,
                           PassCounter* counter = nullptr);

/// Every quantity of the small-perturbation comparison at one scale t.
struct InterpolationPoint {
  double t = 0.0;
  double mc_mixture = 0.0;       // plug-in MI of f(θ+tδ_i) against their mixture
  double kl_to_base = 0.0;       // (1/n) Σ KL(f(θ+tδ_i) ‖ f(θ))
  double quad = 0.0;             // ½ t² (1/n) Σ δ_iᵀJδ_i
  double quad_centered = 0.0;    // same with δ_i - mean(δ)
};

/// Evaluates on the open-window layout. Costs n+1 forwards and d backwards.
InterpolationPoint interpolation_point(const ModelParams& params, const LiftedSample& lifted, double t);

/// Least-squares slope of log y against log x.
double loglog_slope(std::span<const double> x, std::span<const double> y);

struct SusceptibilityRecord {
  std::string query_id;
  std::string relation;
  datagen::QueryForm form;
  datagen::EntityKind entity_kind = datagen::EntityKind::Real;
  double mc_sus = 0.0;  // nats
  double fisher_sus = 0.0;
  double fisher_sus_per_dim = 0.0;
  std::optional<double> quad_sus;
  std::size_t n_contexts = 0;
  std::size_t relevant_contexts = 0;
  int k = 0;
  double covered_mass = 0.0;
  PassCounter mc_passes;
  PassCounter fisher_passes;
  double mc_ms = 0.0;
  double fisher_ms = 0.0;
};

struct EstimateOptions {
  std::size_t n_contexts = 128;
  std::optional<std::size_t> n_relevant;  // default_relevant_count when unset
  int k = 10;
  int context_slots = 0;  // 0: longest context in the pool
  bool with_quad = true;
  Eigen::Index cap = fisher::kDefaultDimensionCap;
  std::uint64_t seed = 17;
};

/// All estimators for one query against its relation's pool. Context
/// sampling is seeded by (options.seed, query_id).
SusceptibilityRecord estimate_query(const ModelParams& params, const datagen::QueryRecord& query,
                                    std::span<const datagen::ContextRecord> pool, const EstimateOptions& options);

}  // namespace suslab::suscept
