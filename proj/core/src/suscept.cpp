#include "suslab/suscept.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "suslab/error.hpp"
#include "suslab/seeding.hpp"

namespace suslab::suscept {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::size_t longest_context(std::span<const datagen::ContextRecord> pool) {
  std::size_t n = 0;
  for (const auto& c : pool) n = std::max(n, c.token_ids.size());
  return n;
}

}  // namespace

std::size_t default_relevant_count(std::size_t n) { return std::max<std::size_t>(1, n / 32); }

ContextSample sample_contexts(std::span<const datagen::ContextRecord> pool, const std::string& entity,
                              std::size_t n, std::size_t n_relevant, std::uint64_t seed) {
  require(n >= 1, ErrorKind::Precondition, "context sample size must be positive");
  require(n_relevant <= n, ErrorKind::Precondition, "more relevant contexts requested than the sample holds");
  std::vector<std::size_t> relevant;
  std::vector<std::size_t> other;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& m = pool[i].mentioned_entities;
    (std::find(m.begin(), m.end(), entity) != m.end() ? relevant : other).push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(relevant.begin(), relevant.end(), rng);
  std::shuffle(other.begin(), other.end(), rng);
  const std::size_t take_rel = std::min(n_relevant, relevant.size());
  require(other.size() >= n - take_rel, ErrorKind::Precondition,
          "context pool of " + std::to_string(pool.size()) + " cannot supply " + std::to_string(n) +
              " contexts for " + entity);
  std::vector<std::size_t> chosen(relevant.begin(), relevant.begin() + static_cast<std::ptrdiff_t>(take_rel));
  chosen.insert(chosen.end(), other.begin(), other.begin() + static_cast<std::ptrdiff_t>(n - take_rel));
  std::shuffle(chosen.begin(), chosen.end(), rng);
  ContextSample s;
  s.relevant_count = take_rel;
  for (std::size_t i : chosen) s.contexts.push_back(pool[i]);
  return s;
}

double mutual_information_plugin(std::span<const NextTokenDistribution> rows) {
  require(!rows.empty(), ErrorKind::Precondition, "mutual information of an empty sample");
  const auto V = rows.front().probs.size();
  toylm::Vector mix = toylm::Vector::Zero(V);
  for (const auto& r : rows) {
    require(r.probs.size() == V, ErrorKind::DimensionMismatch, "distributions differ in vocabulary");
    mix += r.probs;
  }
  mix /= static_cast<double>(rows.size());
  const auto marginal = NextTokenDistribution::from_probs(mix);
  double total = 0.0;
  for (const auto& r : rows) total += fisher::kl_divergence(r, marginal);
  return total / static_cast<double>(rows.size());
}

double mc_susceptibility(const ModelParams& params, std::span<const TokenId> query, const ContextSample& sample,
                         int context_slots, PassCounter* counter) {
  require(sample.size() > 0, ErrorKind::Precondition, "context sample is empty");
  std::vector<NextTokenDistribution> rows;
  rows.reserve(sample.size());
  for (const auto& c : sample.contexts) {
    const auto joint = reparam::embed_context_query(params, c.token_ids, query, context_slots);
    rows.push_back(toylm::forward(params, joint.input()));
    if (counter != nullptr) ++counter->forwards;
  }
  return mutual_information_plugin(rows);
}

FisherSusceptibility fisher_susceptibility(const ModelParams& params, std::span<const TokenId> query, int k,
                                           PassCounter* counter) {
  const auto theta = reparam::embed_query(params, query);
  const fisher::TransformerFamily family(params, theta);
  FisherSusceptibility out;
  out.trace = fisher::fisher_trace_topk(family, theta.values, k, counter);
  out.dim = theta.dim();
  return out;
}

LiftedSample lift_sample(const ModelParams& params, std::span<const TokenId> query, const ContextSample& sample,
                         int context_slots, reparam::LiftMode mode) {
  require(sample.size() > 0, ErrorKind::Precondition, "context sample is empty");
  LiftedSample out;
  out.base = reparam::lift_query(params, query, context_slots, mode);
  std::vector<reparam::ThetaVector> joints;
  for (const auto& c : sample.contexts) {
    joints.push_back(reparam::embed_context_query(params, c.token_ids, query, context_slots));
    reparam::DeltaVector d;
    d.values = joints.back().values - out.base.values;
    d.positions = out.base.positions;
    d.width = out.base.width;
    d.source = reparam::DeltaSource::EmpiricalFromContext;
    out.deltas.push_back(std::move(d));
  }
  out.attend = reparam::open_window(joints);
  return out;
}

double quad_susceptibility(const ModelParams& params, std::span<const TokenId> query, const ContextSample& sample,
                           int context_slots, double t, Eigen::Index cap, PassCounter* counter) {
  const LiftedSample lifted = lift_sample(params, query, sample, context_slots);
  const Eigen::Index D = lifted.base.dim();
  require(D <= cap, ErrorKind::CapExceeded,
          "lifted dimension " + std::to_string(D) + " exceeds the exact-Fisher cap of " + std::to_string(cap));
  const fisher::TransformerFamily family(params, lifted.base.positions, lifted.attend);
  auto session = family.open(lifted.base.values, counter);
  const toylm::Matrix g = session->score_matrix();
  const toylm::Vector& p = session->distribution().probs;
  // δᵀJδ = Σ_a p(a) (g_a·δ)², so J itself is never formed.
  toylm::Matrix deltas(D, static_cast<Eigen::Index>(lifted.deltas.size()));
  for (std::size_t i = 0; i < lifted.deltas.size(); ++i) deltas.col(static_cast<Eigen::Index>(i)) = lifted.deltas[i].values;
  const toylm::Matrix proj = g * deltas;
  const double mean = (p.transpose() * proj.cwiseAbs2()).sum() / static_cast<double>(lifted.deltas.size());
  return 0.5 * t * t * mean;
}

InterpolationPoint interpolation_point(const ModelParams& params, const LiftedSample& lifted, double t) {
  const fisher::TransformerFamily family(params, lifted.base.positions, lifted.attend);
  auto session = family.open(lifted.base.values, nullptr);
  const auto& base = session->distribution();
  const toylm::Matrix g = session->score_matrix();
  const auto n = static_cast<Eigen::Index>(lifted.deltas.size());

  toylm::Matrix deltas(lifted.base.dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) deltas.col(i) = lifted.deltas[static_cast<std::size_t>(i)].values;
  const toylm::Vector mean = deltas.rowwise().mean();
  const toylm::Matrix proj = g * deltas;
  const toylm::Matrix proj_c = proj.colwise() - g * mean;

  InterpolationPoint pt;
  pt.t = t;
  pt.quad = 0.5 * t * t * (base.probs.transpose() * proj.cwiseAbs2()).sum() / static_cast<double>(n);
  pt.quad_centered = 0.5 * t * t * (base.probs.transpose() * proj_c.cwiseAbs2()).sum() / static_cast<double>(n);

  std::vector<NextTokenDistribution> rows;
  for (const auto& d : lifted.deltas) {
    rows.push_back(toylm::forward(params, reparam::perturbed_input(lifted.base, &d, t, lifted.attend)));
    pt.kl_to_base += fisher::kl_divergence(rows.back(), base);
  }
  pt.kl_to_base /= static_cast<double>(n);
  pt.mc_mixture = mutual_information_plugin(rows);
  return pt;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::Precondition, "slope needs two or more points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0.0 && y[i] > 0.0, ErrorKind::UndefinedStatistic, "log-log slope needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  require(sxx > 0.0, ErrorKind::UndefinedStatistic, "log-log slope needs distinct x values");
  return sxy / sxx;
}

SusceptibilityRecord estimate_query(const ModelParams& params, const datagen::QueryRecord& query,
                                    std::span<const datagen::ContextRecord> pool, const EstimateOptions& options) {
  SusceptibilityRecord r;
  r.query_id = query.query_id;
  r.relation = query.relation;
  r.form = query.form;
  r.entity_kind = query.entity_kind;
  r.k = options.k;
  const int slots = options.context_slots > 0 ? options.context_slots : static_cast<int>(longest_context(pool));

  const std::size_t n_rel = options.n_relevant.value_or(default_relevant_count(options.n_contexts));
  const auto sample = sample_contexts(pool, query.entity, options.n_contexts, n_rel,
                                      derive_seed(options.seed, query.query_id));
  r.n_contexts = sample.size();
  r.relevant_contexts = sample.relevant_count;

  auto t0 = Clock::now();
  r.mc_sus = mc_susceptibility(params, query.token_ids, sample, slots, &r.mc_passes);
  r.mc_ms = elapsed_ms(t0);

  t0 = Clock::now();
  const auto fs = fisher_susceptibility(params, query.token_ids, options.k, &r.fisher_passes);
  r.fisher_ms = elapsed_ms(t0);
  r.fisher_sus = fs.trace.value;
  r.fisher_sus_per_dim = fs.per_dim();
  r.covered_mass = fs.trace.covered_mass;

  if (options.with_quad) r.quad_sus = quad_susceptibility(params, query.token_ids, sample, slots, 1.0, options.cap);
  return r;
}

}  // namespace suslab::suscept
