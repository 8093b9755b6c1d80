#include "suslab/reparam.hpp"

#include <random>

#include "suslab/error.hpp"

namespace suslab::reparam {
namespace {


ThetaVector blank(int positions, int width) {
  ThetaVector t;
  t.positions = positions;
  t.width = width;
  t.values = Vector::Zero(static_cast<Eigen::Index>(positions) * width);
  t.slots.assign(static_cast<std::size_t>(positions), SlotKind::Pad);
  return t;
}

void check_tokens(const ModelParams& params, std::span<const TokenId> ids, ThetaProvenance& prov) {
  for (TokenId id : ids) {
    require(id >= 0 && id < params.config.vocab_size, ErrorKind::Precondition,
            "token id " + std::to_string(id) + " outside vocabulary");
    if (id == Vocabulary::kUnk) ++prov.unk_tokens;
  }
}

/// Writes token `id` at `position` into slot `slot`; PAD ids stay zero.
void place(const ModelParams& params, ThetaVector& t, int slot, TokenId id, int position, SlotKind kind) {
  if (id == Vocabulary::kPad) return;
  require(position < params.config.max_len, ErrorKind::Length,
          "position " + std::to_string(position) + " exceeds max_len " + std::to_string(params.config.max_len));
  const int d = t.width;
  Eigen::Map<Eigen::RowVectorXd> dst(t.values.data() + static_cast<Eigen::Index>(slot) * d, d);
  dst = params.tok_emb.row(id) + params.pos_emb.row(position);
  t.slots[static_cast<std::size_t>(slot)] = kind;
}

void require_fits(const ModelParams& params, std::size_t n) {
  require(n >= 1, ErrorKind::Precondition, "query is empty");
  require(n <= static_cast<std::size_t>(params.config.max_len), ErrorKind::Length,
          "sequence of " + std::to_string(n) + " positions exceeds max_len " +
              std::to_string(params.config.max_len));
}

}  // namespace

toylm::EmbeddedInput ThetaVector::input() const {
  toylm::EmbeddedInput in;
  in.rows = Eigen::Map<const Matrix>(values.data(), positions, width);
  in.attend.resize(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) in.attend[i] = slots[i] != SlotKind::Pad;
  return in;
}

Eigen::Map<const Eigen::RowVectorXd> ThetaVector::row(int slot) const {
  return Eigen::Map<const Eigen::RowVectorXd>(values.data() + static_cast<Eigen::Index>(slot) * width, width);
}

DeltaVector DeltaVector::gaussian(int positions, int width, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  DeltaVector d;
  d.positions = positions;
  d.width = width;
  d.values.resize(static_cast<Eigen::Index>(positions) * width);
  for (Eigen::Index i = 0; i < d.values.size(); ++i) d.values(i) = normal(rng);
  d.source = DeltaSource::SyntheticGaussian;
  return d;
}

DeltaVector DeltaVector::fixed(Vector values, int positions, int width) {
  require(values.size() == static_cast<Eigen::Index>(positions) * width, ErrorKind::DimensionMismatch,
          "delta length does not match its layout");
  DeltaVector d;
  d.values = std::move(values);
  d.positions = positions;
  d.width = width;
  d.source = DeltaSource::SyntheticFixed;
  return d;
}

const char* to_string(DeltaSource s) {
  switch (s) {
    case DeltaSource::EmpiricalFromContext: return "empirical-from-context";
    case DeltaSource::SyntheticGaussian: return "synthetic-gaussian";
    case DeltaSource::SyntheticFixed: return "synthetic-fixed";
  }
  return "unknown";
}

ThetaVector embed_query(const ModelParams& params, std::span<const TokenId> query) {
  require_fits(params, query.size());
  const int n = static_cast<int>(query.size());
  ThetaVector t = blank(n, params.config.d_model);
  check_tokens(params, query, t.provenance);
  for (int j = 0; j < n; ++j) place(params, t, j, query[static_cast<std::size_t>(j)], j, SlotKind::Query);
  return t;
}

ThetaVector embed_context_query(const ModelParams& params, std::span<const TokenId> context,
                                std::span<const TokenId> query, int context_slots) {
  require(context_slots >= 0, ErrorKind::Precondition, "context window must be non-negative");
  require_fits(params, static_cast<std::size_t>(context_slots) + query.size());
  const int n = context_slots + static_cast<int>(query.size());
  ThetaVector t = blank(n, params.config.d_model);
  check_tokens(params, query, t.provenance);

  const std::size_t keep = std::min(context.size(), static_cast<std::size_t>(context_slots));
  const auto kept = context.subspan(context.size() - keep);
  t.provenance.truncated_context = context.size() - keep;
  check_tokens(params, kept, t.provenance);
  const int first = context_slots - static_cast<int>(keep);
  for (std::size_t k = 0; k < keep; ++k) {
    const int slot = first + static_cast<int>(k);
    place(params, t, slot, kept[k], slot, SlotKind::Context);
  }
  for (std::size_t j = 0; j < query.size(); ++j) {
    const int slot = context_slots + static_cast<int>(j);
    place(params, t, slot, query[j], slot, SlotKind::Query);
  }
  return t;
}

ThetaVector lift_query(const ModelParams& params, std::span<const TokenId> query, int context_slots,
                       LiftMode mode) {
  require(context_slots >= 0, ErrorKind::Precondition, "context window must be non-negative");
  require_fits(params, static_cast<std::size_t>(context_slots) + query.size());
  const int n = context_slots + static_cast<int>(query.size());
  ThetaVector t = blank(n, params.config.d_model);
  check_tokens(params, query, t.provenance);
  for (std::size_t j = 0; j < query.size(); ++j) {
    const int slot = context_slots + static_cast<int>(j);
    const int position = mode == LiftMode::Aligned ? slot : static_cast<int>(j);
    place(params, t, slot, query[j], position, SlotKind::Query);
  }
  t.provenance.lifted = true;
  t.provenance.lift = mode;
  return t;
}

DeltaVector delta(const ModelParams& params, std::span<const TokenId> context, std::span<const TokenId> query,
                  int context_slots, LiftMode mode) {
  const ThetaVector joint = embed_context_query(params, context, query, context_slots);
  const ThetaVector base = lift_query(params, query, context_slots, mode);
  DeltaVector d;
  d.values = joint.values - base.values;
  d.positions = joint.positions;
  d.width = joint.width;
  d.source = DeltaSource::EmpiricalFromContext;
  return d;
}

std::vector<bool> open_window(std::span<const ThetaVector> joints) {
  require(!joints.empty(), ErrorKind::Precondition, "open_window needs at least one joint vector");
  std::vector<bool> open(joints.front().slots.size(), false);
  for (const auto& j : joints) {
    require(j.slots.size() == open.size(), ErrorKind::DimensionMismatch, "joint vectors differ in layout");
    for (std::size_t i = 0; i < open.size(); ++i) open[i] = open[i] || j.slots[i] != SlotKind::Pad;
  }
  return open;
}

toylm::EmbeddedInput perturbed_input(const ThetaVector& base, const DeltaVector* delta, double t,
                                     const std::vector<bool>& attend) {
  toylm::EmbeddedInput in;
  Vector v = base.values;
  if (delta != nullptr) {
    require(delta->values.size() == v.size(), ErrorKind::DimensionMismatch,
            "delta has " + std::to_string(delta->values.size()) + " entries, theta has " +
                std::to_string(v.size()));
    v += t * delta->values;
  }
  in.rows = Eigen::Map<const Matrix>(v.data(), base.positions, base.width);
  require(attend.empty() || attend.size() == static_cast<std::size_t>(base.positions),
          ErrorKind::DimensionMismatch, "attention mask length does not match theta");
  in.attend = attend;
  return in;
}

}  // namespace suslab::reparam
