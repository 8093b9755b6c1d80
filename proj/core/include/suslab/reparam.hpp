#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "suslab/toylm.hpp"

// The embedding index θ of a token string and the perturbation δ a context
// induces on it. Joint inputs use a fixed window of L_c context slots
// followed by the query slots; contexts are PAD-left and truncated from the
// left, so the query always ends the window.
namespace suslab::reparam {

using toylm::Matrix;
using toylm::ModelParams;
using toylm::Vector;

enum class SlotKind { Pad, Context, Query };

/// How θ(q) is lifted into the joint layout.
///   Aligned: query tokens re-embedded at positions L_c.., so δ's query block is zero.
///   Raw:     θ(q) zero-padded on the left; δ's query block holds positional offsets.
enum class LiftMode { Aligned, Raw };

struct ThetaProvenance {
  std::size_t unk_tokens = 0;          // UNK ids among the embedded tokens
  std::size_t truncated_context = 0;   // context tokens dropped from the left
  bool lifted = false;
  LiftMode lift = LiftMode::Aligned;
};

/// Flattened positions x width, row-major. PAD slots are zero.
struct ThetaVector {
  Vector values;
  int positions = 0;
  int width = 0;
  std::vector<SlotKind> slots;
  ThetaProvenance provenance;

  Eigen::Index dim() const { return values.size(); }
  /// Model input; PAD slots are unattended.
  toylm::EmbeddedInput input() const;
  /// Row view of one slot.
  Eigen::Map<const Eigen::RowVectorXd> row(int slot) const;
};

enum class DeltaSource { EmpiricalFromContext, SyntheticGaussian, SyntheticFixed };

struct DeltaVector {
  Vector values;
  int positions = 0;
  int width = 0;
  DeltaSource source = DeltaSource::SyntheticFixed;

  static DeltaVector gaussian(int positions, int width, std::uint64_t seed, double stddev = 1.0);
  static DeltaVector fixed(Vector values, int positions, int width);
};

const char* to_string(DeltaSource s);  // "empirical-from-context" | "synthetic-gaussian" | "synthetic-fixed"

/// Query tokens at positions 0..|q|-1. Throws Length when |q| > max_len.
ThetaVector embed_query(const ModelParams& params, std::span<const TokenId> query);

/// Layout [L_c context slots][query slots], slot k at position k.
/// Requires L_c + |q| <= max_len.
ThetaVector embed_context_query(const ModelParams& params, std::span<const TokenId> context,
                                std::span<const TokenId> query, int context_slots);

/// θ(q) in the joint layout with all context slots PAD.
ThetaVector lift_query(const ModelParams& params, std::span<const TokenId> query, int context_slots,
                       LiftMode mode = LiftMode::Aligned);

/// θ(c⊕q) - lift_query(q). Satisfies delta + lifted = joint exactly.
DeltaVector delta(const ModelParams& params, std::span<const TokenId> context,
                  std::span<const TokenId> query, int context_slots, LiftMode mode = LiftMode::Aligned);

/// Union of non-PAD slots over joint vectors sharing one layout. The lifted
/// θ(q) is evaluated with these slots attended (at value zero) so that the
/// base point and every θ(q)+tδ share one attention pattern.
std::vector<bool> open_window(std::span<const ThetaVector> joints);

/// base + t*delta with an explicit attention mask (empty: every slot attended).
toylm::EmbeddedInput perturbed_input(const ThetaVector& base, const DeltaVector* delta, double t,
                                     const std::vector<bool>& attend);

}  // namespace suslab::reparam
