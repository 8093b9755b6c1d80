#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "suslab/reparam.hpp"
#include "suslab/toylm.hpp"

// Fisher information of a next-token distribution with respect to a flat
// input index θ: J(θ) = Σ_a p(a) g_a g_aᵀ with g_a = ∂ log p(a) / ∂θ.
namespace suslab::fisher {

using toylm::Matrix;
using toylm::NextTokenDistribution;
using toylm::Vector;

/// Model passes spent by an estimator. Every forward or backward pass of the
/// underlying family increments exactly one counter.
struct PassCounter {
  std::size_t forwards = 0;
  std::size_t backwards = 0;

  PassCounter& operator+=(const PassCounter& o) {
    forwards += o.forwards;
    backwards += o.backwards;
    return *this;
  }
  bool operator==(const PassCounter&) const = default;
};

/// One forward pass at a fixed θ; scores are taken from its cached state.
class ScoreSession {
 public:
  virtual ~ScoreSession() = default;
  virtual const NextTokenDistribution& distribution() const = 0;
  /// g_a, one backward pass.
  virtual Vector score(TokenId answer) = 0;
  /// All g_a as rows (|Σ| x D). Counts whatever passes the family needs.
  virtual Matrix score_matrix() = 0;
};

/// A family of next-token distributions indexed by θ ∈ R^D.
class ScoreFamily {
 public:
  virtual ~ScoreFamily() = default;
  virtual Eigen::Index dim() const = 0;
  virtual std::size_t vocab_size() const = 0;
  /// One forward pass, counted in `counter` when non-null. Later backward
  /// passes through the session are charged to the same counter.
  virtual std::unique_ptr<ScoreSession> open(const Vector& theta, PassCounter* counter) const = 0;
};

/// The transformer read at a fixed layout: θ is the flattened input rows.
class TransformerFamily final : public ScoreFamily {
 public:
  /// `attend` empty means every slot is attended.
  TransformerFamily(const toylm::ModelParams& params, int positions, std::vector<bool> attend = {});
  /// Layout and mask taken from θ's slots.
  TransformerFamily(const toylm::ModelParams& params, const reparam::ThetaVector& like);

  Eigen::Index dim() const override;
  std::size_t vocab_size() const override;
  std::unique_ptr<ScoreSession> open(const Vector& theta, PassCounter* counter) const override;

  const toylm::ModelParams& params() const { return *params_; }
  const std::vector<bool>& attend() const { return attend_; }

 private:
  const toylm::ModelParams* params_;
  int positions_;
  std::vector<bool> attend_;
};

/// logits = W θ + b. With W = [[1],[0]], b = 0 the Fisher is p(1-p).
class LinearSoftmaxFamily final : public ScoreFamily {
 public:
  LinearSoftmaxFamily(Matrix weight, Vector bias);

  Eigen::Index dim() const override { return weight_.cols(); }
  std::size_t vocab_size() const override { return static_cast<std::size_t>(weight_.rows()); }
  std::unique_ptr<ScoreSession> open(const Vector& theta, PassCounter* counter) const override;

 private:
  Matrix weight_;
  Vector bias_;
};

/// Σ_a p(a)(log p(a) - log r(a)), with 0·log(0/x) = 0. Returns +infinity when
/// some p(a) > 0 meets r(a) = 0. Throws DimensionMismatch on vocabulary mismatch.
double kl_divergence(const NextTokenDistribution& p, const NextTokenDistribution& r);

inline constexpr Eigen::Index kDefaultDimensionCap = 4096;

struct FisherMatrix {
  Matrix values;  // D x D, symmetric
  std::string query_id;
  std::optional<int> k;        // nullopt: exact over the full vocabulary
  double covered_mass = 1.0;

  Eigen::Index dim() const { return values.rows(); }
  double trace() const { return values.trace(); }
};

/// Σ over every answer of p(a) g_a g_aᵀ. Throws CapExceeded when D > cap.
FisherMatrix fisher_matrix_exact(const ScoreFamily& family, const Vector& theta,
                                 Eigen::Index cap = kDefaultDimensionCap, PassCounter* counter = nullptr);

/// Smallest eigenvalue (self-adjoint solver); used for PSD checks.
double min_eigenvalue(const FisherMatrix& j);

/// Dumps J in the tensor container format (kind "fisher").
void save_fisher_matrix(const FisherMatrix& j, const std::filesystem::path& path);
FisherMatrix load_fisher_matrix(const std::filesystem::path& path);

struct TraceEstimate {
  double value = 0.0;
  int k = 0;
  double covered_mass = 0.0;
};

/// Σ_{k<=K} p(a_k) ‖g_{a_k}‖² over the K most probable answers (ties by
/// ascending id), unrenormalized. One forward plus K backward passes.
TraceEstimate fisher_trace_topk(const ScoreFamily& family, const Vector& theta, int k,
                                PassCounter* counter = nullptr);

/// Answers ordered by descending probability, ties by ascending id.
std::vector<TokenId> rank_answers(const NextTokenDistribution& dist);

struct TaylorGap {
  double kl = 0.0;
  double quad = 0.0;
  double gap = 0.0;
};

/// kl = KL(f(θ+tδ) ‖ f(θ)), quad = ½ t² δᵀJ(θ)δ computed as ½ Σ_a p(a)(g_aᵀ tδ)².
TaylorGap taylor_gap(const ScoreFamily& family, const Vector& theta, const Vector& delta, double t);

/// δᵀ J δ for an explicit matrix.
double quadratic_form(const FisherMatrix& j, const Vector& delta);

/// E[δᵀJδ] for δ ~ (m, S): Tr(S J) + mᵀ J m. Throws DimensionMismatch or
/// Precondition (S not symmetric within 1e-10 relative).
double quadratic_expectation_closed_form(const FisherMatrix& j, const Vector& m, const Matrix& s);

}  // namespace suslab::fisher
