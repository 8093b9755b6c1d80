#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "suslab/vocab.hpp"

// A small decoder-only transformer (pre-LayerNorm, GELU MLP, untied output
// head) evaluated in double precision. The model reads a matrix of input
// embeddings rather than token ids so that gradients with respect to the
// embeddings themselves are first-class.
namespace suslab::toylm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int max_len = 64;
  int mlp_mult = 4;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  Vector ln1_g, ln1_b;
  Matrix w_qkv;  // d x 3d, columns [q | k | v], heads contiguous inside each block
  Vector b_qkv;
  Matrix w_o;  // d x d
  Vector b_o;
  Vector ln2_g, ln2_b;
  Matrix w_fc;  // d x (mlp_mult*d)
  Vector b_fc;
  Matrix w_proj;  // (mlp_mult*d) x d
  Vector b_proj;
};

/// Shape of one named tensor as stored in checkpoints.
struct TensorShape {
  std::vector<std::int64_t> dims;
  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto x : dims) n *= x;
    return n;
  }
  bool operator==(const TensorShape&) const = default;
};

struct ModelParams {
  ModelConfig config;
  Matrix tok_emb;  // vocab x d, PAD row held at zero
  Matrix pos_emb;  // max_len x d
  std::vector<LayerWeights> layers;
  Vector lnf_g, lnf_b;
  Matrix w_out;  // d x vocab
  Vector b_out;

  /// Every tensor zero, LayerNorm gains included.
  static ModelParams zeros(const ModelConfig& config);
  /// Gaussian weights with standard deviation `init_std`, unit LayerNorm gains.
  static ModelParams random(const ModelConfig& config, std::uint64_t seed, double init_std = 0.02);

  /// Calls f(name, shape, data, numel) for every tensor in a fixed order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Throws DimensionMismatch when any tensor disagrees with `config`.
  void check_shapes() const;

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f);
};

/// Input to the model: one row per position (token + positional embedding
/// already summed). Rows whose `attend` flag is false are PAD slots: they are
/// excluded from attention and receive zero gradient.
struct EmbeddedInput {
  Matrix rows;
  std::vector<bool> attend;  // empty means every row is attended

  std::size_t length() const { return static_cast<std::size_t>(rows.rows()); }
  bool attended(std::size_t i) const { return attend.empty() || attend[i]; }
};

/// Token + positional embedding rows for `ids` placed at positions
/// start_pos, start_pos+1, ... PAD ids produce zero, unattended rows.
EmbeddedInput embed_tokens(const ModelParams& params, std::span<const TokenId> ids, int start_pos = 0);

struct NextTokenDistribution {
  Vector probs;
  Vector log_probs;

  std::size_t size() const { return static_cast<std::size_t>(probs.size()); }
  static NextTokenDistribution from_logits(const Vector& logits);
  static NextTokenDistribution from_probs(const Vector& probs);
};

using InputGradient = Matrix;  // length x d

/// Distribution over the token following the last position of `input`.
NextTokenDistribution forward(const ModelParams& params, const EmbeddedInput& input);

/// log p(answer | input), in nats.
double log_prob(const ModelParams& params, const EmbeddedInput& input, TokenId answer);

/// d log p(answer | input) / d input, with all weights held constant.
InputGradient grad_logprob_wrt_inputs(const ModelParams& params, const EmbeddedInput& input,
                                      TokenId answer);

/// One forward pass whose activations are kept so that many input gradients
/// (one per answer token) can be taken without re-running the forward pass.
class InferenceSession {
 public:
  InferenceSession(const ModelParams& params, const EmbeddedInput& input);
  ~InferenceSession();
  InferenceSession(InferenceSession&&) noexcept;
  InferenceSession& operator=(InferenceSession&&) noexcept;

  const NextTokenDistribution& distribution() const { return dist_; }
  std::size_t length() const { return length_; }
  int width() const;

  /// d log p(answer) / d input.
  InputGradient input_gradient(TokenId answer) const;

  /// Backpropagates an arbitrary cotangent on the final normalized hidden
  /// state (the vector fed into the output projection).
  InputGradient input_gradient_from_hidden(const Vector& d_hidden) const;

  /// Jacobian of the final hidden state w.r.t. the flattened input, shape
  /// d x (length*d). Costs d backward passes.
  Matrix hidden_jacobian() const;

  /// Rows g_a^T for every answer a, shape vocab x (length*d), computed
  /// through hidden_jacobian(). Exact, not truncated.
  Matrix score_matrix() const;

  struct Cache;  // activations; defined in toylm.cpp

 private:
  const ModelParams* params_;
  std::unique_ptr<Cache> cache_;
  NextTokenDistribution dist_;
  std::size_t length_ = 0;
};

struct SequenceLoss {
  double total = 0.0;  // summed cross-entropy, nats
  std::size_t count = 0;
};

/// Next-token cross-entropy of `ids` (predicting ids[1..] from prefixes) with
/// the sequence placed at `start_pos`. Accumulates parameter gradients of the
/// summed loss into `grads` when non-null.
SequenceLoss sequence_loss(const ModelParams& params, std::span<const TokenId> ids, int start_pos,
                           ModelParams* grads);

// ---------------------------------------------------------------------------

template <class Self, class F>
void ModelParams::visit_impl(Self& self, F& f) {
  auto mat = [&f](const std::string& name, auto& m) {
    f(name, TensorShape{{m.rows(), m.cols()}}, m.data(), static_cast<std::size_t>(m.size()));
  };
  auto vec = [&f](const std::string& name, auto& v) {
    f(name, TensorShape{{v.size()}}, v.data(), static_cast<std::size_t>(v.size()));
  };
  mat("tok_emb", self.tok_emb);
  mat("pos_emb", self.pos_emb);
  for (std::size_t l = 0; l < self.layers.size(); ++l) {
    auto& L = self.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    vec(p + "ln1_g", L.ln1_g);
    vec(p + "ln1_b", L.ln1_b);
    mat(p + "w_qkv", L.w_qkv);
    vec(p + "b_qkv", L.b_qkv);
    mat(p + "w_o", L.w_o);
    vec(p + "b_o", L.b_o);
    vec(p + "ln2_g", L.ln2_g);
    vec(p + "ln2_b", L.ln2_b);
    mat(p + "w_fc", L.w_fc);
    vec(p + "b_fc", L.b_fc);
    mat(p + "w_proj", L.w_proj);
    vec(p + "b_proj", L.b_proj);
  }
  vec("lnf_g", self.lnf_g);
  vec("lnf_b", self.lnf_b);
  mat("w_out", self.w_out);
  vec("b_out", self.b_out);
}

}  // namespace suslab::toylm
