#include "suslab/toylm.hpp"

#include <cmath>
#include <random>

#include "suslab/error.hpp"

namespace suslab::toylm {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * u * (1.0 + t);
}

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

struct LayerNormOut {
  Matrix xhat;
  Vector rstd;
  Matrix y;
};

LayerNormOut layer_norm(const Matrix& x, const Vector& g, const Vector& b) {
  LayerNormOut out;
  const auto n = x.rows();
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  out.xhat.resize(n, x.cols());
  out.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() * inv_d;
    const double var = (x.row(i).array() - mean).square().sum() * inv_d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    out.rstd(i) = rstd;
    out.xhat.row(i) = (x.row(i).array() - mean) * rstd;
  }
  out.y = (out.xhat.array().rowwise() * g.transpose().array()).rowwise() + b.transpose().array();
  return out;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& rstd,
                           const Vector& g, Vector* dg, Vector* db) {
  if (dg != nullptr) {
    *dg += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
    *db += dy.colwise().sum().transpose();
  }
  Matrix dxhat = dy.array().rowwise() * g.transpose().array();
  Matrix dx(dy.rows(), dy.cols());
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).sum() * inv_d;
    const double m2 = dxhat.row(i).dot(xhat.row(i)) * inv_d;
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and parameters

void ModelConfig::validate() const {
  require(vocab_size > 3, ErrorKind::Precondition, "vocab_size must exceed the 3 special tokens");
  require(d_model > 0 && n_layers >= 0 && n_heads > 0 && max_len > 0 && mlp_mult > 0,
          ErrorKind::Precondition, "model dimensions must be positive");
  require(d_model % n_heads == 0, ErrorKind::Precondition,
          "d_model=" + std::to_string(d_model) + " not divisible by n_heads=" +
              std::to_string(n_heads));
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  const int v = config.vocab_size;
  const int h = config.mlp_mult * d;
  ModelParams p;
  p.config = config;
  p.tok_emb = Matrix::Zero(v, d);
  p.pos_emb = Matrix::Zero(config.max_len, d);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& L : p.layers) {
    L.ln1_g = Vector::Zero(d);
    L.ln1_b = Vector::Zero(d);
    L.w_qkv = Matrix::Zero(d, 3 * d);
    L.b_qkv = Vector::Zero(3 * d);
    L.w_o = Matrix::Zero(d, d);
    L.b_o = Vector::Zero(d);
    L.ln2_g = Vector::Zero(d);
    L.ln2_b = Vector::Zero(d);
    L.w_fc = Matrix::Zero(d, h);
    L.b_fc = Vector::Zero(h);
    L.w_proj = Matrix::Zero(h, d);
    L.b_proj = Vector::Zero(d);
  }
  p.lnf_g = Vector::Zero(d);
  p.lnf_b = Vector::Zero(d);
  p.w_out = Matrix::Zero(d, v);
  p.b_out = Vector::Zero(v);
  return p;
}

ModelParams ModelParams::random(const ModelConfig& config, std::uint64_t seed, double init_std) {
  ModelParams p = zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](auto& m, double std) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * normal(rng);
  };
  const double proj_std = init_std / std::sqrt(2.0 * std::max(1, config.n_layers));
  fill(p.tok_emb, init_std);
  p.tok_emb.row(Vocabulary::kPad).setZero();
  fill(p.pos_emb, init_std);
  for (auto& L : p.layers) {
    L.ln1_g.setOnes();
    L.ln2_g.setOnes();
    fill(L.w_qkv, init_std);
    fill(L.w_o, proj_std);
    fill(L.w_fc, init_std);
    fill(L.w_proj, proj_std);
  }
  p.lnf_g.setOnes();
  fill(p.w_out, init_std);
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const TensorShape&, const double*, std::size_t k) { n += k; });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit([&ok](const std::string&, const TensorShape&, const double* data, std::size_t k) {
    for (std::size_t i = 0; i < k && ok; ++i) ok = std::isfinite(data[i]);
  });
  return ok;
}

void ModelParams::check_shapes() const {
  config.validate();
  const ModelParams ref = zeros(config);
  std::vector<std::pair<std::string, TensorShape>> expected;
  ref.visit([&](const std::string& name, const TensorShape& s, const double*, std::size_t) {
    expected.emplace_back(name, s);
  });
  std::size_t i = 0;
  require(layers.size() == ref.layers.size(), ErrorKind::DimensionMismatch,
          "layer count " + std::to_string(layers.size()) + " does not match n_layers=" +
              std::to_string(config.n_layers));
  visit([&](const std::string& name, const TensorShape& s, const double*, std::size_t) {
    require(s == expected[i].second, ErrorKind::DimensionMismatch,
            "tensor '" + name + "' has the wrong shape for the configured model");
    ++i;
  });
}

// ---------------------------------------------------------------------------
// Inputs and distributions

EmbeddedInput embed_tokens(const ModelParams& params, std::span<const TokenId> ids, int start_pos) {
  const auto n = static_cast<int>(ids.size());
  require(start_pos >= 0, ErrorKind::Precondition, "negative start position");
  require(start_pos + n <= params.config.max_len, ErrorKind::Length,
          "sequence of length " + std::to_string(start_pos + n) + " exceeds max_len=" +
              std::to_string(params.config.max_len));
  EmbeddedInput in;
  in.rows = Matrix::Zero(n, params.config.d_model);
  in.attend.assign(static_cast<std::size_t>(n), true);
  for (int i = 0; i < n; ++i) {
    const TokenId t = ids[static_cast<std::size_t>(i)];
    require(t >= 0 && t < params.config.vocab_size, ErrorKind::Precondition,
            "token id " + std::to_string(t) + " outside vocabulary");
    if (t == Vocabulary::kPad) {
      in.attend[static_cast<std::size_t>(i)] = false;
      continue;
    }
    in.rows.row(i) = params.tok_emb.row(t) + params.pos_emb.row(start_pos + i);
  }
  return in;
}

NextTokenDistribution NextTokenDistribution::from_logits(const Vector& logits) {
  NextTokenDistribution d;
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  d.log_probs = logits.array() - lse;
  d.probs = d.log_probs.array().exp();
  return d;
}

NextTokenDistribution NextTokenDistribution::from_probs(const Vector& probs) {
  NextTokenDistribution d;
  d.probs = probs;
  d.log_probs = probs.array().log();
  return d;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct LayerCache {
  Matrix x_in;
  LayerNormOut ln1;
  Matrix qkv;
  std::vector<Matrix> attn;  // per head, T x T
  Matrix att;
  Matrix x_mid;
  LayerNormOut ln2;
  Matrix u;
  Matrix act;
};

struct InferenceSession::Cache {
  std::vector<Eigen::Index> kept;  // original row index of each compacted row
  std::size_t full_length = 0;
  std::vector<LayerCache> layers;
  Matrix x_out;
  LayerNormOut lnf;  // over the rows that feed the output head
  Matrix logits;
  bool all_rows = false;
};

namespace {

using Cache = InferenceSession::Cache;

void validate_input(const ModelParams& params, const EmbeddedInput& input) {
  const auto& cfg = params.config;
  require(input.length() >= 1, ErrorKind::Precondition, "input has no positions");
  require(static_cast<int>(input.length()) <= cfg.max_len, ErrorKind::Length,
          "input length " + std::to_string(input.length()) + " exceeds max_len=" +
              std::to_string(cfg.max_len));
  require(input.rows.cols() == cfg.d_model, ErrorKind::DimensionMismatch,
          "input width " + std::to_string(input.rows.cols()) + " does not match d=" +
              std::to_string(cfg.d_model));
  require(input.attend.empty() || input.attend.size() == input.length(), ErrorKind::Precondition,
          "attend mask length does not match input length");
  require(input.attended(input.length() - 1), ErrorKind::Precondition,
          "final input position must not be PAD");
  require(input.rows.allFinite(), ErrorKind::Numeric, "non-finite value in input embeddings");
}

void forward_into(const ModelParams& params, const Matrix& x0, bool all_rows, Cache& c) {
  const auto& cfg = params.config;
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto T = x0.rows();

  Matrix x = x0;
  c.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& W = params.layers[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.ln1 = layer_norm(x, W.ln1_g, W.ln1_b);
    lc.qkv = (lc.ln1.y * W.w_qkv).rowwise() + W.b_qkv.transpose();
    lc.att.resize(T, d);
    lc.attn.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto q = lc.qkv.middleCols(h * hd, hd);
      auto k = lc.qkv.middleCols(d + h * hd, hd);
      auto v = lc.qkv.middleCols(2 * d + h * hd, hd);
      Matrix s = (q * k.transpose()) * scale;
      Matrix& p = lc.attn[static_cast<std::size_t>(h)];
      p = Matrix::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double e = std::exp(s(i, j) - mx);
          p(i, j) = e;
          z += e;
        }
        p.row(i).head(i + 1) /= z;
      }
      lc.att.middleCols(h * hd, hd) = p * v;
    }
    x = x + ((lc.att * W.w_o).rowwise() + W.b_o.transpose());
    lc.x_mid = x;
    lc.ln2 = layer_norm(x, W.ln2_g, W.ln2_b);
    lc.u = (lc.ln2.y * W.w_fc).rowwise() + W.b_fc.transpose();
    lc.act = lc.u.unaryExpr([](double u) { return gelu(u); });
    x = x + ((lc.act * W.w_proj).rowwise() + W.b_proj.transpose());
  }
  c.x_out = x;
  c.all_rows = all_rows;
  if (all_rows) {
    c.lnf = layer_norm(x, params.lnf_g, params.lnf_b);
  } else {
    c.lnf = layer_norm(x.bottomRows(1), params.lnf_g, params.lnf_b);
  }
  c.logits = (c.lnf.y * params.w_out).rowwise() + params.b_out.transpose();
}

// d_hidden: cotangent on the final normalized rows (rows = lnf rows).
// Returns the gradient w.r.t. the compacted input rows; accumulates parameter
// gradients into `grads` when non-null.
Matrix backward_from(const ModelParams& params, const Cache& c, const Matrix& d_hidden,
                     ModelParams* grads) {
  const auto& cfg = params.config;
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto T = c.x_out.rows();

  Matrix dx = Matrix::Zero(T, d);
  {
    Vector* dg = grads ? &grads->lnf_g : nullptr;
    Vector* db = grads ? &grads->lnf_b : nullptr;
    Matrix dxf = layer_norm_backward(d_hidden, c.lnf.xhat, c.lnf.rstd, params.lnf_g, dg, db);
    if (c.all_rows) {
      dx = dxf;
    } else {
      dx.bottomRows(1) = dxf;
    }
  }

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& W = params.layers[li];
    const auto& lc = c.layers[li];
    LayerWeights* G = grads ? &grads->layers[li] : nullptr;

    // MLP block: x_out = x_mid + gelu(ln2(x_mid) W_fc + b_fc) W_proj + b_proj
    Matrix dact = dx * W.w_proj.transpose();
    if (G) {
      G->w_proj.noalias() += lc.act.transpose() * dx;
      G->b_proj += dx.colwise().sum().transpose();
    }
    Matrix du = dact.array() * lc.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
    if (G) {
      G->w_fc.noalias() += lc.ln2.y.transpose() * du;
      G->b_fc += du.colwise().sum().transpose();
    }
    Matrix da2 = du * W.w_fc.transpose();
    dx += layer_norm_backward(da2, lc.ln2.xhat, lc.ln2.rstd, W.ln2_g, G ? &G->ln2_g : nullptr,
                              G ? &G->ln2_b : nullptr);

    // Attention block: x_mid = x_in + attn(ln1(x_in)) W_o + b_o
    Matrix datt = dx * W.w_o.transpose();
    if (G) {
      G->w_o.noalias() += lc.att.transpose() * dx;
      G->b_o += dx.colwise().sum().transpose();
    }
    Matrix dqkv = Matrix::Zero(T, 3 * d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Matrix& p = lc.attn[static_cast<std::size_t>(h)];
      auto q = lc.qkv.middleCols(h * hd, hd);
      auto k = lc.qkv.middleCols(d + h * hd, hd);
      auto v = lc.qkv.middleCols(2 * d + h * hd, hd);
      auto dout = datt.middleCols(h * hd, hd);
      Matrix dp = dout * v.transpose();
      dqkv.middleCols(2 * d + h * hd, hd) = p.transpose() * dout;
      Matrix ds(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double inner = p.row(i).dot(dp.row(i));
        ds.row(i) = p.row(i).array() * (dp.row(i).array() - inner);
      }
      ds *= scale;
      dqkv.middleCols(h * hd, hd) = ds * k;
      dqkv.middleCols(d + h * hd, hd) = ds.transpose() * q;
    }
    if (G) {
      G->w_qkv.noalias() += lc.ln1.y.transpose() * dqkv;
      G->b_qkv += dqkv.colwise().sum().transpose();
    }
    Matrix da1 = dqkv * W.w_qkv.transpose();
    dx += layer_norm_backward(da1, lc.ln1.xhat, lc.ln1.rstd, W.ln1_g, G ? &G->ln1_g : nullptr,
                              G ? &G->ln1_b : nullptr);
  }
  return dx;
}

}  // namespace

InferenceSession::InferenceSession(const ModelParams& params, const EmbeddedInput& input)
    : params_(&params), cache_(std::make_unique<Cache>()), length_(input.length()) {
  validate_input(params, input);
  cache_->full_length = input.length();
  for (std::size_t i = 0; i < input.length(); ++i) {
    if (input.attended(i)) cache_->kept.push_back(static_cast<Eigen::Index>(i));
  }
  Matrix x0(static_cast<Eigen::Index>(cache_->kept.size()), params.config.d_model);
  for (std::size_t r = 0; r < cache_->kept.size(); ++r) {
    x0.row(static_cast<Eigen::Index>(r)) = input.rows.row(cache_->kept[r]);
  }
  forward_into(params, x0, /*all_rows=*/false, *cache_);
  dist_ = NextTokenDistribution::from_logits(cache_->logits.row(0).transpose());
  require(dist_.probs.allFinite(), ErrorKind::Numeric, "non-finite next-token distribution");
}

InferenceSession::~InferenceSession() = default;
InferenceSession::InferenceSession(InferenceSession&&) noexcept = default;
InferenceSession& InferenceSession::operator=(InferenceSession&&) noexcept = default;

int InferenceSession::width() const { return params_->config.d_model; }

InputGradient InferenceSession::input_gradient_from_hidden(const Vector& d_hidden) const {
  Matrix dh = d_hidden.transpose();
  Matrix dcompact = backward_from(*params_, *cache_, dh, nullptr);
  InputGradient g = Matrix::Zero(static_cast<Eigen::Index>(length_), params_->config.d_model);
  for (std::size_t r = 0; r < cache_->kept.size(); ++r) {
    g.row(cache_->kept[r]) = dcompact.row(static_cast<Eigen::Index>(r));
  }
  return g;
}

InputGradient InferenceSession::input_gradient(TokenId answer) const {
  require(answer >= 0 && answer < params_->config.vocab_size, ErrorKind::Precondition,
          "answer id " + std::to_string(answer) + " outside vocabulary");
  // d log softmax(z)_a / dz = e_a - p, pulled back through the output head.
  Vector d_hidden = params_->w_out.col(answer) - params_->w_out * dist_.probs;
  return input_gradient_from_hidden(d_hidden);
}

Matrix InferenceSession::hidden_jacobian() const {
  const int d = params_->config.d_model;
  const auto D = static_cast<Eigen::Index>(length_) * d;
  Matrix jac(d, D);
  for (int j = 0; j < d; ++j) {
    Vector e = Vector::Unit(d, j);
    InputGradient g = input_gradient_from_hidden(e);
    jac.row(j) = Eigen::Map<const Eigen::RowVectorXd>(g.data(), D);
  }
  return jac;
}

Matrix InferenceSession::score_matrix() const {
  const Matrix jac = hidden_jacobian();
  // g_a = jac^T (w_out[:, a] - w_out p)
  Matrix centered = params_->w_out.transpose();
  const Eigen::RowVectorXd mean = (params_->w_out * dist_.probs).transpose();
  centered.rowwise() -= mean;
  return centered * jac;
}

NextTokenDistribution forward(const ModelParams& params, const EmbeddedInput& input) {
  return InferenceSession(params, input).distribution();
}

double log_prob(const ModelParams& params, const EmbeddedInput& input, TokenId answer) {
  require(answer >= 0 && answer < params.config.vocab_size, ErrorKind::Precondition,
          "answer id " + std::to_string(answer) + " outside vocabulary");
  return forward(params, input).log_probs(answer);
}

InputGradient grad_logprob_wrt_inputs(const ModelParams& params, const EmbeddedInput& input,
                                      TokenId answer) {
  return InferenceSession(params, input).input_gradient(answer);
}

SequenceLoss sequence_loss(const ModelParams& params, std::span<const TokenId> ids, int start_pos,
                           ModelParams* grads) {
  SequenceLoss out;
  if (ids.size() < 2) return out;
  // The last token is only a target.
  const auto inputs = ids.first(ids.size() - 1);
  EmbeddedInput in = embed_tokens(params, inputs, start_pos);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    require(in.attended(i), ErrorKind::Precondition, "PAD inside a training sequence");
  }
  Cache c;
  forward_into(params, in.rows, /*all_rows=*/true, c);
  const auto T = c.logits.rows();
  Matrix dlogits(T, params.config.vocab_size);
  for (Eigen::Index i = 0; i < T; ++i) {
    const TokenId target = ids[static_cast<std::size_t>(i) + 1];
    auto dist = NextTokenDistribution::from_logits(c.logits.row(i).transpose());
    out.total -= dist.log_probs(target);
    dlogits.row(i) = dist.probs.transpose();
    dlogits(i, target) -= 1.0;
  }
  out.count = static_cast<std::size_t>(T);
  if (grads == nullptr) return out;

  grads->w_out.noalias() += c.lnf.y.transpose() * dlogits;
  grads->b_out += dlogits.colwise().sum().transpose();
  Matrix dh = dlogits * params.w_out.transpose();
  Matrix dx = backward_from(params, c, dh, grads);
  for (Eigen::Index i = 0; i < T; ++i) {
    const TokenId t = inputs[static_cast<std::size_t>(i)];
    grads->tok_emb.row(t) += dx.row(i);
    grads->pos_emb.row(start_pos + i) += dx.row(i);
  }
  grads->tok_emb.row(Vocabulary::kPad).setZero();
  return out;
}

}  // namespace suslab::toylm
