#include "suslab/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "suslab/error.hpp"
#include "suslab/tensor_file.hpp"

namespace suslab::fisher {
namespace {

void count_forward(PassCounter* c) {
  if (c != nullptr) ++c->forwards;
}
void count_backward(PassCounter* c, std::size_t n = 1) {
  if (c != nullptr) c->backwards += n;
}

class TransformerSession final : public ScoreSession {
 public:
  TransformerSession(const toylm::ModelParams& params, toylm::EmbeddedInput input, PassCounter* counter)
      : session_(params, input), counter_(counter) {
    count_forward(counter_);
  }
  const NextTokenDistribution& distribution() const override { return session_.distribution(); }
  Vector score(TokenId answer) override {
    count_backward(counter_);
    const auto g = session_.input_gradient(answer);
    return Eigen::Map<const Vector>(g.data(), g.size());
  }
  Matrix score_matrix() override {
    // One backward pass per hidden unit.
    count_backward(counter_, static_cast<std::size_t>(session_.width()));
    return session_.score_matrix();
  }

 private:
  toylm::InferenceSession session_;
  PassCounter* counter_;
};

class LinearSession final : public ScoreSession {
 public:
  LinearSession(const Matrix& w, const Vector& b, const Vector& theta, PassCounter* counter)
      : w_(w), counter_(counter) {
    dist_ = NextTokenDistribution::from_logits(w * theta + b);
    count_forward(counter_);
  }
  const NextTokenDistribution& distribution() const override { return dist_; }
  Vector score(TokenId a) override {
    count_backward(counter_);
    return w_.row(a).transpose() - w_.transpose() * dist_.probs;
  }
  Matrix score_matrix() override {
    count_backward(counter_);
    const Eigen::RowVectorXd mean = (w_.transpose() * dist_.probs).transpose();
    return w_.rowwise() - mean;
  }

 private:
  const Matrix& w_;
  PassCounter* counter_;
  NextTokenDistribution dist_;
};

void require_theta(const ScoreFamily& f, const Vector& theta) {
  require(theta.size() == f.dim(), ErrorKind::DimensionMismatch,
          "theta has " + std::to_string(theta.size()) + " entries, family expects " + std::to_string(f.dim()));
}

}  // namespace

TransformerFamily::TransformerFamily(const toylm::ModelParams& params, int positions, std::vector<bool> attend)
    : params_(&params), positions_(positions), attend_(std::move(attend)) {
  require(positions >= 1, ErrorKind::Precondition, "family needs at least one position");
  require(attend_.empty() || attend_.size() == static_cast<std::size_t>(positions),
          ErrorKind::DimensionMismatch, "attention mask length does not match positions");
}

TransformerFamily::TransformerFamily(const toylm::ModelParams& params, const reparam::ThetaVector& like)
    : TransformerFamily(params, like.positions, like.input().attend) {}

Eigen::Index TransformerFamily::dim() const {
  return static_cast<Eigen::Index>(positions_) * params_->config.d_model;
}

std::size_t TransformerFamily::vocab_size() const { return static_cast<std::size_t>(params_->config.vocab_size); }

std::unique_ptr<ScoreSession> TransformerFamily::open(const Vector& theta, PassCounter* counter) const {
  require_theta(*this, theta);
  toylm::EmbeddedInput in;
  in.rows = Eigen::Map<const Matrix>(theta.data(), positions_, params_->config.d_model);
  in.attend = attend_;
  return std::make_unique<TransformerSession>(*params_, std::move(in), counter);
}

LinearSoftmaxFamily::LinearSoftmaxFamily(Matrix weight, Vector bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
  require(weight_.rows() == bias_.size() && weight_.rows() >= 2, ErrorKind::DimensionMismatch,
          "linear head needs matching weight rows and bias, at least two answers");
}

std::unique_ptr<ScoreSession> LinearSoftmaxFamily::open(const Vector& theta, PassCounter* counter) const {
  require_theta(*this, theta);
  return std::make_unique<LinearSession>(weight_, bias_, theta, counter);
}

double kl_divergence(const NextTokenDistribution& p, const NextTokenDistribution& r) {
  require(p.size() == r.size(), ErrorKind::DimensionMismatch,
          "KL over vocabularies of size " + std::to_string(p.size()) + " and " + std::to_string(r.size()));
  double kl = 0.0;
  for (Eigen::Index a = 0; a < p.probs.size(); ++a) {
    const double pa = p.probs(a);
    if (pa <= 0.0) continue;
    if (r.probs(a) <= 0.0) return std::numeric_limits<double>::infinity();
    kl += pa * (p.log_probs(a) - r.log_probs(a));
  }
  return kl;
}

FisherMatrix fisher_matrix_exact(const ScoreFamily& family, const Vector& theta, Eigen::Index cap,
                                 PassCounter* counter) {
  const Eigen::Index D = family.dim();
  require(D <= cap, ErrorKind::CapExceeded,
          "exact Fisher matrix of order " + std::to_string(D) + " exceeds the cap of " + std::to_string(cap) +
              "; use fisher_trace_topk for large inputs");
  auto session = family.open(theta, counter);
  const Matrix g = session->score_matrix();
  const Vector& p = session->distribution().probs;
  FisherMatrix j;
  j.values = g.transpose() * p.asDiagonal() * g;
  j.values = 0.5 * (j.values + j.values.transpose()).eval();
  return j;
}

double min_eigenvalue(const FisherMatrix& j) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(j.values, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

void save_fisher_matrix(const FisherMatrix& j, const std::filesystem::path& path) {
  TensorContainer c;
  c.kind = "fisher";
  c.version = 1;
  c.fields["dim"] = static_cast<std::int64_t>(j.dim());
  c.fields["query_id"] = j.query_id;
  c.fields["k"] = j.k ? std::int64_t{*j.k} : std::int64_t{-1};
  c.fields["covered_mass"] = j.covered_mass;
  c.tensors.push_back(TensorRecord{"fisher", {j.dim(), j.dim()},
                                   std::vector<double>(j.values.data(), j.values.data() + j.values.size())});
  write_tensor_container(path, c);
}

FisherMatrix load_fisher_matrix(const std::filesystem::path& path) {
  const auto c = read_tensor_container(path);
  require(c.kind == "fisher", ErrorKind::MalformedHeader, "'" + path.string() + "' is not a Fisher dump");
  const auto dim = c.int_field("dim");
  const auto* t = c.find("fisher");
  require(t != nullptr, ErrorKind::MalformedHeader, "Fisher dump lacks its matrix");
  require(t->shape == std::vector<std::int64_t>{dim, dim}, ErrorKind::DimensionMismatch,
          "Fisher matrix shape disagrees with header dim " + std::to_string(dim));
  FisherMatrix j;
  j.values = Eigen::Map<const Matrix>(t->values.data(), dim, dim);
  if (auto it = c.fields.find("query_id"); it != c.fields.end() && std::holds_alternative<std::string>(it->second)) {
    j.query_id = std::get<std::string>(it->second);
  }
  if (const auto k = c.int_field("k"); k >= 0) j.k = static_cast<int>(k);
  if (auto it = c.fields.find("covered_mass"); it != c.fields.end() && std::holds_alternative<double>(it->second)) {
    j.covered_mass = std::get<double>(it->second);
  }
  return j;
}

std::vector<TokenId> rank_answers(const NextTokenDistribution& dist) {
  std::vector<TokenId> order(dist.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenId a, TokenId b) { return dist.probs(a) > dist.probs(b); });
  return order;
}

TraceEstimate fisher_trace_topk(const ScoreFamily& family, const Vector& theta, int k, PassCounter* counter) {
  require(k >= 1 && static_cast<std::size_t>(k) <= family.vocab_size(), ErrorKind::Precondition,
          "K=" + std::to_string(k) + " outside [1, " + std::to_string(family.vocab_size()) + "]");
  auto session = family.open(theta, counter);
  const auto& dist = session->distribution();
  std::vector<TokenId> top = rank_answers(dist);
  top.resize(static_cast<std::size_t>(k));
  // Reduce in token-id order so the sum does not depend on ranking.
  std::sort(top.begin(), top.end());
  TraceEstimate est;
  est.k = k;
  for (TokenId a : top) {
    const double pa = dist.probs(a);
    est.value += pa * session->score(a).squaredNorm();
    est.covered_mass += pa;
  }
  est.covered_mass = std::min(1.0, est.covered_mass);
  return est;
}

TaylorGap taylor_gap(const ScoreFamily& family, const Vector& theta, const Vector& delta, double t) {
  require(delta.size() == theta.size(), ErrorKind::DimensionMismatch, "delta and theta differ in length");
  auto base = family.open(theta, nullptr);
  const Vector shifted = theta + t * delta;
  require(shifted.allFinite(), ErrorKind::Numeric, "perturbed input is not finite");
  auto moved = family.open(shifted, nullptr);
  TaylorGap out;
  out.kl = kl_divergence(moved->distribution(), base->distribution());
  const Vector proj = base->score_matrix() * (t * delta);
  out.quad = 0.5 * base->distribution().probs.dot(proj.cwiseAbs2());
  out.gap = std::abs(out.kl - out.quad);
  return out;
}

double quadratic_form(const FisherMatrix& j, const Vector& delta) {
  require(delta.size() == j.dim(), ErrorKind::DimensionMismatch, "delta does not match Fisher order");
  return delta.dot(j.values * delta);
}

double quadratic_expectation_closed_form(const FisherMatrix& j, const Vector& m, const Matrix& s) {
  const Eigen::Index D = j.dim();
  require(m.size() == D && s.rows() == D && s.cols() == D, ErrorKind::DimensionMismatch,
          "mean or covariance does not match Fisher order " + std::to_string(D));
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  require((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale, ErrorKind::Precondition,
          "covariance is not symmetric");
  return (s.cwiseProduct(j.values.transpose())).sum() + m.dot(j.values * m);
}

}  // namespace suslab::fisher
