#include "suslab/toylm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "suslab/error.hpp"

namespace suslab::toylm {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 24;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_len = 8;
  return c;
}

EmbeddedInput random_input(const ModelConfig& c, int length, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  EmbeddedInput in;
  in.rows.resize(length, c.d_model);
  for (Eigen::Index i = 0; i < in.rows.size(); ++i) in.rows.data()[i] = normal(rng);
  return in;
}

TEST(ToyLmForward, ZeroWeightsGiveUniform) {
  ModelConfig c = small_config();
  c.vocab_size = 64;
  const auto params = ModelParams::zeros(c);
  const auto dist = forward(params, random_input(c, 5, 1));
  for (std::size_t a = 0; a < dist.size(); ++a) {
    EXPECT_NEAR(dist.probs(static_cast<Eigen::Index>(a)), 1.0 / 64.0, 1e-15);
  }
  EXPECT_NEAR(log_prob(params, random_input(c, 3, 2), 17), -std::log(64.0), 1e-12);
  EXPECT_NEAR(log_prob(params, random_input(c, 3, 2), 17), -4.1589, 1e-4);
}

TEST(ToyLmForward, LengthBoundary) {
  const ModelConfig c = small_config();
  const auto params = ModelParams::random(c, 3, 0.2);
  const auto dist = forward(params, random_input(c, c.max_len, 4));
  EXPECT_NEAR(dist.probs.sum(), 1.0, 1e-9);
  try {
    forward(params, random_input(c, c.max_len + 1, 4));
    FAIL() << "expected a length error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Length);
  }
}

TEST(ToyLmForward, RejectsNonFiniteInput) {
  const ModelConfig c = small_config();
  const auto params = ModelParams::random(c, 3, 0.2);
  auto in = random_input(c, 3, 5);
  in.rows(1, 2) = std::nan("");
  try {
    forward(params, in);
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
  }
}

TEST(ToyLmForward, DeterministicBitwise) {
  ModelConfig c;  // default 2-layer, d=32
  const auto p1 = ModelParams::random(c, 42);
  const auto p2 = ModelParams::random(c, 42);
  const std::vector<TokenId> ids{5, 9, 11, 40, 7};
  const auto d1 = forward(p1, embed_tokens(p1, ids));
  const auto d2 = forward(p2, embed_tokens(p2, ids));
  ASSERT_EQ(d1.size(), d2.size());
  EXPECT_EQ(0, std::memcmp(d1.probs.data(), d2.probs.data(), sizeof(double) * d1.size()));
  const auto g1 = grad_logprob_wrt_inputs(p1, embed_tokens(p1, ids), 9);
  const auto g2 = grad_logprob_wrt_inputs(p2, embed_tokens(p2, ids), 9);
  EXPECT_EQ(0, std::memcmp(g1.data(), g2.data(), sizeof(double) * g1.size()));
}

TEST(ToyLmForward, NormalizationAndExtendedPrecisionLogProb) {
  ModelConfig c;
  const auto params = ModelParams::random(c, 11, 0.5);
  const std::vector<TokenId> ids{3, 17, 200, 31, 99, 4};
  const auto dist = forward(params, embed_tokens(params, ids));
  EXPECT_LT(std::abs(dist.probs.sum() - 1.0), 1e-9);
  // log-softmax is shift invariant: renormalize the log-probabilities in long double.
  long double z = 0.0L;
  for (std::size_t a = 0; a < dist.size(); ++a) {
    z += std::exp(static_cast<long double>(dist.log_probs(static_cast<Eigen::Index>(a))));
  }
  const long double lse = std::log(z);
  for (TokenId a : {0, 7, 99, 511}) {
    const long double ref = static_cast<long double>(dist.log_probs(a)) - lse;
    EXPECT_NEAR(log_prob(params, embed_tokens(params, ids), a), static_cast<double>(ref), 1e-8);
    EXPECT_NEAR(std::exp(dist.log_probs(a)), dist.probs(a), 1e-9);
  }
}

TEST(ToyLmForward, SaturatedAnswerHasZeroLogProb) {
  ModelConfig c = small_config();
  auto params = ModelParams::zeros(c);
  params.b_out(5) = 800.0;
  EXPECT_NEAR(log_prob(params, random_input(c, 2, 1), 5), 0.0, 1e-12);
}

TEST(ToyLmGradient, ConstantOutputModelHasZeroGradient) {
  ModelConfig c = small_config();
  auto params = ModelParams::random(c, 5, 0.3);
  params.w_out.setZero();
  for (Eigen::Index a = 0; a < params.b_out.size(); ++a) params.b_out(a) = 0.1 * static_cast<double>(a);
  const auto g = grad_logprob_wrt_inputs(params, random_input(c, 6, 9), 4);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ToyLmGradient, MatchesCentralDifferences) {
  const ModelConfig c = small_config();
  const auto params = ModelParams::random(c, 7, 0.4);
  for (int trial = 0; trial < 3; ++trial) {
    const auto in = random_input(c, c.max_len, 100 + static_cast<std::uint64_t>(trial));
    const TokenId answer = 3 + trial;
    const auto g = grad_logprob_wrt_inputs(params, in, answer);
    const double h = 1e-4;
    double max_rel = 0.0;
    for (Eigen::Index i = 0; i < in.rows.size(); ++i) {
      auto plus = in;
      auto minus = in;
      plus.rows.data()[i] += h;
      minus.rows.data()[i] -= h;
      const double fd = (log_prob(params, plus, answer) - log_prob(params, minus, answer)) / (2 * h);
      const double an = g.data()[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
    EXPECT_LT(max_rel, 1e-4) << "trial " << trial;
  }
}

TEST(ToyLmGradient, ExpectedScoreIsZero) {
  ModelConfig c = small_config();
  const auto params = ModelParams::random(c, 13, 0.5);
  const auto in = random_input(c, 5, 21);
  InferenceSession s(params, in);
  Matrix acc = Matrix::Zero(5, c.d_model);
  for (TokenId a = 0; a < c.vocab_size; ++a) acc += s.distribution().probs(a) * s.input_gradient(a);
  EXPECT_LT(acc.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ToyLmGradient, ScoreMatrixMatchesPerAnswerBackward) {
  ModelConfig c = small_config();
  const auto params = ModelParams::random(c, 17, 0.5);
  const auto in = random_input(c, 4, 3);
  InferenceSession s(params, in);
  const Matrix scores = s.score_matrix();
  for (TokenId a = 0; a < c.vocab_size; ++a) {
    const auto g = s.input_gradient(a);
    const Eigen::Map<const Eigen::RowVectorXd> flat(g.data(), g.size());
    EXPECT_LT((scores.row(a) - flat).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ToyLmGradient, PadRowsAreMaskedWithZeroGradient) {
  ModelConfig c = small_config();
  const auto params = ModelParams::random(c, 19, 0.5);
  const std::vector<TokenId> padded{Vocabulary::kPad, Vocabulary::kPad, 5, 6, 7};
  const std::vector<TokenId> plain{5, 6, 7};
  const auto in_padded = embed_tokens(params, padded, 0);
  auto in_plain = embed_tokens(params, plain, 2);
  const auto d1 = forward(params, in_padded);
  const auto d2 = forward(params, in_plain);
  EXPECT_LT((d1.probs - d2.probs).cwiseAbs().maxCoeff(), 1e-15);
  const auto g = grad_logprob_wrt_inputs(params, in_padded, 4);
  EXPECT_EQ(g.row(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.row(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(g.row(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ToyLmTraining, SequenceLossGradientMatchesFiniteDifferences) {
  ModelConfig c = small_config();
  auto params = ModelParams::random(c, 23, 0.3);
  const std::vector<TokenId> ids{4, 9, 12, 5, 20};
  ModelParams grads = ModelParams::zeros(c);
  sequence_loss(params, ids, 1, &grads);
  std::vector<double*> slots;
  std::vector<double> analytic;
  params.visit([&](const std::string&, const TensorShape&, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; i += 7) slots.push_back(data + i);
  });
  grads.visit([&](const std::string&, const TensorShape&, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; i += 7) analytic.push_back(data[i]);
  });
  ASSERT_EQ(slots.size(), analytic.size());
  const double h = 1e-5;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const double orig = *slots[k];
    *slots[k] = orig + h;
    const double up = sequence_loss(params, ids, 1, nullptr).total;
    *slots[k] = orig - h;
    const double down = sequence_loss(params, ids, 1, nullptr).total;
    *slots[k] = orig;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(analytic[k], fd, 1e-6 + 1e-4 * std::abs(fd)) << "slot " << k;
  }
}

}  // namespace
}  // namespace suslab::toylm
