#include "suslab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "suslab/error.hpp"

namespace suslab::toylm {
namespace {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

void zero(ModelParams& p) {
  p.visit([](const std::string&, const TensorShape&, double* data, std::size_t n) {
    std::fill(data, data + n, 0.0);
  });
}

double squared_norm(const ModelParams& p) {
  double s = 0.0;
  p.visit([&s](const std::string&, const TensorShape&, const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) s += data[i] * data[i];
  });
  return s;
}

}  // namespace

CorpusSplit split_corpus(std::span<const Sequence> corpus, double holdout_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ 0x5eed5a11ce5ULL);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_hold = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(corpus.size())));
  if (n_hold >= corpus.size()) n_hold = corpus.size() - 1;
  CorpusSplit split;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_hold ? split.heldout : split.train).push_back(corpus[order[k]]);
  }
  return split;
}

double mean_cross_entropy(const ModelParams& params, std::span<const Sequence> sequences) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : sequences) {
    const auto loss = sequence_loss(params, s, 0, nullptr);
    total += loss.total;
    count += loss.count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

TrainResult train(ModelParams init, std::span<const Sequence> corpus, const TrainSchedule& schedule,
                  const EpochCallback& on_epoch) {
  require(!corpus.empty(), ErrorKind::Precondition, "training corpus is empty");
  require(schedule.epochs >= 0 && schedule.batch_size > 0 && schedule.learning_rate > 0.0,
          ErrorKind::Precondition, "invalid training schedule");
  init.check_shapes();
  const auto& cfg = init.config;
  std::size_t longest = 0;
  for (const auto& s : corpus) {
    for (TokenId t : s) {
      require(t >= 0 && t < cfg.vocab_size, ErrorKind::Precondition,
              "corpus token " + std::to_string(t) + " outside vocabulary");
    }
    longest = std::max(longest, s.size());
  }
  require(static_cast<int>(longest) <= cfg.max_len, ErrorKind::Length,
          "corpus sequence of length " + std::to_string(longest) + " exceeds max_len");

  CorpusSplit split = split_corpus(corpus, schedule.holdout_fraction, schedule.seed);
  TrainResult result{std::move(init), {}};
  ModelParams& params = result.params;
  TrainReport& report = result.report;
  report.train_sequences = split.train.size();
  report.heldout_sequences = split.heldout.size();
  report.initial_heldout_loss = mean_cross_entropy(params, split.heldout);

  const std::size_t n_params = params.parameter_count();
  AdamState adam{std::vector<double>(n_params, 0.0), std::vector<double>(n_params, 0.0)};
  ModelParams grads = ModelParams::zeros(cfg);

  std::mt19937_64 rng(schedule.seed);
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t batches_per_epoch =
      (split.train.size() + static_cast<std::size_t>(schedule.batch_size) - 1) /
      static_cast<std::size_t>(schedule.batch_size);
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(schedule.epochs);
  std::size_t step = 0;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      zero(grads);
      double batch_loss = 0.0;
      std::size_t batch_tokens = 0;
      const std::size_t lo = b * static_cast<std::size_t>(schedule.batch_size);
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(schedule.batch_size));
      for (std::size_t k = lo; k < hi; ++k) {
        const Sequence& seq = split.train[order[k]];
        const int room = cfg.max_len - static_cast<int>(seq.size());
        const int max_off = std::max(0, std::min(schedule.max_start_offset, room));
        const int offset = std::uniform_int_distribution<int>(0, max_off)(rng);
        const auto loss = sequence_loss(params, seq, offset, &grads);
        batch_loss += loss.total;
        batch_tokens += loss.count;
      }
      ++step;
      require(std::isfinite(batch_loss), ErrorKind::Numeric,
              "non-finite training loss at step " + std::to_string(step));
      if (batch_tokens == 0) continue;
      epoch_loss += batch_loss;
      epoch_tokens += batch_tokens;

      const double scale = 1.0 / static_cast<double>(batch_tokens);
      double gnorm = std::sqrt(squared_norm(grads)) * scale;
      require(std::isfinite(gnorm), ErrorKind::Numeric,
              "non-finite gradient at step " + std::to_string(step));
      const double clip = (schedule.grad_clip > 0.0 && gnorm > schedule.grad_clip)
                              ? schedule.grad_clip / gnorm
                              : 1.0;

      double lr = schedule.learning_rate;
      if (schedule.warmup_steps > 0 && step <= static_cast<std::size_t>(schedule.warmup_steps)) {
        lr *= static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
      } else if (total_steps > 0) {
        const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
        const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
        lr *= schedule.min_lr_fraction + (1.0 - schedule.min_lr_fraction) * cosine;
      }
      const double bc1 = 1.0 - std::pow(schedule.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(schedule.beta2, static_cast<double>(step));

      // Walk params and grads in lockstep through the same visit order.
      std::vector<double*> grad_ptrs;
      grads.visit([&grad_ptrs](const std::string&, const TensorShape&, double* data, std::size_t) {
        grad_ptrs.push_back(data);
      });
      std::size_t tensor = 0;
      std::size_t flat = 0;
      params.visit([&](const std::string&, const TensorShape&, double* data, std::size_t n) {
        const double* g = grad_ptrs[tensor++];
        for (std::size_t i = 0; i < n; ++i, ++flat) {
          const double gi = g[i] * scale * clip;
          adam.m[flat] = schedule.beta1 * adam.m[flat] + (1.0 - schedule.beta1) * gi;
          adam.v[flat] = schedule.beta2 * adam.v[flat] + (1.0 - schedule.beta2) * gi * gi;
          data[i] -= lr * (adam.m[flat] / bc1) / (std::sqrt(adam.v[flat] / bc2) + schedule.adam_eps);
        }
      });
      params.tok_emb.row(Vocabulary::kPad).setZero();
    }
    const double mean = epoch_tokens == 0 ? 0.0 : epoch_loss / static_cast<double>(epoch_tokens);
    report.epoch_train_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  report.steps = step;
  report.final_heldout_loss = mean_cross_entropy(params, split.heldout);
  require(params.all_finite(), ErrorKind::Numeric, "training produced non-finite parameters");
  return result;
}

}  // namespace suslab::toylm
