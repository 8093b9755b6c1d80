#include "suslab/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "suslab/checkpoint.hpp"
#include "suslab/datagen.hpp"
#include "suslab/error.hpp"

namespace suslab::toylm {
namespace {

TEST(Train, EmptyCorpusIsPrecondition) {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  try {
    train(ModelParams::random(c, 1), {}, TrainSchedule{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Precondition);
  }
}

// 50 distinct facts; perplexity of the answer token on held-out copies.
TEST(Train, MemorizesFiftyFacts) {
  datagen::WorldConfig wc;
  wc.n_relations = 5;
  wc.n_entities_per_relation = 10;
  wc.n_novel_entities = 0;
  const auto world = datagen::gen_world(wc);
  std::vector<Sequence> facts;
  for (const auto& e : world.catalog.entities) {
    const auto& r = world.relation(e.relation);
    facts.push_back(world.vocab.encode(datagen::render(r.context, e.name, e.answer)).ids);
  }
  ASSERT_EQ(facts.size(), 50u);
  std::vector<Sequence> corpus;
  for (int copy = 0; copy < 4; ++copy) corpus.insert(corpus.end(), facts.begin(), facts.end());

  ModelConfig mc;
  mc.vocab_size = static_cast<int>(world.vocab.size());
  const auto result = train(ModelParams::random(mc, 3), corpus, TrainSchedule{});
  EXPECT_LT(result.report.final_heldout_loss, result.report.initial_heldout_loss);

  // The answer is the second-to-last token ("... is {answer} .").
  double nll = 0.0;
  for (const auto& f : facts) {
    const std::span<const TokenId> prefix(f.data(), f.size() - 2);
    nll -= log_prob(result.params, embed_tokens(result.params, prefix), f[f.size() - 2]);
  }
  const double ppl = std::exp(nll / static_cast<double>(facts.size()));
  EXPECT_LE(ppl, 1.5);
}

TEST(Train, SameSeedGivesIdenticalCheckpointBytes) {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.n_layers = 1;
  c.max_len = 16;
  std::vector<Sequence> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back({3 + i % 5, 4 + i % 7, 10 + i % 3, 5});
  TrainSchedule s;
  s.epochs = 3;
  const auto dir = std::filesystem::temp_directory_path() / "suslab_train_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(train(ModelParams::random(c, 9), corpus, s).params, dir / "a.ckpt");
  save_checkpoint(train(ModelParams::random(c, 9), corpus, s).params, dir / "b.ckpt");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
}

}  // namespace
}  // namespace suslab::toylm
