#include "suslab/datagen.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "suslab/dataset_io.hpp"
#include "suslab/error.hpp"

namespace suslab::datagen {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "suslab_datagen_test";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool same_world(const World& a, const World& b) {
  return a.config == b.config && a.vocab.entries() == b.vocab.entries() && a.relations == b.relations &&
         a.catalog == b.catalog;
}

TEST(Datagen, WorldIsDeterministicBytewise) {
  const auto dir = temp_dir();
  write_world(dir / "w1.jsonl", gen_world(WorldConfig{}));
  write_world(dir / "w2.jsonl", gen_world(WorldConfig{}));
  EXPECT_EQ(slurp(dir / "w1.jsonl"), slurp(dir / "w2.jsonl"));
}

TEST(Datagen, DefaultWorldHas800Queries) {
  const auto world = gen_world(WorldConfig{});
  EXPECT_EQ(world.relations.size(), 20u);
  const auto queries = gen_queries(world);
  EXPECT_EQ(queries.size(), 800u);
  std::map<std::string, int> kinds;
  std::set<std::string> ids;
  for (const auto& q : queries) {
    ++kinds[to_string(q.entity_kind) + "/" + to_string(q.form)];
    ids.insert(q.query_id);
    EXPECT_EQ(world.vocab.decode(q.token_ids), q.text);
    EXPECT_TRUE(world.vocab.contains(q.gold_answer));
  }
  EXPECT_EQ(ids.size(), 800u);
  for (const auto& [k, n] : kinds) EXPECT_EQ(n, 100) << k;
}

TEST(Datagen, EntityNamesAreDisjoint) {
  const auto world = gen_world(WorldConfig{});
  std::set<std::string> real;
  std::set<std::string> fake;
  for (const auto& e : world.catalog.entities) (e.kind == EntityKind::Real ? real : fake).insert(e.name);
  EXPECT_EQ(real.size() + fake.size(), world.catalog.entities.size());
  for (const auto& f : fake) {
    EXPECT_FALSE(real.contains(f));
    for (const auto& n : world.catalog.novel) EXPECT_NE(f, n);
  }
}

TEST(Datagen, TemplatesRender) {
  const auto world = gen_world(WorldConfig{});
  const auto& cap = world.relation("capitalOf");
  EXPECT_EQ(render(cap.closed_qa, "Zed", "Ora"), "Q: Is Ora the capital of Zed ? A:");
  EXPECT_EQ(render(cap.open_completion, "Zed", "Ora"), "The capital of Zed is");
  EXPECT_EQ(render(cap.context, "Zed", "Ora"), "The capital of Zed is Ora .");
  for (const auto& r : world.relations) {
    for (const auto& f : kAllForms) EXPECT_NE(r.template_for(f).find("{entity}"), std::string::npos);
    EXPECT_NE(r.closed_qa.find("{answer}"), std::string::npos);
    EXPECT_NE(r.closed_completion.find("{answer}"), std::string::npos);
    EXPECT_NE(r.context.find("{answer}"), std::string::npos);
    for (const auto& a : r.answers) EXPECT_GT(world.vocab.id(a), Vocabulary::kUnk);
  }
}

TEST(Datagen, VocabularyOverflowNamesShortfall) {
  WorldConfig c;
  c.vocab_capacity = 100;
  try {
    gen_world(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::VocabularyOverflow);
    EXPECT_NE(std::string(e.what()).find("short by"), std::string::npos);
  }
}

TEST(Datagen, CorpusHygiene) {
  const auto world = gen_world(WorldConfig{});
  const CorpusConfig cc;
  const auto text = gen_corpus_text(world, cc);
  EXPECT_EQ(text, gen_corpus_text(world, cc));

  std::set<std::string> fake;
  for (const auto& e : world.catalog.entities) {
    if (e.kind == EntityKind::Fake) fake.insert(e.name);
  }
  std::map<std::string, int> fact_count;
  for (const auto& s : text) {
    for (const auto& w : split_words(s)) EXPECT_FALSE(fake.contains(w)) << s;
    fact_count[s]++;
  }
  // Floor: each real fact appears at least F times across its renderings.
  for (const auto& e : world.catalog.entities) {
    if (e.kind != EntityKind::Real) continue;
    const auto& r = world.relation(e.relation);
    int n = 0;
    for (const auto& s : text) {
      if (s.find(render(r.context, e.name, e.answer)) == 0 ||
          s == render(r.open_completion, e.name, "") + " " + e.answer + " ." ||
          s == render(r.open_qa, e.name, "") + " " + e.answer ||
          s == render(r.closed_qa, e.name, e.answer) + " yes" ||
          s == render(r.closed_completion, e.name, e.answer) + " true") {
        ++n;
      }
    }
    EXPECT_GE(n, cc.facts_per_entity) << e.name;
  }
}

TEST(Datagen, ContextPoolsAreExactAndDistinct) {
  const auto world = gen_world(WorldConfig{});
  const auto pool = gen_contexts(world, "capitalOf", 200, 3);
  ASSERT_EQ(pool.size(), 200u);
  std::set<std::string> texts;
  for (const auto& c : pool) {
    texts.insert(c.text);
    EXPECT_EQ(c.mentioned_entities.size(), 1u);
    EXPECT_LE(static_cast<int>(c.token_ids.size()), max_context_length(world));
  }
  EXPECT_EQ(texts.size(), 200u);
  // Every catalog entity of the relation is mentioned by at least one context.
  for (const Entity* e : world.catalog.for_relation("capitalOf")) {
    int n = 0;
    for (const auto& c : pool) n += c.mentioned_entities[0] == e->name;
    EXPECT_GE(n, 1) << e->name;
  }
}

TEST(DatasetIo, RoundTripsEveryFile) {
  const auto dir = temp_dir();
  const auto world = gen_world(WorldConfig{});
  write_world(dir / "world.jsonl", world);
  EXPECT_TRUE(same_world(world, read_world(dir / "world.jsonl")));

  const auto corpus = gen_corpus(world, CorpusConfig{});
  write_corpus(dir / "corpus.jsonl", corpus);
  EXPECT_EQ(read_corpus(dir / "corpus.jsonl"), corpus);

  const auto queries = gen_queries(world);
  write_queries(dir / "queries.jsonl", queries);
  EXPECT_EQ(read_queries(dir / "queries.jsonl"), queries);

  const auto contexts = gen_contexts(world, "genre", 50, 1);
  write_contexts(dir / "contexts.jsonl", contexts);
  EXPECT_EQ(read_contexts(dir / "contexts.jsonl"), contexts);
}

TEST(DatasetIo, MissingFileIsMissingArtifact) {
  try {
    read_queries(temp_dir() / "nope.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingArtifact);
  }
}

}  // namespace
}  // namespace suslab::datagen
