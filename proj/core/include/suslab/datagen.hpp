#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "suslab/vocab.hpp"

// Synthetic knowledge world: relation schemas with four query templates and a
// context template, a catalog of real (seen in training) and fake (never seen)
// entities, a training corpus, query sets and per-relation context pools.
namespace suslab::datagen {

using Sequence = std::vector<TokenId>;

enum class Openness { Open, Closed };
enum class QueryStyle { Qa, Completion };
enum class EntityKind { Real, Fake };

struct QueryForm {
  Openness openness = Openness::Open;
  QueryStyle style = QueryStyle::Qa;
  bool operator==(const QueryForm&) const = default;
};

inline constexpr QueryForm kAllForms[4] = {
    {Openness::Closed, QueryStyle::Qa},
    {Openness::Closed, QueryStyle::Completion},
    {Openness::Open, QueryStyle::Qa},
    {Openness::Open, QueryStyle::Completion},
};

std::string to_string(QueryForm form);  // "closed-qa", "open-completion", ...
std::string to_string(Openness o);       // "open" | "closed"
std::string to_string(QueryStyle s);     // "qa" | "completion"
std::string to_string(EntityKind k);     // "real" | "fake"
QueryForm parse_form(std::string_view text);
EntityKind parse_entity_kind(std::string_view text);

/// Templates use the slots {entity} and {answer}; tokens are whitespace separated.
struct RelationSchema {
  std::string name;         // e.g. "capitalOf"
  std::string head;         // noun phrase, e.g. "capital"
  std::string wh;           // "What" | "Who" | "Where"
  std::string answer_type;  // e.g. "city"
  std::string closed_qa;
  std::string closed_completion;
  std::string open_qa;
  std::string open_completion;
  std::string context;
  std::vector<std::string> answers;  // candidate objects, each one token

  const std::string& template_for(QueryForm form) const;
  bool operator==(const RelationSchema&) const = default;
};

/// Replaces {entity} and {answer}.
std::string render(std::string_view tmpl, std::string_view entity, std::string_view answer);

struct Entity {
  std::string name;
  std::string relation;
  EntityKind kind = EntityKind::Real;
  std::string answer;  // ground truth for real entities, a notional fill for fake ones
  bool operator==(const Entity&) const = default;
};

struct EntityCatalog {
  std::vector<Entity> entities;
  /// Names used only inside training-corpus context episodes. Disjoint from
  /// both real and fake entities; they teach the model to read contexts.
  std::vector<std::string> novel;

  std::vector<const Entity*> for_relation(std::string_view relation) const;
  const Entity* find(std::string_view name) const;
  bool operator==(const EntityCatalog&) const = default;
};

struct WorldConfig {
  std::uint64_t seed = 7;
  int n_relations = 20;
  int n_entities_per_relation = 10;  // split half real / half fake
  int answers_per_type = 8;
  int n_novel_entities = 40;
  int vocab_capacity = 512;
  double closed_true_fraction = 0.5;
  bool operator==(const WorldConfig&) const = default;
};

struct World {
  WorldConfig config;
  Vocabulary vocab;
  std::vector<RelationSchema> relations;
  EntityCatalog catalog;

  const RelationSchema& relation(std::string_view name) const;
};

/// Deterministic in `config`. Throws VocabularyOverflow naming the shortfall
/// when the world needs more tokens than config.vocab_capacity.
World gen_world(const WorldConfig& config);

struct CorpusConfig {
  int facts_per_entity = 8;       // F: each real fact appears at least F times
  double distractor_ratio = 3.0;  // distractor sentences per fact sentence
  std::uint64_t seed = 11;
  bool operator==(const CorpusConfig&) const = default;
};

/// Training sentences as text. No fake entity ever appears.
std::vector<std::string> gen_corpus_text(const World& world, const CorpusConfig& config);
std::vector<Sequence> gen_corpus(const World& world, const CorpusConfig& config);

struct QueryRecord {
  std::string query_id;
  std::string relation;
  QueryForm form;
  EntityKind entity_kind = EntityKind::Real;
  std::string entity;
  std::string answer_fill;  // closed forms only
  std::string gold_answer;  // expected next token
  std::string text;
  std::vector<TokenId> token_ids;
  bool operator==(const QueryRecord&) const = default;
};

/// Every (relation, entity, form) combination, in catalog order.
std::vector<QueryRecord> gen_queries(const World& world);

struct ContextRecord {
  std::string context_id;
  std::string relation;
  std::string text;
  std::vector<TokenId> token_ids;
  std::vector<std::string> mentioned_entities;
  bool operator==(const ContextRecord&) const = default;
};

/// `n` distinct contexts for `relation`. Each catalog entity of the relation
/// is mentioned by up to min(answers, n / entities) contexts; the remainder
/// mention entities from elsewhere in the world.
std::vector<ContextRecord> gen_contexts(const World& world, std::string_view relation, int n,
                                        std::uint64_t seed);

/// Longest tokenized context template over all relations (the default context window).
int max_context_length(const World& world);

}  // namespace suslab::datagen
