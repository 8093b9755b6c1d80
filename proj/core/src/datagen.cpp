#include "suslab/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>
#include <unordered_set>

#include "suslab/error.hpp"
#include "suslab/seeding.hpp"

namespace suslab::datagen {
namespace {

struct RelationSpec {
  const char* name;
  const char* head;
  const char* wh;
  const char* answer_type;
};

constexpr RelationSpec kRelations[] = {
    {"capitalOf", "capital", "What", "city"},
    {"officialLanguage", "official language", "What", "language"},
    {"currency", "currency", "What", "currency"},
    {"founder", "founder", "Who", "person"},
    {"leader", "leader", "Who", "person"},
    {"birthPlace", "birthplace", "Where", "city"},
    {"homeLocation", "home location", "Where", "city"},
    {"alumniOf", "alma mater", "What", "school"},
    {"author", "author", "Who", "person"},
    {"genre", "genre", "What", "genre"},
    {"owner", "owner", "Who", "company"},
    {"headquarters", "headquarters", "Where", "city"},
    {"spouse", "spouse", "Who", "person"},
    {"nationality", "nationality", "What", "country"},
    {"instrument", "main instrument", "What", "instrument"},
    {"sport", "sport", "What", "sport"},
    {"employer", "employer", "What", "company"},
    {"religion", "religion", "What", "religion"},
    {"memberOf", "team", "What", "team"},
    {"locatedIn", "country", "What", "country"},
};

constexpr const char* kSyllables[] = {"ka", "lo", "ri", "zen", "mar", "tu", "vi",  "dor",
                                      "sel", "ba", "qui", "nor", "fa", "gil", "om",  "ret",
                                      "xa", "py", "lun", "ves", "ad", "ke", "thra", "mu"};

constexpr const char* kAdjectives[] = {"quiet", "bright", "old", "small", "green", "cold", "heavy", "gentle"};
constexpr const char* kNouns[] = {"river", "garden", "market", "tower", "bridge",
                                  "forest", "harbor", "valley", "road", "field"};
constexpr const char* kVerbs[] = {"stood", "waited", "rested", "appeared", "vanished", "shone"};
constexpr const char* kSeasons[] = {"spring", "summer", "autumn", "winter"};
constexpr const char* kFillerWords[] = {"the", "near", "people", "often", "talk", "about", "in",
                                        "looks", "a",   "is",   "."};

constexpr const char* kYes = "yes";
constexpr const char* kNo = "no";
constexpr const char* kTrue = "true";
constexpr const char* kFalse = "false";

template <class T, std::size_t N>
const T& pick(const T (&arr)[N], std::mt19937_64& rng) {
  return arr[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

bool coin(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

/// Draws a fresh capitalized 2-3 syllable name not yet in `taken`.
std::string compose_name(std::mt19937_64& rng, std::unordered_set<std::string>& taken, bool capitalize) {
  for (;;) {
    const int n = coin(rng, 0.5) ? 2 : 3;
    std::string s;
    for (int i = 0; i < n; ++i) s += pick(kSyllables, rng);
    if (capitalize) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (taken.insert(s).second) return s;
  }
}

RelationSchema make_schema(std::string name, std::string head, std::string wh, std::string type) {
  RelationSchema r;
  r.name = std::move(name);
  r.head = std::move(head);
  r.wh = std::move(wh);
  r.answer_type = std::move(type);
  r.context = "The " + r.head + " of {entity} is {answer} .";
  r.open_completion = "The " + r.head + " of {entity} is";
  r.open_qa = "Q: " + r.wh + " is the " + r.head + " of {entity} ? A:";
  r.closed_qa = "Q: Is {answer} the " + r.head + " of {entity} ? A:";
  r.closed_completion = "The " + r.head + " of {entity} is {answer} , which is";
  return r;
}

std::string gold_for(QueryForm form, bool fill_true, const std::string& answer) {
  if (form.openness == Openness::Open) return answer;
  if (form.style == QueryStyle::Qa) return fill_true ? kYes : kNo;
  return fill_true ? kTrue : kFalse;
}

const std::string& other_answer(const RelationSchema& r, const std::string& answer, std::mt19937_64& rng) {
  for (;;) {
    const std::string& a = pick(r.answers, rng);
    if (a != answer || r.answers.size() == 1) return a;
  }
}

/// A query rendered together with its expected continuation.
std::string query_with_answer(const RelationSchema& r, QueryForm form, const std::string& entity,
                              const std::string& truth, std::mt19937_64& rng) {
  if (form.openness == Openness::Open) {
    return render(r.template_for(form), entity, truth) + " " + truth;
  }
  const bool fill_true = coin(rng, 0.5);
  const std::string& fill = fill_true ? truth : other_answer(r, truth, rng);
  return render(r.template_for(form), entity, fill) + " " + gold_for(form, fill_true, truth);
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(Openness o) { return o == Openness::Open ? "open" : "closed"; }
std::string to_string(QueryStyle s) { return s == QueryStyle::Qa ? "qa" : "completion"; }
std::string to_string(EntityKind k) { return k == EntityKind::Real ? "real" : "fake"; }
std::string to_string(QueryForm f) { return to_string(f.openness) + "-" + to_string(f.style); }

QueryForm parse_form(std::string_view text) {
  for (const auto& f : kAllForms) {
    if (to_string(f) == text) return f;
  }
  fail(ErrorKind::MalformedHeader, "unknown query form '" + std::string(text) + "'");
}

EntityKind parse_entity_kind(std::string_view text) {
  if (text == "real") return EntityKind::Real;
  if (text == "fake") return EntityKind::Fake;
  fail(ErrorKind::MalformedHeader, "unknown entity kind '" + std::string(text) + "'");
}

const std::string& RelationSchema::template_for(QueryForm form) const {
  if (form.openness == Openness::Closed) return form.style == QueryStyle::Qa ? closed_qa : closed_completion;
  return form.style == QueryStyle::Qa ? open_qa : open_completion;
}

std::string render(std::string_view tmpl, std::string_view entity, std::string_view answer) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.compare(i, 8, "{entity}") == 0) {
      out += entity;
      i += 8;
    } else if (tmpl.compare(i, 8, "{answer}") == 0) {
      out += answer;
      i += 8;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

std::vector<const Entity*> EntityCatalog::for_relation(std::string_view relation) const {
  std::vector<const Entity*> out;
  for (const auto& e : entities) {
    if (e.relation == relation) out.push_back(&e);
  }
  return out;
}

const Entity* EntityCatalog::find(std::string_view name) const {
  for (const auto& e : entities) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const RelationSchema& World::relation(std::string_view name) const {
  for (const auto& r : relations) {
    if (r.name == name) return r;
  }
  fail(ErrorKind::Precondition, "unknown relation '" + std::string(name) + "'");
}

World gen_world(const WorldConfig& config) {
  require(config.n_relations > 0 && config.n_entities_per_relation > 0 && config.answers_per_type > 1 &&
              config.n_novel_entities >= 0,
          ErrorKind::Config, "world sizes must be positive (answers_per_type >= 2)");
  World w;
  w.config = config;
  std::mt19937_64 rng(derive_seed(config.seed, "world"));
  std::unordered_set<std::string> taken;

  // Schemas: the fixed table first, then procedurally named relations.
  std::vector<std::string> types;
  for (int i = 0; i < config.n_relations; ++i) {
    RelationSchema r;
    if (i < static_cast<int>(std::size(kRelations))) {
      const auto& s = kRelations[i];
      r = make_schema(s.name, s.head, s.wh, s.answer_type);
    } else {
      const std::string head = compose_name(rng, taken, false);
      const auto& s = kRelations[static_cast<std::size_t>(i) % std::size(kRelations)];
      r = make_schema("rel" + std::to_string(i), head, "What", s.answer_type);
    }
    if (std::find(types.begin(), types.end(), r.answer_type) == types.end()) types.push_back(r.answer_type);
    w.relations.push_back(std::move(r));
  }

  // Answer pools are shared by relations of the same answer type.
  std::vector<std::vector<std::string>> pools;
  for (std::size_t t = 0; t < types.size(); ++t) {
    std::vector<std::string> pool;
    for (int k = 0; k < config.answers_per_type; ++k) pool.push_back(compose_name(rng, taken, true));
    pools.push_back(std::move(pool));
  }
  for (auto& r : w.relations) {
    const auto t = static_cast<std::size_t>(std::find(types.begin(), types.end(), r.answer_type) - types.begin());
    r.answers = pools[t];
  }

  const int n_real = (config.n_entities_per_relation + 1) / 2;
  for (const auto& r : w.relations) {
    for (int k = 0; k < config.n_entities_per_relation; ++k) {
      Entity e;
      e.name = compose_name(rng, taken, true);
      e.relation = r.name;
      e.kind = k < n_real ? EntityKind::Real : EntityKind::Fake;
      e.answer = pick(r.answers, rng);
      w.catalog.entities.push_back(std::move(e));
    }
  }
  for (int k = 0; k < config.n_novel_entities; ++k) w.catalog.novel.push_back(compose_name(rng, taken, true));

  // Vocabulary: template words, fixed words, answers, entities, novel names.
  Vocabulary& v = w.vocab;
  for (const auto& r : w.relations) {
    for (const auto* t : {&r.closed_qa, &r.closed_completion, &r.open_qa, &r.open_completion, &r.context}) {
      for (const auto& word : split_words(*t)) {
        if (word != "{entity}" && word != "{answer}") v.add(word);
      }
    }
  }
  for (const char* word : {kYes, kNo, kTrue, kFalse}) v.add(word);
  for (const char* word : kFillerWords) v.add(word);
  for (const char* word : kAdjectives) v.add(word);
  for (const char* word : kNouns) v.add(word);
  for (const char* word : kVerbs) v.add(word);
  for (const char* word : kSeasons) v.add(word);
  for (const auto& pool : pools) {
    for (const auto& a : pool) v.add(a);
  }
  for (const auto& e : w.catalog.entities) v.add(e.name);
  for (const auto& n : w.catalog.novel) v.add(n);

  if (static_cast<int>(v.size()) > config.vocab_capacity) {
    fail(ErrorKind::VocabularyOverflow,
         "world needs " + std::to_string(v.size()) + " tokens but vocab capacity is " +
             std::to_string(config.vocab_capacity) + " (short by " +
             std::to_string(static_cast<int>(v.size()) - config.vocab_capacity) + ")");
  }
  return w;
}

std::vector<std::string> gen_corpus_text(const World& world, const CorpusConfig& config) {
  require(config.facts_per_entity >= 0 && config.distractor_ratio >= 0.0, ErrorKind::Config,
          "corpus sizes must be non-negative");
  std::mt19937_64 rng(derive_seed(config.seed, "corpus"));
  std::vector<std::string> out;

  std::vector<const Entity*> reals;
  for (const auto& e : world.catalog.entities) {
    if (e.kind == EntityKind::Real) reals.push_back(&e);
  }

  // Fact sentences cycle through the context rendering and every query form
  // completed with the true answer.
  std::size_t n_facts = 0;
  for (const Entity* e : reals) {
    const auto& r = world.relation(e->relation);
    for (int k = 0; k < config.facts_per_entity; ++k) {
      switch (k % 5) {
        case 0: out.push_back(render(r.context, e->name, e->answer)); break;
        case 1: out.push_back(render(r.open_completion, e->name, e->answer) + " " + e->answer + " ."); break;
        case 2: out.push_back(render(r.open_qa, e->name, e->answer) + " " + e->answer); break;
        case 3: out.push_back(render(r.closed_qa, e->name, e->answer) + " " + kYes); break;
        default: out.push_back(render(r.closed_completion, e->name, e->answer) + " " + kTrue); break;
      }
      ++n_facts;
    }
    const std::string& wrong = other_answer(r, e->answer, rng);
    out.push_back(render(r.closed_qa, e->name, wrong) + " " + kNo);
    out.push_back(render(r.closed_completion, e->name, wrong) + " " + kFalse);
  }

  // Distractors: filler prose plus context->query episodes. Episodes about
  // training-only names teach reading the context; episodes about real
  // entities mix agreeing, irrelevant and overriding contexts.
  const auto n_distract = static_cast<std::size_t>(config.distractor_ratio * static_cast<double>(n_facts) + 0.5);
  for (std::size_t k = 0; k < n_distract; ++k) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < 0.4 || (reals.empty() && world.catalog.novel.empty())) {
      switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
        case 0:
          out.push_back(std::string("the ") + pick(kAdjectives, rng) + " " + pick(kNouns, rng) + " " +
                        pick(kVerbs, rng) + " near the " + pick(kNouns, rng) + " .");
          break;
        case 1:
          out.push_back(std::string("people often talk about the ") + pick(kNouns, rng) + " in " +
                        pick(kSeasons, rng) + " .");
          break;
        case 2:
          out.push_back(std::string("in ") + pick(kSeasons, rng) + " the " + pick(kNouns, rng) + " looks " +
                        pick(kAdjectives, rng) + " .");
          break;
        default:
          out.push_back(std::string("a ") + pick(kAdjectives, rng) + " " + pick(kNouns, rng) +
                        " is near the " + pick(kNouns, rng) + " .");
          break;
      }
      continue;
    }
    const QueryForm form = pick(kAllForms, rng);
    if ((u < 0.7 && !world.catalog.novel.empty()) || reals.empty()) {
      const auto& r = pick(world.relations, rng);
      const std::string& name = pick(world.catalog.novel, rng);
      const std::string& ans = pick(r.answers, rng);
      out.push_back(render(r.context, name, ans) + " " + query_with_answer(r, form, name, ans, rng));
      continue;
    }
    const Entity* e = pick(reals, rng);
    const auto& r = world.relation(e->relation);
    const int mode = std::uniform_int_distribution<int>(0, 2)(rng);
    std::string context;
    std::string truth = e->answer;
    if (mode == 0) {
      context = render(r.context, e->name, e->answer);
    } else if (mode == 1) {
      const bool use_novel = !world.catalog.novel.empty() && coin(rng, 0.5);
      std::string other = use_novel ? pick(world.catalog.novel, rng) : pick(reals, rng)->name;
      if (other == e->name) other = world.catalog.novel.empty() ? other : world.catalog.novel.front();
      context = render(r.context, other, pick(r.answers, rng));
    } else {
      truth = other_answer(r, e->answer, rng);
      context = render(r.context, e->name, truth);
    }
    out.push_back(context + " " + query_with_answer(r, form, e->name, truth, rng));
  }

  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::vector<Sequence> gen_corpus(const World& world, const CorpusConfig& config) {
  std::vector<Sequence> out;
  for (const auto& s : gen_corpus_text(world, config)) {
    auto enc = world.vocab.encode(s);
    require(enc.unk_count == 0, ErrorKind::Precondition, "corpus sentence has out-of-vocabulary words: " + s);
    out.push_back(std::move(enc.ids));
  }
  return out;
}

std::vector<QueryRecord> gen_queries(const World& world) {
  std::mt19937_64 rng(derive_seed(world.config.seed, "queries"));
  std::vector<QueryRecord> out;
  for (const auto& r : world.relations) {
    for (const Entity* e : world.catalog.for_relation(r.name)) {
      for (const auto& form : kAllForms) {
        QueryRecord q;
        q.query_id = r.name + "/" + e->name + "/" + to_string(form);
        q.relation = r.name;
        q.form = form;
        q.entity_kind = e->kind;
        q.entity = e->name;
        bool fill_true = true;
        if (form.openness == Openness::Closed) {
          fill_true = coin(rng, world.config.closed_true_fraction);
          q.answer_fill = fill_true ? e->answer : other_answer(r, e->answer, rng);
        }
        q.gold_answer = gold_for(form, fill_true, e->answer);
        q.text = render(r.template_for(form), e->name, q.answer_fill);
        auto enc = world.vocab.encode(q.text);
        require(enc.unk_count == 0, ErrorKind::Precondition, "query has out-of-vocabulary words: " + q.text);
        q.token_ids = std::move(enc.ids);
        out.push_back(std::move(q));
      }
    }
  }
  return out;
}

std::vector<ContextRecord> gen_contexts(const World& world, std::string_view relation, int n, std::uint64_t seed) {
  require(n > 0, ErrorKind::Config, "context pool size must be positive");
  const RelationSchema& r = world.relation(relation);
  std::mt19937_64 rng(derive_seed(seed, "contexts/" + std::string(relation)));
  const auto own = world.catalog.for_relation(relation);

  std::vector<std::string> others;
  for (const auto& e : world.catalog.entities) {
    if (e.relation != relation) others.push_back(e.name);
  }
  for (const auto& nv : world.catalog.novel) others.push_back(nv);

  const std::size_t capacity = (own.size() + others.size()) * r.answers.size();
  require(static_cast<std::size_t>(n) <= capacity, ErrorKind::Config,
          "cannot draw " + std::to_string(n) + " distinct contexts for " + std::string(relation) +
              " (at most " + std::to_string(capacity) + ")");

  std::set<std::pair<std::string, std::string>> used;
  std::vector<std::pair<std::string, std::string>> pairs;
  const std::size_t per_entity = own.empty() ? 0
                                             : std::min(r.answers.size(),
                                                        static_cast<std::size_t>(n) / own.size());
  for (const Entity* e : own) {
    std::vector<std::string> answers = r.answers;
    std::shuffle(answers.begin(), answers.end(), rng);
    for (std::size_t k = 0; k < per_entity; ++k) {
      used.insert({e->name, answers[k]});
      pairs.emplace_back(e->name, answers[k]);
    }
  }
  while (pairs.size() < static_cast<std::size_t>(n)) {
    const std::string& ent = others.empty() ? pick(own, rng)->name : pick(others, rng);
    const std::string& ans = pick(r.answers, rng);
    if (used.insert({ent, ans}).second) pairs.emplace_back(ent, ans);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);

  std::vector<ContextRecord> out;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    ContextRecord c;
    c.context_id = std::string(relation) + "/c" + std::to_string(k);
    c.relation = std::string(relation);
    c.text = render(r.context, pairs[k].first, pairs[k].second);
    c.token_ids = world.vocab.encode(c.text).ids;
    c.mentioned_entities = {pairs[k].first};
    out.push_back(std::move(c));
  }
  return out;
}

int max_context_length(const World& world) {
  std::size_t longest = 0;
  for (const auto& r : world.relations) {
    longest = std::max(longest, split_words(render(r.context, "E", "A")).size());
  }
  return static_cast<int>(longest);
}

}  // namespace suslab::datagen
