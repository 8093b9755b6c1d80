#include "suslab/dataset_io.hpp"

#include <fstream>
#include <functional>

#include "json.hpp"
#include "suslab/error.hpp"

namespace suslab::datagen {
namespace {

using nlohmann::json;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  return out;
}

void write_line(std::ofstream& out, const json& j) { out << j.dump() << '\n'; }

/// Calls f(record) for every non-blank line; parse and schema errors name the line.
void for_each_record(const std::filesystem::path& path, const std::function<void(const json&)>& f) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorKind::MalformedHeader, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

json form_json(QueryForm f) { return to_string(f); }

}  // namespace

void write_world(const std::filesystem::path& path, const World& world) {
  auto out = open_out(path);
  const auto& c = world.config;
  write_line(out, {{"type", "world"},
                   {"seed", c.seed},
                   {"n_relations", c.n_relations},
                   {"n_entities_per_relation", c.n_entities_per_relation},
                   {"answers_per_type", c.answers_per_type},
                   {"n_novel_entities", c.n_novel_entities},
                   {"vocab_capacity", c.vocab_capacity},
                   {"closed_true_fraction", c.closed_true_fraction}});
  write_line(out, {{"type", "vocab"}, {"entries", world.vocab.entries()}});
  for (const auto& r : world.relations) {
    write_line(out, {{"type", "relation"},
                     {"name", r.name},
                     {"head", r.head},
                     {"wh", r.wh},
                     {"answer_type", r.answer_type},
                     {"closed_qa", r.closed_qa},
                     {"closed_completion", r.closed_completion},
                     {"open_qa", r.open_qa},
                     {"open_completion", r.open_completion},
                     {"context", r.context},
                     {"answers", r.answers}});
  }
  for (const auto& e : world.catalog.entities) {
    write_line(out, {{"type", "entity"},
                     {"name", e.name},
                     {"relation", e.relation},
                     {"entity_kind", to_string(e.kind)},
                     {"answer", e.answer}});
  }
  for (const auto& n : world.catalog.novel) write_line(out, {{"type", "novel"}, {"name", n}});
}

World read_world(const std::filesystem::path& path) {
  World w;
  bool have_config = false;
  bool have_vocab = false;
  for_each_record(path, [&](const json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "world") {
      auto& c = w.config;
      c.seed = j.at("seed").get<std::uint64_t>();
      c.n_relations = j.at("n_relations").get<int>();
      c.n_entities_per_relation = j.at("n_entities_per_relation").get<int>();
      c.answers_per_type = j.at("answers_per_type").get<int>();
      c.n_novel_entities = j.at("n_novel_entities").get<int>();
      c.vocab_capacity = j.at("vocab_capacity").get<int>();
      c.closed_true_fraction = j.at("closed_true_fraction").get<double>();
      have_config = true;
    } else if (type == "vocab") {
      w.vocab = Vocabulary(j.at("entries").get<std::vector<std::string>>());
      have_vocab = true;
    } else if (type == "relation") {
      RelationSchema r;
      r.name = j.at("name").get<std::string>();
      r.head = j.at("head").get<std::string>();
      r.wh = j.at("wh").get<std::string>();
      r.answer_type = j.at("answer_type").get<std::string>();
      r.closed_qa = j.at("closed_qa").get<std::string>();
      r.closed_completion = j.at("closed_completion").get<std::string>();
      r.open_qa = j.at("open_qa").get<std::string>();
      r.open_completion = j.at("open_completion").get<std::string>();
      r.context = j.at("context").get<std::string>();
      r.answers = j.at("answers").get<std::vector<std::string>>();
      w.relations.push_back(std::move(r));
    } else if (type == "entity") {
      Entity e;
      e.name = j.at("name").get<std::string>();
      e.relation = j.at("relation").get<std::string>();
      e.kind = parse_entity_kind(j.at("entity_kind").get<std::string>());
      e.answer = j.at("answer").get<std::string>();
      w.catalog.entities.push_back(std::move(e));
    } else if (type == "novel") {
      w.catalog.novel.push_back(j.at("name").get<std::string>());
    } else {
      fail(ErrorKind::MalformedHeader, "unknown world record type '" + type + "'");
    }
  });
  require(have_config && have_vocab, ErrorKind::MalformedHeader,
          "'" + path.string() + "' lacks a world or vocab record");
  return w;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Sequence>& corpus) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < corpus.size(); ++i) write_line(out, {{"id", i}, {"token_ids", corpus[i]}});
}

std::vector<Sequence> read_corpus(const std::filesystem::path& path) {
  std::vector<Sequence> out;
  for_each_record(path, [&](const json& j) { out.push_back(j.at("token_ids").get<Sequence>()); });
  return out;
}

void write_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& queries) {
  auto out = open_out(path);
  for (const auto& q : queries) {
    write_line(out, {{"query_id", q.query_id},
                     {"relation", q.relation},
                     {"form", form_json(q.form)},
                     {"entity_kind", to_string(q.entity_kind)},
                     {"entity", q.entity},
                     {"answer_fill", q.answer_fill},
                     {"gold_answer", q.gold_answer},
                     {"text", q.text},
                     {"token_ids", q.token_ids}});
  }
}

std::vector<QueryRecord> read_queries(const std::filesystem::path& path) {
  std::vector<QueryRecord> out;
  for_each_record(path, [&](const json& j) {
    QueryRecord q;
    q.query_id = j.at("query_id").get<std::string>();
    q.relation = j.at("relation").get<std::string>();
    q.form = parse_form(j.at("form").get<std::string>());
    q.entity_kind = parse_entity_kind(j.at("entity_kind").get<std::string>());
    q.entity = j.at("entity").get<std::string>();
    q.answer_fill = j.at("answer_fill").get<std::string>();
    q.gold_answer = j.at("gold_answer").get<std::string>();
    q.text = j.at("text").get<std::string>();
    q.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
    out.push_back(std::move(q));
  });
  return out;
}

void write_contexts(const std::filesystem::path& path, const std::vector<ContextRecord>& contexts) {
  auto out = open_out(path);
  for (const auto& c : contexts) {
    write_line(out, {{"context_id", c.context_id},
                     {"relation", c.relation},
                     {"text", c.text},
                     {"token_ids", c.token_ids},
                     {"mentioned_entities", c.mentioned_entities}});
  }
}

std::vector<ContextRecord> read_contexts(const std::filesystem::path& path) {
  std::vector<ContextRecord> out;
  for_each_record(path, [&](const json& j) {
    ContextRecord c;
    c.context_id = j.at("context_id").get<std::string>();
    c.relation = j.at("relation").get<std::string>();
    c.text = j.at("text").get<std::string>();
    c.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
    c.mentioned_entities = j.at("mentioned_entities").get<std::vector<std::string>>();
    out.push_back(std::move(c));
  });
  return out;
}

}  // namespace suslab::datagen
