#include "suslab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "suslab/checkpoint.hpp"
#include "suslab/dataset_io.hpp"
#include "suslab/error.hpp"
#include "suslab/seeding.hpp"
#include "suslab/stats.hpp"

namespace suslab::harness {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using suscept::SusceptibilityRecord;

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

// --- config (de)serialization ----------------------------------------------

/// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    require(j.is_object(), ErrorKind::Config, "config section '" + name_ + "' must be an object");
  }
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, "config key '" + name_ + "." + key + "': " + e.what());
    }
  }
  void optional_int(const char* key, std::optional<int>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    int v = 0;
    get(key, v);
    out = v;
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      require(seen_.contains(key), ErrorKind::Config, "unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.generic_string();
  j["model"] = {{"d_model", c.model.d_model},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},
                {"max_len", c.model.max_len},
                {"mlp_mult", c.model.mlp_mult}};
  const auto& s = c.schedule;
  j["train"] = {{"epochs", s.epochs},
                {"batch_size", s.batch_size},
                {"learning_rate", s.learning_rate},
                {"min_lr_fraction", s.min_lr_fraction},
                {"beta1", s.beta1},
                {"beta2", s.beta2},
                {"adam_eps", s.adam_eps},
                {"grad_clip", s.grad_clip},
                {"warmup_steps", s.warmup_steps},
                {"max_start_offset", s.max_start_offset},
                {"holdout_fraction", s.holdout_fraction}};
  const auto& w = c.world;
  j["world"] = {{"n_relations", w.n_relations},
                {"n_entities_per_relation", w.n_entities_per_relation},
                {"answers_per_type", w.answers_per_type},
                {"n_novel_entities", w.n_novel_entities},
                {"vocab_capacity", w.vocab_capacity},
                {"closed_true_fraction", w.closed_true_fraction}};
  j["corpus"] = {{"facts_per_entity", c.corpus.facts_per_entity}, {"distractor_ratio", c.corpus.distractor_ratio}};
  const auto& e = c.estimate;
  j["estimate"] = {{"context_pool", e.context_pool},
                   {"n_contexts", e.n_contexts},
                   {"n_relevant", e.n_relevant ? json(*e.n_relevant) : json(nullptr)},
                   {"k", e.k},
                   {"context_slots", e.context_slots},
                   {"with_quad", e.with_quad},
                   {"timings", e.timings},
                   {"threads", e.threads}};
  j["report"] = {{"permutations", c.report.permutations}, {"bootstrap", c.report.bootstrap}};
  j["bench"] = {{"queries", c.bench.queries},
                {"repetitions", c.bench.repetitions},
                {"n_contexts", c.bench.n_contexts},
                {"k", c.bench.k}};
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Section top(j, "config");
  top.get("seed", c.seed);
  std::string out = c.out_dir.generic_string();
  top.get("out_dir", out);
  c.out_dir = out;
  if (const json* m = top.sub("model")) {
    Section s(*m, "model");
    s.get("d_model", c.model.d_model);
    s.get("n_layers", c.model.n_layers);
    s.get("n_heads", c.model.n_heads);
    s.get("max_len", c.model.max_len);
    s.get("mlp_mult", c.model.mlp_mult);
    s.finish();
  }
  if (const json* m = top.sub("train")) {
    Section s(*m, "train");
    auto& t = c.schedule;
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("learning_rate", t.learning_rate);
    s.get("min_lr_fraction", t.min_lr_fraction);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("adam_eps", t.adam_eps);
    s.get("grad_clip", t.grad_clip);
    s.get("warmup_steps", t.warmup_steps);
    s.get("max_start_offset", t.max_start_offset);
    s.get("holdout_fraction", t.holdout_fraction);
    s.finish();
  }
  if (const json* m = top.sub("world")) {
    Section s(*m, "world");
    auto& w = c.world;
    s.get("n_relations", w.n_relations);
    s.get("n_entities_per_relation", w.n_entities_per_relation);
    s.get("answers_per_type", w.answers_per_type);
    s.get("n_novel_entities", w.n_novel_entities);
    s.get("vocab_capacity", w.vocab_capacity);
    s.get("closed_true_fraction", w.closed_true_fraction);
    s.finish();
  }
  if (const json* m = top.sub("corpus")) {
    Section s(*m, "corpus");
    s.get("facts_per_entity", c.corpus.facts_per_entity);
    s.get("distractor_ratio", c.corpus.distractor_ratio);
    s.finish();
  }
  if (const json* m = top.sub("estimate")) {
    Section s(*m, "estimate");
    auto& e = c.estimate;
    s.get("context_pool", e.context_pool);
    s.get("n_contexts", e.n_contexts);
    s.optional_int("n_relevant", e.n_relevant);
    s.get("k", e.k);
    s.get("context_slots", e.context_slots);
    s.get("with_quad", e.with_quad);
    s.get("timings", e.timings);
    s.get("threads", e.threads);
    s.finish();
  }
  if (const json* m = top.sub("report")) {
    Section s(*m, "report");
    s.get("permutations", c.report.permutations);
    s.get("bootstrap", c.report.bootstrap);
    s.finish();
  }
  if (const json* m = top.sub("bench")) {
    Section s(*m, "bench");
    s.get("queries", c.bench.queries);
    s.get("repetitions", c.bench.repetitions);
    s.get("n_contexts", c.bench.n_contexts);
    s.get("k", c.bench.k);
    s.finish();
  }
  top.finish();
  c.apply_seed(c.seed);
  c.validate();
  return c;
}

// --- artifacts --------------------------------------------------------------

void require_artifact(const fs::path& p, const std::string& producer) {
  require(fs::exists(p), ErrorKind::MissingArtifact,
          "missing " + p.string() + "; run `suslab " + producer + "` first");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string num(double v) { return fmt("%.17g", v); }

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct Loaded {
  datagen::World world;
  std::vector<datagen::QueryRecord> queries;
  std::map<std::string, std::vector<datagen::ContextRecord>> pools;
  toylm::ModelParams params;
};

toylm::ModelConfig model_config(const RunConfig& c, const datagen::World& w) {
  toylm::ModelConfig m = c.model;
  m.vocab_size = static_cast<int>(w.vocab.size());
  return m;
}

Loaded load_for_estimation(const RunConfig& c) {
  const Layout L{c.out_dir};
  require_artifact(L.world(), "gen-data");
  require_artifact(L.queries(), "gen-data");
  require_artifact(L.contexts(), "gen-data");
  require_artifact(L.checkpoint(), "train");
  Loaded d;
  d.world = datagen::read_world(L.world());
  d.queries = datagen::read_queries(L.queries());
  for (auto& ctx : datagen::read_contexts(L.contexts())) d.pools[ctx.relation].push_back(std::move(ctx));
  const auto expected = model_config(c, d.world);
  d.params = toylm::load_checkpoint(L.checkpoint(), &expected);
  return d;
}

int context_slots_for(const RunConfig& c, const Loaded& d) {
  const int slots = c.estimate.context_slots > 0 ? c.estimate.context_slots : datagen::max_context_length(d.world);
  std::size_t longest_query = 0;
  for (const auto& q : d.queries) longest_query = std::max(longest_query, q.token_ids.size());
  require(slots + static_cast<int>(longest_query) <= d.params.config.max_len, ErrorKind::Config,
          "context window " + std::to_string(slots) + " plus query length " + std::to_string(longest_query) +
              " exceeds max_len " + std::to_string(d.params.config.max_len));
  return slots;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::MalformedHeader, "results column " + what + " is not a number: '" + s + "'");
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::vector<ScatterPoint> per_query_points(const std::vector<SusceptibilityRecord>& rs) {
  std::vector<ScatterPoint> pts;
  for (const auto& r : rs) pts.push_back({r.mc_sus, r.fisher_sus});
  return pts;
}

/// Mean (mc, fisher) per relation in first-seen order.
std::vector<std::pair<std::string, ScatterPoint>> relation_means(const std::vector<SusceptibilityRecord>& rs,
                                                                 double (*metric)(const SusceptibilityRecord&)) {
  std::vector<std::pair<std::string, ScatterPoint>> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::size_t> counts;
  for (const auto& r : rs) {
    auto [it, fresh] = index.try_emplace(r.relation, out.size());
    if (fresh) {
      out.push_back({r.relation, {0.0, 0.0}});
      counts.push_back(0);
    }
    out[it->second].second.x += r.mc_sus;
    out[it->second].second.y += metric(r);
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].second.x /= static_cast<double>(counts[i]);
    out[i].second.y /= static_cast<double>(counts[i]);
  }
  return out;
}

double metric_raw(const SusceptibilityRecord& r) { return r.fisher_sus; }
double metric_per_dim(const SusceptibilityRecord& r) { return r.fisher_sus_per_dim; }

void write_plots(const Layout& L, const std::vector<SusceptibilityRecord>& rs) {
  emit_svg_scatter(per_query_points(rs), "Monte Carlo susceptibility (nats)", "Fisher susceptibility",
                   L.scatter_query());
  std::vector<ScatterPoint> rel;
  for (const auto& [_, p] : relation_means(rs, metric_raw)) rel.push_back(p);
  emit_svg_scatter(rel, "mean Monte Carlo susceptibility per relation (nats)",
                   "mean Fisher susceptibility per relation", L.scatter_relation());
}

void write_bins(const Layout& L, const std::vector<BinRow>& bins) {
  std::string text = "bin,n,mean_fisher\n";
  for (const auto& b : bins) text += b.bin + "," + std::to_string(b.n) + "," + num(b.mean_fisher) + "\n";
  write_text(L.bins(), text);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// --- RunConfig --------------------------------------------------------------

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  world.seed = s;
  corpus.seed = derive_seed(s, "corpus");
  schedule.seed = derive_seed(s, "train");
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::Config, "invalid config: " + what); };
  check(model.d_model > 0 && model.n_heads > 0 && model.d_model % model.n_heads == 0,
        "model.d_model must be a positive multiple of model.n_heads");
  check(model.n_layers >= 1 && model.max_len >= 2 && model.mlp_mult >= 1, "model sizes must be positive");
  check(schedule.epochs >= 0 && schedule.batch_size >= 1 && schedule.learning_rate > 0.0, "train schedule");
  check(schedule.holdout_fraction >= 0.0 && schedule.holdout_fraction < 1.0, "train.holdout_fraction in [0,1)");
  check(world.n_relations >= 1 && world.n_entities_per_relation >= 1, "world sizes must be positive");
  check(world.answers_per_type >= 2, "world.answers_per_type >= 2");
  check(world.closed_true_fraction >= 0.0 && world.closed_true_fraction <= 1.0, "world.closed_true_fraction");
  check(corpus.facts_per_entity >= 1 && corpus.distractor_ratio >= 0.0, "corpus knobs");
  check(estimate.n_contexts >= 1 && estimate.context_pool >= estimate.n_contexts,
        "estimate.n_contexts must be in [1, estimate.context_pool]");
  check(!estimate.n_relevant || (*estimate.n_relevant >= 0 && *estimate.n_relevant <= estimate.n_contexts),
        "estimate.n_relevant in [0, n_contexts]");
  check(estimate.k >= 1, "estimate.k >= 1");
  check(estimate.context_slots >= 0 && estimate.threads >= 0, "estimate.context_slots and threads >= 0");
  check(report.permutations >= 1 && report.bootstrap >= 1, "report resample counts >= 1");
  check(bench.queries >= 1 && bench.repetitions >= 1 && bench.n_contexts >= 1 && bench.k >= 1, "bench knobs");
  check(!out_dir.empty(), "out_dir must be set");
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

std::string dump_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

// --- stages -----------------------------------------------------------------

void run_gen_data(const RunConfig& c, const Log& log) {
  c.validate();
  const Layout L{c.out_dir};
  fs::create_directories(L.root / "data");
  write_text(L.resolved_config(), dump_config(c));
  const auto world = datagen::gen_world(c.world);
  datagen::write_world(L.world(), world);
  const auto corpus = datagen::gen_corpus(world, c.corpus);
  datagen::write_corpus(L.corpus(), corpus);
  const auto queries = datagen::gen_queries(world);
  datagen::write_queries(L.queries(), queries);
  std::vector<datagen::ContextRecord> contexts;
  for (const auto& r : world.relations) {
    auto pool = datagen::gen_contexts(world, r.name, c.estimate.context_pool, derive_seed(c.seed, "pools"));
    contexts.insert(contexts.end(), pool.begin(), pool.end());
  }
  datagen::write_contexts(L.contexts(), contexts);
  say(log, "gen-data: " + std::to_string(world.vocab.size()) + " tokens, " + std::to_string(corpus.size()) +
               " corpus sequences, " + std::to_string(queries.size()) + " queries, " +
               std::to_string(contexts.size()) + " contexts");
}

toylm::TrainReport run_train(const RunConfig& c, const Log& log) {
  c.validate();
  const Layout L{c.out_dir};
  require_artifact(L.world(), "gen-data");
  require_artifact(L.corpus(), "gen-data");
  const auto world = datagen::read_world(L.world());
  const auto corpus = datagen::read_corpus(L.corpus());
  const auto cfg = model_config(c, world);
  auto init = toylm::ModelParams::random(cfg, derive_seed(c.seed, "init"));
  auto result = toylm::train(std::move(init), corpus, c.schedule, [&](int epoch, double loss) {
    if (log && ((epoch + 1) % 5 == 0 || epoch + 1 == c.schedule.epochs)) {
      say(log, "train: epoch " + std::to_string(epoch + 1) + "/" + std::to_string(c.schedule.epochs) +
                   " loss " + fmt("%.4f", loss));
    }
  });
  toylm::save_checkpoint(result.params, L.checkpoint());
  const auto& r = result.report;
  json rep = {{"initial_heldout_loss", r.initial_heldout_loss},
              {"final_heldout_loss", r.final_heldout_loss},
              {"epoch_train_loss", r.epoch_train_loss},
              {"steps", r.steps},
              {"train_sequences", r.train_sequences},
              {"heldout_sequences", r.heldout_sequences},
              {"parameters", result.params.parameter_count()}};
  write_text(L.train_report(), rep.dump(2) + "\n");
  say(log, "train: held-out loss " + fmt("%.4f", r.initial_heldout_loss) + " -> " +
               fmt("%.4f", r.final_heldout_loss));
  return r;
}

std::vector<SusceptibilityRecord> run_estimate(const RunConfig& c, const Log& log) {
  c.validate();
  const Layout L{c.out_dir};
  const Loaded d = load_for_estimation(c);
  suscept::EstimateOptions opt;
  opt.n_contexts = static_cast<std::size_t>(c.estimate.n_contexts);
  if (c.estimate.n_relevant) opt.n_relevant = static_cast<std::size_t>(*c.estimate.n_relevant);
  opt.k = c.estimate.k;
  opt.context_slots = context_slots_for(c, d);
  opt.with_quad = c.estimate.with_quad;
  opt.seed = derive_seed(c.seed, "contexts");

  const std::size_t n = d.queries.size();
  std::vector<std::optional<SusceptibilityRecord>> done(n);
  const fs::path partial = L.results().string() + ".partial";
  std::ofstream out(partial, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + partial.string());
  out << kResultColumns << '\n';
  out.flush();

  // Workers fill slots in any order; rows are flushed in query order.
  std::mutex mu;
  std::size_t flushed = 0;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (error) return;
      }
      try {
        const auto& q = d.queries[i];
        const auto pool = d.pools.find(q.relation);
        require(pool != d.pools.end(), ErrorKind::MissingArtifact, "no context pool for relation " + q.relation);
        auto rec = suscept::estimate_query(d.params, q, pool->second, opt);
        std::lock_guard<std::mutex> lock(mu);
        done[i] = std::move(rec);
        while (flushed < n && done[flushed]) {
          out << result_row(*done[flushed], c.estimate.timings) << '\n';
          ++flushed;
          if (flushed % 100 == 0) say(log, "estimate: " + std::to_string(flushed) + "/" + std::to_string(n));
        }
        out.flush();
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned threads = c.estimate.threads > 0 ? static_cast<unsigned>(c.estimate.threads) : hw;
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  out.close();
  if (error) std::rethrow_exception(error);

  fs::rename(partial, L.results());
  std::vector<SusceptibilityRecord> records;
  records.reserve(n);
  for (auto& r : done) records.push_back(std::move(*r));
  say(log, "estimate: wrote " + L.results().string());
  return records;
}

std::vector<CorrelationReport> correlation_reports(const std::vector<SusceptibilityRecord>& records,
                                                   const ReportConfig& config, std::uint64_t seed) {
  std::vector<CorrelationReport> out;
  const std::pair<const char*, double (*)(const SusceptibilityRecord&)> metrics[] = {
      {"fisher_sus", metric_raw}, {"fisher_sus_per_dim", metric_per_dim}};
  for (const char* split : {"overall", "open", "closed"}) {
    std::vector<SusceptibilityRecord> subset;
    for (const auto& r : records) {
      const std::string o = datagen::to_string(r.form.openness);
      if (std::string(split) == "overall" || o == split) subset.push_back(r);
    }
    for (const auto& [metric, fn] : metrics) {
      for (const char* grouping : {"per-query", "per-relation-mean"}) {
        std::vector<double> x;
        std::vector<double> y;
        if (std::string(grouping) == "per-query") {
          for (const auto& r : subset) {
            x.push_back(r.mc_sus);
            y.push_back(fn(r));
          }
        } else {
          for (const auto& [_, p] : relation_means(subset, fn)) {
            x.push_back(p.x);
            y.push_back(p.y);
          }
        }
        CorrelationReport rep{split, grouping, metric, x.size(), NAN, NAN, NAN};
        try {
          rep.pearson = stats::pearson(x, y);
          rep.spearman = stats::spearman(x, y);
          rep.p_value = stats::permutation_pvalue(
              x, y, stats::Correlation::Spearman, config.permutations,
              derive_seed(seed, std::string("perm/") + split + "/" + grouping + "/" + metric));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::UndefinedStatistic && e.kind() != ErrorKind::Precondition) throw;
        }
        out.push_back(rep);
      }
    }
  }
  return out;
}

std::vector<CorrelationReport> run_compare(const RunConfig& c, const Log& log) {
  const Layout L{c.out_dir};
  const auto records = run_estimate(c, log);
  const auto reports = correlation_reports(records, c.report, c.seed);
  json j;
  j["n_queries"] = records.size();
  j["n_contexts"] = c.estimate.n_contexts;
  j["k"] = c.estimate.k;
  json rows = json::array();
  for (const auto& r : reports) {
    rows.push_back({{"split", r.split},
                    {"grouping", r.grouping},
                    {"metric", r.metric},
                    {"n", r.n},
                    {"pearson", nullable(r.pearson)},
                    {"spearman", nullable(r.spearman)},
                    {"p_value", nullable(r.p_value)}});
  }
  j["correlations"] = rows;
  const auto bins = mc_bins(records);
  json bj = json::array();
  for (const auto& b : bins) bj.push_back({{"bin", b.bin}, {"n", b.n}, {"mean_fisher", nullable(b.mean_fisher)}});
  j["mc_bins"] = bj;
  write_text(L.report(), j.dump(2) + "\n");
  write_bins(L, bins);
  write_plots(L, records);
  for (const auto& r : reports) {
    if (r.metric != std::string("fisher_sus")) continue;
    say(log, "compare: " + r.split + " " + r.grouping + " n=" + std::to_string(r.n) + " pearson " +
                 fmt("%.3f", r.pearson) + " spearman " + fmt("%.3f", r.spearman) + " p " + fmt("%.4g", r.p_value));
  }
  return reports;
}

std::vector<FactorRow> factor_table(const std::vector<SusceptibilityRecord>& records, const ReportConfig& config,
                                    std::uint64_t seed, const Log& log) {
  using Key = std::string (*)(const SusceptibilityRecord&);
  const std::pair<const char*, Key> factors[] = {
      {"form", [](const SusceptibilityRecord& r) { return datagen::to_string(r.form.style); }},
      {"openness", [](const SusceptibilityRecord& r) { return datagen::to_string(r.form.openness); }},
      {"entity_kind", [](const SusceptibilityRecord& r) { return datagen::to_string(r.entity_kind); }},
  };
  const std::pair<const char*, std::vector<const char*>> levels[] = {
      {"form", {"qa", "completion"}}, {"openness", {"open", "closed"}}, {"entity_kind", {"real", "fake"}}};
  std::vector<FactorRow> out;
  for (std::size_t f = 0; f < std::size(factors); ++f) {
    for (const char* level : levels[f].second) {
      const std::string group = std::string(factors[f].first) + "=" + level;
      std::vector<double> mc;
      std::vector<double> fi;
      for (const auto& r : records) {
        if (factors[f].second(r) != level) continue;
        mc.push_back(r.mc_sus);
        fi.push_back(r.fisher_sus);
      }
      if (mc.empty()) {
        say(log, "factors: group " + group + " is empty; omitted");
        continue;
      }
      for (const auto& [metric, values] : {std::pair{"mc_sus_nats", &mc}, std::pair{"fisher_sus", &fi}}) {
        const auto iv = stats::bootstrap_mean(*values, config.bootstrap,
                                              derive_seed(seed, "bootstrap/" + group + "/" + metric));
        out.push_back({group, metric, iv.mean, iv.lo, iv.hi, values->size()});
      }
    }
  }
  return out;
}

std::vector<FactorRow> run_factors(const RunConfig& c, const Log& log) {
  const Layout L{c.out_dir};
  require_artifact(L.results(), "compare");
  const auto rows = factor_table(read_results(L.results()), c.report, c.seed, log);
  std::string text = "group,metric,mean,lo,hi,n\n";
  for (const auto& r : rows) {
    text += r.group + "," + r.metric + "," + num(r.mean) + "," + num(r.lo) + "," + num(r.hi) + "," +
            std::to_string(r.n) + "\n";
  }
  write_text(L.factors(), text);
  say(log, "factors: wrote " + L.factors().string());
  return rows;
}

BenchResult run_bench(const RunConfig& c, const Log& log) {
  c.validate();
  const Layout L{c.out_dir};
  Loaded d = load_for_estimation(c);
  const int slots = context_slots_for(c, d);
  const auto& b = c.bench;
  // The bench draws its own pools so that n_c may exceed the estimate pool.
  const int pool_size = b.n_contexts + 64;
  std::map<std::string, std::vector<datagen::ContextRecord>> pools;
  for (const auto& r : d.world.relations) {
    pools[r.name] = datagen::gen_contexts(d.world, r.name, pool_size, derive_seed(c.seed, "bench-pools"));
  }
  const std::size_t total = d.queries.size();
  const std::size_t nq = std::min<std::size_t>(static_cast<std::size_t>(b.queries), total);
  std::vector<const datagen::QueryRecord*> picked;
  for (std::size_t i = 0; i < nq; ++i) picked.push_back(&d.queries[i * total / nq]);

  std::vector<suscept::ContextSample> samples;
  for (const auto* q : picked) {
    samples.push_back(suscept::sample_contexts(pools[q->relation], q->entity, static_cast<std::size_t>(b.n_contexts),
                                               suscept::default_relevant_count(static_cast<std::size_t>(b.n_contexts)),
                                               derive_seed(c.seed, "bench/" + q->query_id)));
  }

  using Clock = std::chrono::steady_clock;
  BenchResult res;
  res.queries = nq;
  res.repetitions = b.repetitions;
  res.n_contexts = b.n_contexts;
  res.k = b.k;
  std::vector<double> mc_ms;
  std::vector<double> fi_ms;
  double sink = 0.0;
  for (int rep = -1; rep < b.repetitions; ++rep) {  // rep -1 warms caches
    fisher::PassCounter mc_c;
    fisher::PassCounter fi_c;
    auto t0 = Clock::now();
    for (std::size_t i = 0; i < nq; ++i) sink += suscept::mc_susceptibility(d.params, picked[i]->token_ids, samples[i], slots, &mc_c);
    const double mc = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    t0 = Clock::now();
    for (std::size_t i = 0; i < nq; ++i) sink += suscept::fisher_susceptibility(d.params, picked[i]->token_ids, b.k, &fi_c).trace.value;
    const double fi = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    if (rep < 0) continue;
    mc_ms.push_back(mc / static_cast<double>(nq));
    fi_ms.push_back(fi / static_cast<double>(nq));
    res.mc_passes = {mc_c.forwards / nq, mc_c.backwards / nq};
    res.fisher_passes = {fi_c.forwards / nq, fi_c.backwards / nq};
  }
  require(std::isfinite(sink), ErrorKind::Numeric, "benchmark produced non-finite estimates");
  res.mc_ms_median = median(mc_ms);
  res.fisher_ms_median = median(fi_ms);
  res.ratio = res.mc_ms_median / res.fisher_ms_median;
  res.expected_ratio = static_cast<double>(b.n_contexts) / (2.0 * b.k + 1.0);

  json j = {{"config", to_json(c)["bench"]},
            {"queries", res.queries},
            {"repetitions", res.repetitions},
            {"mc_forwards_per_query", res.mc_passes.forwards},
            {"mc_backwards_per_query", res.mc_passes.backwards},
            {"fisher_forwards_per_query", res.fisher_passes.forwards},
            {"fisher_backwards_per_query", res.fisher_passes.backwards},
            {"mc_ms_median", res.mc_ms_median},
            {"fisher_ms_median", res.fisher_ms_median},
            {"ratio", res.ratio},
            {"expected_ratio", res.expected_ratio}};
  write_text(L.bench(), j.dump(2) + "\n");
  say(log, "bench: n_c=" + std::to_string(b.n_contexts) + " K=" + std::to_string(b.k) + " MC " +
               fmt("%.3f", res.mc_ms_median) + " ms/query, Fisher " + fmt("%.3f", res.fisher_ms_median) +
               " ms/query, ratio " + fmt("%.1f", res.ratio) + "x (count model " + fmt("%.1f", res.expected_ratio) +
               "x)");
  return res;
}

void run_plot(const RunConfig& c, const Log& log) {
  const Layout L{c.out_dir};
  require_artifact(L.results(), "compare");
  const auto records = read_results(L.results());
  write_plots(L, records);
  write_bins(L, mc_bins(records));
  say(log, "plot: wrote " + L.scatter_query().string() + " and " + L.scatter_relation().string());
}

// --- artifacts --------------------------------------------------------------

std::string result_row(const SusceptibilityRecord& r, bool timings) {
  std::string s;
  s += r.query_id + "," + r.relation + "," + datagen::to_string(r.form) + "," +
       datagen::to_string(r.form.openness) + "," + datagen::to_string(r.entity_kind) + ",";
  s += num(r.mc_sus) + "," + num(r.fisher_sus) + "," + num(r.fisher_sus_per_dim) + ",";
  s += (r.quad_sus ? num(*r.quad_sus) : std::string("NA")) + ",";
  s += std::to_string(r.n_contexts) + "," + std::to_string(r.k) + "," + num(r.covered_mass) + ",";
  s += std::to_string(r.mc_passes.forwards) + "," + std::to_string(r.fisher_passes.backwards) + ",";
  s += timings ? fmt("%.3f", r.mc_ms) + "," + fmt("%.3f", r.fisher_ms) : std::string("NA,NA");
  return s;
}

void write_results(const fs::path& path, const std::vector<SusceptibilityRecord>& records, bool timings) {
  std::string text = std::string(kResultColumns) + "\n";
  for (const auto& r : records) text += result_row(r, timings) + "\n";
  write_text(path, text);
}

std::vector<SusceptibilityRecord> read_results(const fs::path& path) {
  require(fs::exists(path), ErrorKind::MissingArtifact, "missing " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == kResultColumns, ErrorKind::MalformedHeader,
          path.string() + " does not have the results column header");
  const std::size_t ncols = split_csv(kResultColumns).size();
  std::vector<SusceptibilityRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    require(f.size() == ncols, ErrorKind::MalformedHeader, "results row has " + std::to_string(f.size()) + " fields");
    SusceptibilityRecord r;
    r.query_id = f[0];
    r.relation = f[1];
    r.form = datagen::parse_form(f[2]);
    r.entity_kind = datagen::parse_entity_kind(f[4]);
    r.mc_sus = parse_double(f[5], "mc_sus_nats");
    r.fisher_sus = parse_double(f[6], "fisher_sus");
    r.fisher_sus_per_dim = parse_double(f[7], "fisher_sus_per_dim");
    if (f[8] != "NA") r.quad_sus = parse_double(f[8], "quad_sus");
    r.n_contexts = static_cast<std::size_t>(parse_double(f[9], "n_contexts"));
    r.k = static_cast<int>(parse_double(f[10], "K"));
    r.covered_mass = parse_double(f[11], "covered_mass");
    r.mc_passes.forwards = static_cast<std::size_t>(parse_double(f[12], "mc_forwards"));
    r.fisher_passes.forwards = 1;
    r.fisher_passes.backwards = static_cast<std::size_t>(parse_double(f[13], "fisher_backwards"));
    if (f[14] != "NA") r.mc_ms = parse_double(f[14], "mc_ms");
    if (f[15] != "NA") r.fisher_ms = parse_double(f[15], "fisher_ms");
    out.push_back(std::move(r));
  }
  return out;
}

void emit_svg_scatter(const std::vector<ScatterPoint>& points, const std::string& x_label, const std::string& y_label,
                      const fs::path& path) {
  require(!points.empty(), ErrorKind::Precondition, "scatter plot needs at least one point");
  constexpr double W = 640;
  constexpr double H = 480;
  constexpr double left = 80;
  constexpr double right = 20;
  constexpr double top = 20;
  constexpr double bottom = 60;
  double x0 = points[0].x;
  double x1 = x0;
  double y0 = points[0].y;
  double y1 = y0;
  for (const auto& p : points) {
    require(std::isfinite(p.x) && std::isfinite(p.y), ErrorKind::Numeric, "scatter point is not finite");
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad_x = 0.05 * (x1 - x0);
  const double pad_y = 0.05 * (y1 - y0);
  x0 -= pad_x;
  x1 += pad_x;
  y0 -= pad_y;
  y1 += pad_y;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
  auto sy = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  s += "<g stroke=\"black\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + fmt("%.2f", left) + "\" y1=\"" + fmt("%.2f", H - bottom) + "\" x2=\"" + fmt("%.2f", W - right) +
       "\" y2=\"" + fmt("%.2f", H - bottom) + "\"/>\n";
  s += "<line x1=\"" + fmt("%.2f", left) + "\" y1=\"" + fmt("%.2f", top) + "\" x2=\"" + fmt("%.2f", left) +
       "\" y2=\"" + fmt("%.2f", H - bottom) + "\"/>\n";
  s += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    s += "<text x=\"" + fmt("%.2f", sx(xv)) + "\" y=\"" + fmt("%.2f", H - bottom + 16) +
         "\" text-anchor=\"middle\">" + fmt("%.3g", xv) + "</text>\n";
    s += "<text x=\"" + fmt("%.2f", left - 6) + "\" y=\"" + fmt("%.2f", sy(yv) + 4) + "\" text-anchor=\"end\">" +
         fmt("%.3g", yv) + "</text>\n";
  }
  s += "<text x=\"" + fmt("%.2f", (left + W - right) / 2) + "\" y=\"" + fmt("%.2f", H - 16) +
       "\" text-anchor=\"middle\" font-size=\"13\">" + xml_escape(x_label) + "</text>\n";
  s += "<text transform=\"translate(18 " + fmt("%.2f", (top + H - bottom) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\" font-size=\"13\">" + xml_escape(y_label) + "</text>\n";
  s += "</g>\n<g fill=\"steelblue\" fill-opacity=\"0.6\">\n";
  for (const auto& p : points) {
    s += "<circle cx=\"" + fmt("%.2f", sx(p.x)) + "\" cy=\"" + fmt("%.2f", sy(p.y)) + "\" r=\"3\"/>\n";
  }
  s += "</g>\n";
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& p : points) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  if (points.size() >= 2 && *std::max_element(xs.begin(), xs.end()) > *std::min_element(xs.begin(), xs.end())) {
    const auto [a, b] = stats::least_squares(xs, ys);
    const double lx0 = *std::min_element(xs.begin(), xs.end());
    const double lx1 = *std::max_element(xs.begin(), xs.end());
    s += "<line class=\"fit\" x1=\"" + fmt("%.2f", sx(lx0)) + "\" y1=\"" + fmt("%.2f", sy(a + b * lx0)) + "\" x2=\"" +
         fmt("%.2f", sx(lx1)) + "\" y2=\"" + fmt("%.2f", sy(a + b * lx1)) +
         "\" stroke=\"firebrick\" stroke-width=\"1.5\"/>\n";
  }
  s += "</svg>\n";
  write_text(path, s);
}

std::vector<BinRow> mc_bins(const std::vector<SusceptibilityRecord>& records) {
  std::vector<BinRow> bins;
  for (int i = 0; i < 5; ++i) bins.push_back({fmt("%.1f", i * 0.2) + "-" + fmt("%.1f", (i + 1) * 0.2), 0, 0.0});
  bins.push_back({">1.0", 0, 0.0});
  for (const auto& r : records) {
    const std::size_t b = r.mc_sus > 1.0 ? 5 : std::min<std::size_t>(4, static_cast<std::size_t>(std::max(0.0, r.mc_sus) / 0.2));
    ++bins[b].n;
    bins[b].mean_fisher += r.fisher_sus;
  }
  for (auto& b : bins) b.mean_fisher = b.n == 0 ? NAN : b.mean_fisher / static_cast<double>(b.n);
  return bins;
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::Config: return 2;
      case ErrorKind::MissingArtifact: return 3;
      case ErrorKind::Numeric: return 4;
      default: return 1;
    }
  }
  return 1;
}

}  // namespace suslab::harness
