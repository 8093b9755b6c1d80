#include "suslab/harness.hpp"

#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fstream>
#include <sstream>

#include "suslab/error.hpp"

namespace h = suslab::harness;
namespace fs = std::filesystem;
using suslab::Error;
using suslab::ErrorKind;
using suslab::suscept::SusceptibilityRecord;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("suslab_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no exception";
  return ErrorKind::Io;
}

SusceptibilityRecord record(int i, bool quad) {
  SusceptibilityRecord r;
  r.query_id = "rel" + std::to_string(i % 3) + "/Ent" + std::to_string(i) + "/open-qa";
  r.relation = "rel" + std::to_string(i % 3);
  r.form = suslab::datagen::kAllForms[i % 4];
  r.entity_kind = i % 2 ? suslab::datagen::EntityKind::Fake : suslab::datagen::EntityKind::Real;
  r.mc_sus = 0.1 * i + 1.0 / 3.0;
  r.fisher_sus = std::exp(0.37 * i);
  r.fisher_sus_per_dim = r.fisher_sus / 112.0;
  if (quad) r.quad_sus = 1e-7 * i;
  r.n_contexts = 128;
  r.k = 10;
  r.covered_mass = 0.999 - 1e-3 * i;
  r.mc_passes = {128, 0};
  r.fisher_passes = {1, 10};
  return r;
}

boost::property_tree::ptree parse_svg(const fs::path& p) {
  boost::property_tree::ptree tree;
  boost::property_tree::read_xml(p.string(), tree);
  return tree;
}

std::vector<std::pair<double, double>> circles(const boost::property_tree::ptree& svg) {
  std::vector<std::pair<double, double>> out;
  for (const auto& [tag, g] : svg.get_child("svg")) {
    if (tag != "g") continue;
    for (const auto& [ctag, c] : g) {
      if (ctag == "circle") out.emplace_back(c.get<double>("<xmlattr>.cx"), c.get<double>("<xmlattr>.cy"));
    }
  }
  return out;
}

}  // namespace

TEST(Config, RoundTripsThroughJson) {
  h::RunConfig c;
  c.apply_seed(99);
  c.estimate.n_relevant = 3;
  c.estimate.with_quad = false;
  c.model.d_model = 48;
  c.schedule.learning_rate = 0.0123456789;
  c.out_dir = "runs/x";
  const h::RunConfig back = h::parse_config(h::dump_config(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(h::dump_config(back), h::dump_config(c));
}

TEST(Config, SeedDrivesEverySubSeed) {
  const auto a = h::parse_config(R"({"seed": 1})");
  const auto b = h::parse_config(R"({"seed": 2})");
  EXPECT_EQ(a.world.seed, 1u);
  EXPECT_NE(a.corpus.seed, b.corpus.seed);
  EXPECT_NE(a.schedule.seed, b.schedule.seed);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_EQ(kind_of([] { h::parse_config(R"({"sed": 1})"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { h::parse_config(R"({"estimate": {"kk": 1}})"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { h::parse_config(R"({"estimate": {"k": "ten"}})"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { h::parse_config(R"({"estimate": {"n_contexts": 500}})"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { h::parse_config("{not json"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { h::load_config("/nonexistent/config.json"); }), ErrorKind::Config);
}

TEST(Results, CsvRoundTripIsExact) {
  const fs::path dir = scratch("csv");
  std::vector<SusceptibilityRecord> rs;
  for (int i = 0; i < 12; ++i) rs.push_back(record(i, i % 3 != 0));
  h::write_results(dir / "r.csv", rs, false);
  const auto back = h::read_results(dir / "r.csv");
  ASSERT_EQ(back.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(h::result_row(back[i], false), h::result_row(rs[i], false));
    EXPECT_EQ(back[i].mc_sus, rs[i].mc_sus);
    EXPECT_EQ(back[i].fisher_sus, rs[i].fisher_sus);
    EXPECT_EQ(back[i].quad_sus, rs[i].quad_sus);
    EXPECT_EQ(back[i].form, rs[i].form);
  }
  const std::string text = slurp(dir / "r.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), h::kResultColumns);
  EXPECT_NE(text.find(",NA,NA\n"), std::string::npos);
}

TEST(Results, SchemaErrors) {
  const fs::path dir = scratch("csv_bad");
  EXPECT_EQ(kind_of([&] { h::read_results(dir / "absent.csv"); }), ErrorKind::MissingArtifact);
  std::ofstream(dir / "bad.csv") << "query_id,mc\nx,1\n";
  EXPECT_EQ(kind_of([&] { h::read_results(dir / "bad.csv"); }), ErrorKind::MalformedHeader);
}

TEST(Svg, ParsesAndHasOneCirclePerPoint) {
  const fs::path dir = scratch("svg");
  std::vector<h::ScatterPoint> pts;
  for (int i = 0; i < 25; ++i) pts.push_back({0.04 * i, std::sin(0.3 * i) + 0.1 * i});
  h::emit_svg_scatter(pts, "x <nats> & more", "y", dir / "s.svg");
  const auto svg = parse_svg(dir / "s.svg");
  EXPECT_EQ(circles(svg).size(), pts.size());
  EXPECT_EQ(kind_of([&] { h::emit_svg_scatter({}, "x", "y", dir / "e.svg"); }), ErrorKind::Precondition);
}

TEST(Svg, TwoPointFitPassesThroughBoth) {
  const fs::path dir = scratch("svg2");
  h::emit_svg_scatter({{1.0, 2.0}, {3.0, -1.0}}, "x", "y", dir / "two.svg");
  const auto svg = parse_svg(dir / "two.svg");
  const auto cs = circles(svg);
  ASSERT_EQ(cs.size(), 2u);
  bool found = false;
  for (const auto& [tag, node] : svg.get_child("svg")) {
    if (tag != "line" || node.get<std::string>("<xmlattr>.class", "") != "fit") continue;
    found = true;
    EXPECT_NEAR(node.get<double>("<xmlattr>.x1"), cs[0].first, 0.01);
    EXPECT_NEAR(node.get<double>("<xmlattr>.y1"), cs[0].second, 0.01);
    EXPECT_NEAR(node.get<double>("<xmlattr>.x2"), cs[1].first, 0.01);
    EXPECT_NEAR(node.get<double>("<xmlattr>.y2"), cs[1].second, 0.01);
  }
  EXPECT_TRUE(found);
}

TEST(Factors, EachFactorPartitionsTheQueries) {
  std::vector<SusceptibilityRecord> rs;
  for (int i = 0; i < 40; ++i) rs.push_back(record(i, false));
  const auto rows = h::factor_table(rs, h::ReportConfig{100, 200}, 5);
  for (const std::string factor : {"form=", "openness=", "entity_kind="}) {
    for (const std::string metric : {"mc_sus_nats", "fisher_sus"}) {
      std::size_t total = 0;
      for (const auto& r : rows) {
        if (r.group.rfind(factor, 0) == 0 && r.metric == metric) {
          total += r.n;
          EXPECT_LE(r.lo, r.mean);
          EXPECT_GE(r.hi, r.mean);
        }
      }
      EXPECT_EQ(total, rs.size()) << factor << metric;
    }
  }
}

TEST(Factors, EmptyGroupIsOmittedWithWarning) {
  std::vector<SusceptibilityRecord> rs;
  for (int i = 0; i < 8; ++i) {
    rs.push_back(record(2 * i, false));  // real entities only
    rs.back().form = suslab::datagen::kAllForms[i % 4];
  }
  std::vector<std::string> warnings;
  const auto rows = h::factor_table(rs, h::ReportConfig{100, 100}, 5, [&](const std::string& m) { warnings.push_back(m); });
  for (const auto& r : rows) EXPECT_NE(r.group, "entity_kind=fake");
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("entity_kind=fake"), std::string::npos);
}

TEST(Bins, OverflowAndEdges) {
  std::vector<SusceptibilityRecord> rs(4);
  rs[0].mc_sus = 0.0;
  rs[1].mc_sus = 0.2;
  rs[2].mc_sus = 1.0;
  rs[3].mc_sus = 2.5;
  const auto bins = h::mc_bins(rs);
  ASSERT_EQ(bins.size(), 6u);
  EXPECT_EQ(bins[0].n, 1u);
  EXPECT_EQ(bins[1].n, 1u);
  EXPECT_EQ(bins[4].n, 1u);
  EXPECT_EQ(bins[5].n, 1u);
  EXPECT_TRUE(std::isnan(bins[2].mean_fisher));
}

TEST(ExitCodes, MapErrorKinds) {
  EXPECT_EQ(h::exit_code_for(Error(ErrorKind::Config, "")), 2);
  EXPECT_EQ(h::exit_code_for(Error(ErrorKind::MissingArtifact, "")), 3);
  EXPECT_EQ(h::exit_code_for(Error(ErrorKind::Numeric, "")), 4);
  EXPECT_EQ(h::exit_code_for(Error(ErrorKind::Io, "")), 1);
  EXPECT_EQ(h::exit_code_for(std::runtime_error("x")), 1);
}

TEST(Pipeline, StagesNeedTheirInputs) {
  h::RunConfig c;
  c.out_dir = scratch("missing");
  EXPECT_EQ(kind_of([&] { h::run_train(c); }), ErrorKind::MissingArtifact);
  EXPECT_EQ(kind_of([&] { h::run_estimate(c); }), ErrorKind::MissingArtifact);
  EXPECT_EQ(kind_of([&] { h::run_factors(c); }), ErrorKind::MissingArtifact);
  EXPECT_EQ(kind_of([&] { h::run_plot(c); }), ErrorKind::MissingArtifact);
}

TEST(Pipeline, TinyRunIsByteDeterministic) {
  auto run = [](const std::string& name) {
    h::RunConfig c = h::parse_config(R"({
      "seed": 3,
      "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "max_len": 32},
      "train": {"epochs": 1},
      "world": {"n_relations": 2, "n_entities_per_relation": 4, "n_novel_entities": 6},
      "estimate": {"context_pool": 16, "n_contexts": 8, "k": 3, "threads": 2},
      "report": {"permutations": 50, "bootstrap": 50}
    })");
    c.out_dir = scratch(name);
    h::run_gen_data(c);
    h::run_train(c);
    const auto reports = h::run_compare(c);
    EXPECT_EQ(reports.size(), 12u);
    h::run_factors(c);
    h::run_plot(c);
    return c.out_dir;
  };
  const fs::path a = run("det_a");
  const fs::path b = run("det_b");
  for (const char* f : {"data/world.jsonl", "data/corpus.jsonl", "data/queries.jsonl", "data/contexts.jsonl",
                        "model.ckpt", "train_report.json", "results.csv", "report.json", "bins.csv",
                        "factors.csv", "scatter_query.svg", "scatter_relation.svg"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_FALSE(fs::exists(a / "results.csv.partial"));
  EXPECT_EQ(h::read_results(a / "results.csv").size(), 2u * 4u * 4u);
}
