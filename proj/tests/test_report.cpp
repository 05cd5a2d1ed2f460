#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "chitchat/error.hpp"
#include "chitchat/report.hpp"
#include "chitchat/session.hpp"
#include "support/dialogue.hpp"
#include "support/flat_table.hpp"

using namespace chitchat;
using namespace chitchat::report;

TEST(FlatConditionTable, RendersReferenceMarks) {
  const auto table = fixture::flat_table::render_table();
  EXPECT_EQ(significance_text(table), fixture::flat_table::kExpectedText);
}

TEST(FlatConditionTable, MarksAndSigns) {
  const auto table = fixture::flat_table::render_table();
  const auto& ed = table.datasets[0];
  const auto& pc = table.datasets[1];
  const auto& fav = table.datasets[2];
  EXPECT_EQ(mark(fav.cells[4]), "**↑**");
  EXPECT_EQ(mark(ed.cells[4]), "**↓**");
  EXPECT_EQ(mark(ed.cells[0]), "↑");
  EXPECT_EQ(mark(ed.cells[9]), "↑");
  EXPECT_EQ(mark(ed.cells[10]), "↑");
  EXPECT_EQ(mark(fav.cells[9]), "↓");
  EXPECT_FALSE(pc.omnibus_significant);
  int marked = 0;
  for (const auto& d : table.datasets) {
    for (const auto& c : d.cells) {
      if (c.direction == 0) continue;
      ++marked;
      EXPECT_EQ(c.direction > 0, c.delta > 0);
    }
  }
  EXPECT_EQ(marked, 6);
  EXPECT_NEAR(fav.cells[4].mean - fav.dataset_mean, 1.85, 0.01);
}

TEST(FlatConditionTable, RowCenteringContradictsConsistencyArrow) {
  // ED consistency (4.41) sits below ED's own mean (5.06): a rater-row reading
  // gives it a negative delta, yet the table shows an up arrow.
  const auto table = fixture::flat_table::render_table(stats::Normalization::kRowCentering);
  EXPECT_LT(table.datasets[0].cells[10].delta, 0);
  EXPECT_EQ(mark(table.datasets[0].cells[10]), "↓");
  EXPECT_NE(significance_text(table), fixture::flat_table::kExpectedText);
}

TEST(Significance, CsvAndJson) {
  const auto table = fixture::flat_table::render_table();
  const auto csv = significance_csv(table);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 13);
  EXPECT_NE(csv.find("Fav,Attentiveness,8.12,"), std::string::npos);
  const auto j = significance_json(table);
  EXPECT_EQ(j["datasets"].size(), 3u);
  EXPECT_EQ(j["datasets"][2]["cells"][4]["direction"], 1);
  EXPECT_EQ(j["datasets"][2]["cells"][4]["reject_strict"], true);
  EXPECT_EQ(j["normalization"], "row");
}

TEST(PplGrid, ReferenceCell) {
  EXPECT_EQ(ppl_cell(21.32, 18.35), "21.32/18.35");
  EXPECT_EQ(ppl_cell(std::nullopt, 18.35), "-/18.35");
  EXPECT_EQ(ppl_grid_text({{"PC50k", "1.6B", "PC", 21.32, 18.35}}),
            "| Fine-tune | Size | PC |\n|---|---|---|\n| PC50k | 1.6B | 21.32/18.35 |\n");
}

TEST(PplGrid, EmptyIsHeaderOnly) {
  EXPECT_EQ(ppl_grid_text({}), "| Fine-tune | Size |\n|---|---|\n");
  EXPECT_EQ(ppl_grid_csv({}), "corpus,size\n");
}

TEST(PplGrid, MissingCellRenderedAbsent) {
  const std::vector<PplEntry> e{{"A", "1B", "X", 1.0, 2.0}, {"B", "1B", "Y", 3.0, std::nullopt}};
  EXPECT_EQ(ppl_grid_text(e),
            "| Fine-tune | Size | X | Y |\n|---|---|---|---|\n| A | 1B | 1.00/2.00 |  |\n| B | 1B |  | 3.00/- |\n");
}

TEST(PplGrid, ToyModelsMatchDirectRecomputation) {
  synth::ToyFavOptions options;
  options.train_dialogues = 300;
  options.test_dialogues = 60;
  const auto fav = synth::toy_fav(options, 31);
  const auto flat_train = fixture::fav_records(fav.train, format::Condition::kFlat);
  const auto tagged_train = fixture::fav_records(fav.train, format::Condition::kTagged);
  const auto flat_test = fixture::fav_records(fav.test, format::Condition::kFlat);
  const auto tagged_test = fixture::fav_records(fav.test, format::Condition::kTagged);

  std::vector<PplEntry> entries;
  std::vector<std::pair<double, double>> expected;
  for (int order : {1, 2, 3}) {
    const auto flat = lm::train_ngram(flat_train, {order, 0.01, false});
    const auto tagged = lm::train_ngram(tagged_train, {order, 0.01, true});
    entries.push_back({"Fav", "order-" + std::to_string(order), "Fav", lm::corpus_perplexity(flat, flat_test),
                       lm::corpus_perplexity(tagged, tagged_test)});
    // Token-weighted recomputation from per-sequence perplexities.
    auto direct = [](const lm::Scorer& m, const std::vector<format::QueryRecord>& recs) {
      double nll = 0, tokens = 0;
      for (const auto& r : recs) {
        const auto ids = m.vocabulary().encode(r.target_text);
        const double n = static_cast<double>(ids.size() + 1);
        nll += n * std::log(lm::sequence_perplexity(m, r.query_text, ids));
        tokens += n;
      }
      return std::exp(nll / tokens);
    };
    expected.emplace_back(direct(flat, flat_test), direct(tagged, tagged_test));
  }
  const auto text = ppl_grid_text(entries);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    EXPECT_NEAR(*entries[i].flat, expected[i].first, 1e-9 * expected[i].first);
    EXPECT_NEAR(*entries[i].tagged, expected[i].second, 1e-9 * expected[i].second);
    EXPECT_NE(text.find(ppl_cell(expected[i].first, expected[i].second)), std::string::npos) << text;
  }
  const auto j = ppl_grid_json(entries);
  EXPECT_EQ(j[2]["cell"], ppl_cell(expected[2].first, expected[2].second));
}

TEST(PplGrid, ReadEntries) {
  fixture::TempDir dir;
  const auto path = (dir / "ppl.jsonl").string();
  std::ofstream(path) << R"({"corpus":"PC50k","size":"1.6B","test_set":"PC","flat":21.32,"tagged":18.35})" << '\n'
                      << R"({"corpus":"PC50k","size":"1.6B","test_set":"ED","flat":30.1,"tagged":null})" << '\n';
  const auto e = read_ppl_entries(path);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_FALSE(e[1].tagged.has_value());
  std::ofstream(path, std::ios::app) << "{broken\n";
  EXPECT_THROW(read_ppl_entries(path), Error);
}

TEST(ModelSize, Suffixes) {
  EXPECT_DOUBLE_EQ(*parse_model_size("m-0.35B"), 0.35e9);
  EXPECT_DOUBLE_EQ(*parse_model_size("x_350M"), 3.5e8);
  EXPECT_DOUBLE_EQ(*parse_model_size("toy-Fav-1.6B"), 1.6e9);
  EXPECT_FALSE(parse_model_size("plain").has_value());
  EXPECT_FALSE(parse_model_size("m-B").has_value());
  EXPECT_FALSE(parse_model_size("m-1.2.3B").has_value());
}

TEST(ScoredSessions, FromExportToSeries) {
  auto registry = std::make_shared<session::ModelRegistry>();
  const std::vector<std::string> sizes{"0.35B", "0.7B", "1.1B", "1.6B"};
  for (const auto& s : sizes) registry->add("toy-Fav-" + s, fixture::toy_model());
  registry->add("toy-mix-1.6B", fixture::toy_model());
  registry->add("toy", fixture::toy_model());
  session::SessionStore store(registry, std::nullopt, fixture::counting_clock(), 1);
  session::ProtocolConfig one;
  one.turns_per_side = 1;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    for (int rater = 0; rater < 2; ++rater) {
      auto spec = fixture::toy_spec(2);
      spec.model_id = "toy-Fav-" + sizes[i];
      const auto id = fixture::run_dialogue(store, spec, i, {"x"}, one);
      store.submit_evaluation(id, fixture::uniform_scores(static_cast<int>(3 + i)), "r" + std::to_string(rater));
    }
  }
  auto mix = fixture::toy_spec(2);
  mix.model_id = "toy-mix-1.6B";
  mix.condition = format::Condition::kMixedFlat;
  store.submit_evaluation(fixture::run_dialogue(store, mix, 9, {"x"}, one), fixture::uniform_scores(5), "r0");
  fixture::run_dialogue(store, fixture::toy_spec(2), 10, {"x"}, one);  // never evaluated

  const auto sessions = scored_sessions(store.export_dialogues());
  ASSERT_EQ(sessions.size(), 9u);
  EXPECT_EQ(sessions.back().dataset, "Mix");
  const auto matrices = score_matrices(sessions);
  ASSERT_EQ(matrices.size(), 2u);
  EXPECT_EQ(matrices[0].dataset, "Fav");
  EXPECT_EQ(matrices[0].rows.size(), 8u);

  const auto series = size_series(sessions);
  ASSERT_EQ(series.size(), 2u);
  EXPECT_EQ(series[0].sizes.size(), 4u);
  EXPECT_DOUBLE_EQ(series[0].mean_scores[0], 3.0);
  EXPECT_NEAR(*series[0].correlation.rho, 1.0, 1e-12);
  EXPECT_NEAR(*series[0].correlation.p_value, 2.0 / 24.0, 1e-12);
  EXPECT_FALSE(series[1].correlation.rho.has_value());
  EXPECT_NE(size_series_text(series).find("undefined"), std::string::npos);
  EXPECT_EQ(size_series_json(series)[0]["method"], "spearman-exact");
}
