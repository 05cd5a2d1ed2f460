#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "chitchat/error.hpp"
#include "chitchat/formatter.hpp"
#include "chitchat/unicode.hpp"
#include "support/fixtures.hpp"

using namespace chitchat;
using namespace chitchat::format;

namespace {

std::string golden(const std::string& name) {
  std::ifstream in(std::string(CHITCHAT_SOURCE_DIR) + "/tests/golden/" + name, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Utterance> utterances_of_lengths(const std::vector<std::size_t>& lengths) {
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    out.push_back({i % 2 == 0 ? Speaker::kSpk1 : Speaker::kSpk2,
                   std::string(lengths[i], static_cast<char>('a' + i % 26))});
  }
  return out;
}

// Longest suffix satisfying both budgets, found by trying every suffix.
std::size_t oracle_suffix(const std::vector<std::size_t>& lengths, std::size_t max_utt,
                          std::size_t max_chars) {
  std::size_t best = 1;
  for (std::size_t k = 1; k <= lengths.size(); ++k) {
    std::size_t total = 0;
    for (std::size_t i = lengths.size() - k; i < lengths.size(); ++i) total += lengths[i];
    if (k <= max_utt && total <= max_chars) best = k;
  }
  return best;
}

FineTuneDialogue fav_dialogue(const std::string& id, std::vector<std::string> texts) {
  FineTuneDialogue d;
  d.dataset_kind = DatasetKind::kFav;
  d.additional_info = SpeakerIdInfo{id};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    d.utterances.push_back({i % 2 == 0 ? Speaker::kSpk1 : Speaker::kSpk2, texts[i]});
  }
  return d;
}

std::vector<QueryRecord> records(std::size_t n, DatasetKind kind) {
  std::vector<QueryRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].query_text = std::to_string(i);
    out[i].dataset_kind = kind;
  }
  return out;
}

}  // namespace

TEST(TruncateContext, BasicExamples) {
  const FormatterConfig config;
  EXPECT_EQ(truncate_context(utterances_of_lengths({10, 10, 10, 10, 10}), config).size(), 4u);
  const auto one = utterances_of_lengths({5});
  EXPECT_EQ(truncate_context(one, config), one);
  const auto r = truncate_context(utterances_of_lengths({100, 60, 60}), config);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].text.size(), 60u);
  EXPECT_THROW(truncate_context({}, config), Error);
}

TEST(TruncateContext, OversizedNewestUtteranceHeadCut) {
  const FormatterConfig config;
  std::u32string long_text;
  for (int i = 0; i < 200; ++i) long_text += static_cast<char32_t>(U'あ' + i % 50);
  const auto r = truncate_context({{Speaker::kSpk1, "前"}, {Speaker::kSpk2, unicode::encode(long_text)}}, config);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].text, unicode::encode(long_text.substr(200 - 128)));
}

TEST(TruncateContext, ExhaustiveSuffixOracle) {
  std::mt19937_64 rng(3);
  FormatterConfig config;
  for (int round = 0; round < 2000; ++round) {
    std::vector<std::size_t> lengths(1 + rng() % 8);
    for (auto& l : lengths) l = 1 + rng() % 70;
    config.max_context_utterances = 1 + rng() % 5;
    config.max_context_chars = 20 + rng() % 150;
    const auto input = utterances_of_lengths(lengths);
    const auto out = truncate_context(input, config);
    const auto expected = oracle_suffix(lengths, config.max_context_utterances, config.max_context_chars);
    ASSERT_EQ(out.size(), expected);
    for (std::size_t i = 0; i + 1 < out.size(); ++i) {
      EXPECT_EQ(out[i], input[input.size() - out.size() + i]);
    }
  }
}

TEST(FormatQuery, FavMixedTaggedTemplate) {
  const auto d = fav_dialogue("071", {"A", "B", "C"});
  const auto r = format_query(d, 2, Condition::kMixedTagged, {});
  EXPECT_EQ(r.query_text, "趣味雑談:[SEP]071[SEP][SPK1] A[SEP][SPK2] B");
  EXPECT_EQ(r.target_text, "C");
  EXPECT_EQ(r.dataset_tag_word, std::optional<std::string>("趣味雑談"));
}

TEST(FormatQuery, FlatIsPlainJoin) {
  const auto d = fav_dialogue("071", {"A", "B", "C"});
  EXPECT_EQ(format_query(d, 2, Condition::kFlat, {}).query_text, "A[SEP]B");
  EXPECT_EQ(format_query(d, 2, Condition::kMixedFlat, {}).query_text, "A[SEP]B");
  EXPECT_EQ(format_query(d, 2, Condition::kTagged, {}).query_text, "071[SEP][SPK1] A[SEP][SPK2] B");
}

TEST(FormatQuery, EdTaggedGolden) {
  FineTuneDialogue d;
  d.dataset_kind = DatasetKind::kED;
  d.additional_info = SituationInfo{"S", "joy"};
  d.utterances = {{Speaker::kSpk1, "A"}, {Speaker::kSpk2, "B"}, {Speaker::kSpk1, "C"}, {Speaker::kSpk2, "D"}};
  EXPECT_EQ(format_query(d, 1, Condition::kTagged, {}).query_text, golden("ed_tagged_query.txt"));
}

TEST(FormatQuery, PcTaggedGolden) {
  FineTuneDialogue d;
  d.dataset_kind = DatasetKind::kPC;
  d.additional_info = ProfileInfo{{"私は学生です", "犬が好きです", "東京に住んでいます", "料理が得意です", "朝型です"}};
  d.utterances = {{Speaker::kSpk1, "こんにちは"}, {Speaker::kSpk2, "はじめまして"}, {Speaker::kSpk1, "よろしく"}};
  d.validate();
  EXPECT_EQ(format_query(d, 2, Condition::kTagged, {}).query_text, golden("pc_tagged_query.txt"));
}

TEST(FormatQuery, MissingInfoUnderTagged) {
  auto d = fav_dialogue("1", {"A", "B"});
  d.additional_info.reset();
  try {
    format_query(d, 1, Condition::kTagged, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingInfo);
  }
  EXPECT_NO_THROW(format_query(d, 1, Condition::kFlat, {}));
}

TEST(FineTuneDialogue, Validation) {
  FineTuneDialogue ed;
  ed.dataset_kind = DatasetKind::kED;
  ed.additional_info = SituationInfo{"s", "joy"};
  ed.utterances = {{Speaker::kSpk1, "a"}, {Speaker::kSpk2, "b"}, {Speaker::kSpk1, "c"}};
  EXPECT_THROW(ed.validate(), Error);  // ED needs four utterances
  ed.utterances.push_back({Speaker::kSpk2, "d"});
  EXPECT_NO_THROW(ed.validate());
  ed.utterances[1].speaker = Speaker::kSpk1;
  EXPECT_THROW(ed.validate(), Error);  // no alternation

  FineTuneDialogue pc;
  pc.dataset_kind = DatasetKind::kPC;
  pc.additional_info = ProfileInfo{{"a", "b", "c", "d"}};
  pc.utterances = {{Speaker::kSpk1, "a"}, {Speaker::kSpk2, "b"}};
  EXPECT_THROW(pc.validate(), Error);  // four profile sentences
  pc.additional_info = ProfileInfo{{"a", "b", "c", "d", std::string(31, 'x')}};
  EXPECT_THROW(pc.validate(), Error);  // sentence over 30 characters
}

TEST(MixDatasets, EqualTotalQuotas) {
  const auto mixed = mix_datasets({records(50000, DatasetKind::kPC), records(50000, DatasetKind::kED),
                                   records(50000, DatasetKind::kFav)},
                                  MixMode::kEqualTotal, 1);
  std::map<DatasetKind, std::size_t> counts;
  for (const auto& r : mixed) ++counts[r.dataset_kind];
  EXPECT_EQ(mixed.size(), 50000u);
  EXPECT_EQ(counts[DatasetKind::kPC], 16666u);
  EXPECT_EQ(counts[DatasetKind::kED], 16666u);
  EXPECT_EQ(counts[DatasetKind::kFav], 16668u);
}

TEST(MixDatasets, FullUnionAndDeterminism) {
  const auto a = records(10, DatasetKind::kPC), b = records(7, DatasetKind::kFav);
  EXPECT_EQ(mix_datasets({a, b}, MixMode::kFullUnion, 0).size(), 17u);
  EXPECT_EQ(mix_datasets({a, b}, MixMode::kEqualTotal, 9), mix_datasets({a, b}, MixMode::kEqualTotal, 9));
  EXPECT_THROW(mix_datasets({a}, MixMode::kEqualTotal, 0), Error);
  try {
    mix_datasets({records(10, DatasetKind::kPC), records(2, DatasetKind::kFav)}, MixMode::kEqualTotal, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientData);
  }
}

TEST(InferenceDefaults, SeededDrawFromPool) {
  const FormatterConfig config;
  const auto pool = default_id_pool();
  ASSERT_EQ(pool.size(), 80u);
  EXPECT_EQ(pool.front(), "001");
  EXPECT_EQ(pool.back(), "080");
  const auto a = inference_defaults(Condition::kMixedTagged, pool, 7, config);
  const auto b = inference_defaults(Condition::kMixedTagged, pool, 7, config);
  EXPECT_EQ(a.info.speaker_id, b.info.speaker_id);
  EXPECT_EQ(a.tag_word, "趣味雑談");
  EXPECT_NE(std::find(pool.begin(), pool.end(), a.info.speaker_id), pool.end());
  EXPECT_EQ(inference_defaults(Condition::kMixedTagged, {"042"}, 123, config).info.speaker_id, "042");
  EXPECT_THROW(inference_defaults(Condition::kFlat, pool, 7, config), Error);
  try {
    inference_defaults(Condition::kMixedTagged, {}, 7, config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoIds);
  }
}

TEST(InferenceDefaults, RoughlyUniform) {
  const auto pool = default_id_pool(4);
  std::map<std::string, int> counts;
  for (std::uint64_t s = 0; s < 4000; ++s) ++counts[inference_defaults(Condition::kMixedTagged, pool, s, {}).info.speaker_id];
  for (const auto& [id, c] : counts) EXPECT_NEAR(c, 1000, 4 * std::sqrt(4000 * 0.25 * 0.75)) << id;
}

TEST(QueryRecord, JsonRoundTrip) {
  const auto d = fav_dialogue("071", {"A", "B", "C"});
  const auto r = format_query(d, 2, Condition::kMixedTagged, {});
  const nlohmann::json j = r;
  EXPECT_EQ(j.at("query"), r.query_text);
  EXPECT_EQ(j.at("condition"), "mixed-tagged");
  EXPECT_EQ(j.get<QueryRecord>(), r);
  const nlohmann::json dj = d;
  EXPECT_EQ(dj.get<FineTuneDialogue>().utterances, d.utterances);
}

TEST(ConditioningPrefix, InfoBlockBeforeFirstSpeaker) {
  EXPECT_EQ(conditioning_prefix("071[SEP][SPK1] A[SEP][SPK2] B"), "071[SEP]");
  EXPECT_EQ(conditioning_prefix("A[SEP]B"), "");
}
