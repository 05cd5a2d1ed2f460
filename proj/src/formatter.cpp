#include "chitchat/formatter.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

#include "chitchat/error.hpp"
#include "chitchat/random.hpp"
#include "chitchat/unicode.hpp"

namespace chitchat::format {

using nlohmann::json;

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kPC: return "PC";
    case DatasetKind::kED: return "ED";
    case DatasetKind::kFav: return "Fav";
  }
  return "?";
}

std::string_view to_string(Speaker speaker) {
  return speaker == Speaker::kSpk1 ? "SPK1" : "SPK2";
}

std::string_view to_string(Condition condition) {
  switch (condition) {
    case Condition::kFlat: return "flat";
    case Condition::kTagged: return "tagged";
    case Condition::kMixedFlat: return "mixed-flat";
    case Condition::kMixedTagged: return "mixed-tagged";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "PC") return DatasetKind::kPC;
  if (s == "ED") return DatasetKind::kED;
  if (s == "Fav") return DatasetKind::kFav;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown dataset kind: " + std::string(s));
}

Speaker parse_speaker(std::string_view s) {
  if (s == "SPK1" || s == "[SPK1]") return Speaker::kSpk1;
  if (s == "SPK2" || s == "[SPK2]") return Speaker::kSpk2;
  throw Error(ErrorCode::kInvalidArgument, "unknown speaker: " + std::string(s));
}

Condition parse_condition(std::string_view s) {
  if (s == "flat") return Condition::kFlat;
  if (s == "tagged") return Condition::kTagged;
  if (s == "mixed-flat") return Condition::kMixedFlat;
  if (s == "mixed-tagged") return Condition::kMixedTagged;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown condition: " + std::string(s));
}

MixMode parse_mix_mode(std::string_view s) {
  if (s == "equal" || s == "equal-total") return MixMode::kEqualTotal;
  if (s == "full" || s == "full-union") return MixMode::kFullUnion;
  throw Error(ErrorCode::kInvalidArgument, "unknown mix mode: " + std::string(s));
}

void FineTuneDialogue::validate() const {
  for (std::size_t i = 1; i < utterances.size(); ++i) {
    if (utterances[i].speaker == utterances[i - 1].speaker) {
      throw Error(ErrorCode::kValidation, "speakers must alternate");
    }
  }
  if (dataset_kind == DatasetKind::kED && utterances.size() != 4) {
    throw Error(ErrorCode::kValidation, "ED dialogues have exactly 4 utterances");
  }
  if (!additional_info) return;
  const bool kind_matches = std::visit(
      [&](const auto& info) {
        using T = std::decay_t<decltype(info)>;
        if constexpr (std::is_same_v<T, ProfileInfo>) {
          return dataset_kind == DatasetKind::kPC;
        } else if constexpr (std::is_same_v<T, SituationInfo>) {
          return dataset_kind == DatasetKind::kED;
        } else {
          return dataset_kind == DatasetKind::kFav;
        }
      },
      *additional_info);
  if (!kind_matches) {
    throw Error(ErrorCode::kValidation, "additional info does not match dataset");
  }
  if (const auto* p = std::get_if<ProfileInfo>(&*additional_info)) {
    if (p->sentences.size() != 5) {
      throw Error(ErrorCode::kValidation, "PC profiles have five sentences");
    }
    for (const auto& s : p->sentences) {
      if (unicode::length(s) > 30) {
        throw Error(ErrorCode::kValidation,
                    "profile sentence longer than 30 characters");
      }
    }
  }
}

void FormatterConfig::validate() const {
  if (max_context_utterances == 0 || max_context_chars == 0) {
    throw Error(ErrorCode::kInvalidArgument, "context limits must be positive");
  }
  std::set<std::string> words;
  for (const auto& [_, w] : dataset_tag_words) words.insert(w);
  if (words.size() != dataset_tag_words.size()) {
    throw Error(ErrorCode::kInvalidArgument, "dataset tag words must be distinct");
  }
}

std::vector<Utterance> truncate_context(const std::vector<Utterance>& utterances,
                                        const FormatterConfig& config) {
  if (utterances.empty()) {
    throw Error(ErrorCode::kEmptyContext, "empty dialogue context");
  }
  std::size_t keep = 0;
  std::size_t chars = 0;
  for (auto it = utterances.rbegin(); it != utterances.rend(); ++it) {
    if (keep == config.max_context_utterances) break;
    const std::size_t len = unicode::length(it->text);
    if (keep > 0 && chars + len > config.max_context_chars) break;
    chars += len;
    ++keep;
  }
  std::vector<Utterance> out(utterances.end() - static_cast<std::ptrdiff_t>(keep),
                             utterances.end());
  if (keep == 1) {
    const auto cps = unicode::decode(out.front().text);
    if (cps.size() > config.max_context_chars) {
      out.front().text = unicode::encode(std::u32string_view(cps).substr(
          cps.size() - config.max_context_chars));
    }
  }
  return out;
}

std::string info_block(const AdditionalInfo& info, const FormatterConfig& config) {
  return std::visit(
      [&](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ProfileInfo>) {
          std::string out;
          for (std::size_t i = 0; i < v.sentences.size(); ++i) {
            if (i > 0) out += "。";
            out += v.sentences[i];
          }
          return out;
        } else if constexpr (std::is_same_v<T, SituationInfo>) {
          return v.emotion + config.separator_token + v.situation;
        } else {
          return v.speaker_id;
        }
      },
      info);
}

std::string render_query(const std::vector<Utterance>& context, DatasetKind kind,
                         const std::optional<AdditionalInfo>& info,
                         Condition condition, const FormatterConfig& config) {
  std::string out;
  if (!is_tagged(condition)) {
    for (std::size_t i = 0; i < context.size(); ++i) {
      if (i > 0) out += config.separator_token;
      out += context[i].text;
    }
    return out;
  }
  if (!info) {
    throw Error(ErrorCode::kMissingInfo,
                "tagged condition requires additional information");
  }
  if (condition == Condition::kMixedTagged) {
    out += config.dataset_tag_words.at(kind);
    out += ":";
    out += config.separator_token;
  }
  out += info_block(*info, config);
  for (const auto& u : context) {
    out += config.separator_token;
    out += u.speaker == Speaker::kSpk1 ? config.speaker1_token
                                       : config.speaker2_token;
    out += ' ';
    out += u.text;
  }
  return out;
}

QueryRecord format_query(const FineTuneDialogue& dialogue, std::size_t turn_index,
                         Condition condition, const FormatterConfig& config) {
  if (turn_index < 1 || turn_index >= dialogue.utterances.size()) {
    throw Error(ErrorCode::kInvalidArgument, "turn_index out of range");
  }
  if (is_tagged(condition) && !dialogue.additional_info) {
    throw Error(ErrorCode::kMissingInfo,
                "tagged condition requires additional information");
  }
  const std::vector<Utterance> history(
      dialogue.utterances.begin(),
      dialogue.utterances.begin() + static_cast<std::ptrdiff_t>(turn_index));
  const auto context = truncate_context(history, config);
  QueryRecord record;
  record.query_text = render_query(context, dialogue.dataset_kind,
                                   dialogue.additional_info, condition, config);
  record.target_text = dialogue.utterances[turn_index].text;
  record.condition = condition;
  record.dataset_kind = dialogue.dataset_kind;
  if (condition == Condition::kMixedTagged) {
    record.dataset_tag_word = config.dataset_tag_words.at(dialogue.dataset_kind);
  }
  return record;
}

std::vector<QueryRecord> format_dialogue(const FineTuneDialogue& dialogue,
                                         Condition condition,
                                         const FormatterConfig& config) {
  std::vector<QueryRecord> out;
  for (std::size_t t = 1; t < dialogue.utterances.size(); ++t) {
    out.push_back(format_query(dialogue, t, condition, config));
  }
  return out;
}

std::vector<QueryRecord> mix_datasets(
    const std::vector<std::vector<QueryRecord>>& datasets, MixMode mode,
    std::uint64_t seed, std::optional<std::size_t> total) {
  if (datasets.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "mixing needs at least two datasets");
  }
  std::vector<QueryRecord> out;
  if (mode == MixMode::kFullUnion) {
    for (const auto& d : datasets) out.insert(out.end(), d.begin(), d.end());
    return out;
  }
  std::size_t largest = 0;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    if (datasets[i].size() >= datasets[largest].size()) largest = i;
  }
  const std::size_t t = total.value_or(datasets[largest].size());
  const std::size_t k = datasets.size();
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t quota = t / k + (i == largest ? t % k : 0);
    if (datasets[i].size() < quota) {
      throw Error(ErrorCode::kInsufficientData,
                  "dataset " + std::to_string(i) + " has " +
                      std::to_string(datasets[i].size()) + " records, quota " +
                      std::to_string(quota));
    }
    std::vector<std::size_t> idx(datasets[i].size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `quota` slots form a uniform sample.
    for (std::size_t j = 0; j < quota; ++j) {
      const auto r = j + static_cast<std::size_t>(rng.below(idx.size() - j));
      std::swap(idx[j], idx[r]);
    }
    for (std::size_t j = 0; j < quota; ++j) out.push_back(datasets[i][idx[j]]);
  }
  rng.shuffle(out);
  return out;
}

std::vector<std::string> default_id_pool(std::size_t count) {
  std::vector<std::string> ids;
  for (std::size_t i = 1; i <= count; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    ids.emplace_back(buf);
  }
  return ids;
}

InferenceInfo inference_defaults(Condition condition,
                                 const std::vector<std::string>& id_pool,
                                 std::uint64_t seed,
                                 const FormatterConfig& config) {
  if (condition != Condition::kMixedTagged) {
    throw Error(ErrorCode::kInvalidArgument,
                "inference defaults exist only for mixed-tagged");
  }
  if (id_pool.empty()) throw Error(ErrorCode::kNoIds, "empty speaker ID pool");
  Rng rng(seed);
  return {config.dataset_tag_words.at(DatasetKind::kFav),
          {id_pool[static_cast<std::size_t>(rng.below(id_pool.size()))]}};
}

namespace {

std::vector<std::string> split(std::string_view s, std::string_view sep) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = s.find(sep, pos);
    if (hit == std::string_view::npos) {
      parts.emplace_back(s.substr(pos));
      return parts;
    }
    parts.emplace_back(s.substr(pos, hit - pos));
    pos = hit + sep.size();
  }
}

}  // namespace

ParsedQuery parse_tagged_query(std::string_view query,
                               const FormatterConfig& config) {
  ParsedQuery parsed;
  auto parts = split(query, config.separator_token);
  std::size_t i = 0;
  if (!parts.empty()) {
    for (const auto& [_, word] : config.dataset_tag_words) {
      if (parts[0] == word + ":") {
        parsed.tag_word = word;
        i = 1;
        break;
      }
    }
  }
  const std::string spk1 = config.speaker1_token + " ";
  const std::string spk2 = config.speaker2_token + " ";
  for (; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (p.starts_with(spk1)) {
      parsed.utterances.push_back({Speaker::kSpk1, p.substr(spk1.size())});
    } else if (p.starts_with(spk2)) {
      parsed.utterances.push_back({Speaker::kSpk2, p.substr(spk2.size())});
    } else if (parsed.utterances.empty()) {
      parsed.info_segments.push_back(p);
    } else {
      throw Error(ErrorCode::kParse, "untagged segment after utterances");
    }
  }
  return parsed;
}

std::string conditioning_prefix(std::string_view query,
                                const FormatterConfig& config) {
  const std::size_t a = query.find(config.speaker1_token);
  const std::size_t b = query.find(config.speaker2_token);
  const std::size_t cut = std::min(a, b);
  if (cut == std::string_view::npos) return {};
  return std::string(query.substr(0, cut));
}

// --- JSON -------------------------------------------------------------------

json info_to_json(const AdditionalInfo& info) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ProfileInfo>) {
          return {{"profile", v.sentences}};
        } else if constexpr (std::is_same_v<T, SituationInfo>) {
          return {{"situation", v.situation}, {"emotion", v.emotion}};
        } else {
          return {{"speaker_id", v.speaker_id}};
        }
      },
      info);
}

AdditionalInfo info_from_json(const json& info) {
  if (info.contains("profile")) {
    return ProfileInfo{info["profile"].get<std::vector<std::string>>()};
  }
  if (info.contains("situation")) {
    return SituationInfo{info.at("situation").get<std::string>(),
                         info.at("emotion").get<std::string>()};
  }
  if (info.contains("speaker_id")) {
    return SpeakerIdInfo{info["speaker_id"].get<std::string>()};
  }
  throw Error(ErrorCode::kParse, "unrecognized additional info");
}

void to_json(json& j, const QueryRecord& r) {
  j = json{{"query", r.query_text},
           {"target", r.target_text},
           {"condition", to_string(r.condition)},
           {"dataset_kind", to_string(r.dataset_kind)}};
  if (r.dataset_tag_word) j["dataset_tag_word"] = *r.dataset_tag_word;
}

void from_json(const json& j, QueryRecord& r) {
  r.query_text = j.at("query").get<std::string>();
  r.target_text = j.at("target").get<std::string>();
  r.condition = parse_condition(j.value("condition", std::string("flat")));
  r.dataset_kind = parse_dataset_kind(j.value("dataset_kind", std::string("Fav")));
  r.dataset_tag_word.reset();
  if (j.contains("dataset_tag_word")) {
    r.dataset_tag_word = j["dataset_tag_word"].get<std::string>();
  }
}

void to_json(json& j, const FineTuneDialogue& d) {
  json utts = json::array();
  for (const auto& u : d.utterances) {
    utts.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
  }
  j = json{{"dataset_kind", to_string(d.dataset_kind)}, {"utterances", utts}};
  if (d.additional_info) j["info"] = info_to_json(*d.additional_info);
}

void from_json(const json& j, FineTuneDialogue& d) {
  d.dataset_kind = parse_dataset_kind(j.at("dataset_kind").get<std::string>());
  d.utterances.clear();
  for (const auto& u : j.at("utterances")) {
    d.utterances.push_back({parse_speaker(u.at("speaker").get<std::string>()),
                            u.at("text").get<std::string>()});
  }
  d.additional_info.reset();
  if (j.contains("info") && !j["info"].is_null()) {
    d.additional_info = info_from_json(j["info"]);
  }
}

}  // namespace chitchat::format
