#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace chitchat::format {

enum class DatasetKind { kPC, kED, kFav };
enum class Speaker { kSpk1, kSpk2 };
enum class Condition { kFlat, kTagged, kMixedFlat, kMixedTagged };
enum class MixMode { kEqualTotal, kFullUnion };

std::string_view to_string(DatasetKind kind);
std::string_view to_string(Speaker speaker);
std::string_view to_string(Condition condition);
DatasetKind parse_dataset_kind(std::string_view s);
Speaker parse_speaker(std::string_view s);
Condition parse_condition(std::string_view s);
MixMode parse_mix_mode(std::string_view s);

inline bool is_tagged(Condition c) {
  return c == Condition::kTagged || c == Condition::kMixedTagged;
}

struct Utterance {
  Speaker speaker = Speaker::kSpk1;
  std::string text;

  bool operator==(const Utterance&) const = default;
};

struct ProfileInfo {
  std::vector<std::string> sentences;  // exactly five, each <= 30 chars
};
struct SituationInfo {
  std::string situation;
  std::string emotion;
};
struct SpeakerIdInfo {
  std::string speaker_id;
};
using AdditionalInfo = std::variant<ProfileInfo, SituationInfo, SpeakerIdInfo>;

struct FineTuneDialogue {
  DatasetKind dataset_kind = DatasetKind::kFav;
  std::vector<Utterance> utterances;
  std::optional<AdditionalInfo> additional_info;

  /// Enforces per-dataset shape rules; throws Error(kValidation).
  void validate() const;
};

struct QueryRecord {
  std::string query_text;
  std::string target_text;
  Condition condition = Condition::kFlat;
  DatasetKind dataset_kind = DatasetKind::kFav;
  std::optional<std::string> dataset_tag_word;

  bool operator==(const QueryRecord&) const = default;
};

inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kSpk1 = "[SPK1]";
inline constexpr std::string_view kSpk2 = "[SPK2]";

struct FormatterConfig {
  std::size_t max_context_utterances = 4;
  std::size_t max_context_chars = 128;
  std::string separator_token{kSep};
  std::string speaker1_token{kSpk1};
  std::string speaker2_token{kSpk2};
  std::map<DatasetKind, std::string> dataset_tag_words = {
      {DatasetKind::kPC, "個性雑談"},
      {DatasetKind::kED, "共感雑談"},
      {DatasetKind::kFav, "趣味雑談"},
  };

  void validate() const;
};

/// Longest suffix within both budgets (utterance count, code points of
/// utterance text). The newest utterance is always kept; if it alone is over
/// the character budget its head is cut.
std::vector<Utterance> truncate_context(const std::vector<Utterance>& utterances,
                                        const FormatterConfig& config);

/// Serialized additional-information block for a tagged query.
std::string info_block(const AdditionalInfo& info, const FormatterConfig& config);

/// Renders an already-truncated context under a condition. Tagged conditions
/// require `info`; mixed-tagged additionally prefixes the dataset tag word.
std::string render_query(const std::vector<Utterance>& context,
                         DatasetKind kind,
                         const std::optional<AdditionalInfo>& info,
                         Condition condition, const FormatterConfig& config);

QueryRecord format_query(const FineTuneDialogue& dialogue,
                         std::size_t turn_index, Condition condition,
                         const FormatterConfig& config);

/// Every turn_index >= 1 of the dialogue, in order.
std::vector<QueryRecord> format_dialogue(const FineTuneDialogue& dialogue,
                                         Condition condition,
                                         const FormatterConfig& config);

/// Equal-total: floor(T/k) uniformly sampled records per dataset, the
/// remainder going to the largest dataset (latest on ties), then shuffled.
/// T defaults to the largest dataset's size. Full-union: plain concatenation.
std::vector<QueryRecord> mix_datasets(
    const std::vector<std::vector<QueryRecord>>& datasets, MixMode mode,
    std::uint64_t seed, std::optional<std::size_t> total = std::nullopt);

struct InferenceInfo {
  std::string tag_word;
  SpeakerIdInfo info;
};

InferenceInfo inference_defaults(Condition condition,
                                 const std::vector<std::string>& id_pool,
                                 std::uint64_t seed,
                                 const FormatterConfig& config);

/// "001".."080": the default favorite-things speaker ID pool.
std::vector<std::string> default_id_pool(std::size_t count = 80);

/// Split view of a tagged query (inverse of render_query for tagged forms).
struct ParsedQuery {
  std::optional<std::string> tag_word;
  std::vector<std::string> info_segments;
  std::vector<Utterance> utterances;
};
ParsedQuery parse_tagged_query(std::string_view query,
                               const FormatterConfig& config);

/// Everything before the first speaker token, or "" when the query has none.
std::string conditioning_prefix(std::string_view query,
                                const FormatterConfig& config = {});

nlohmann::json info_to_json(const AdditionalInfo& info);
AdditionalInfo info_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const QueryRecord& r);
void from_json(const nlohmann::json& j, QueryRecord& r);
void to_json(nlohmann::json& j, const FineTuneDialogue& d);
void from_json(const nlohmann::json& j, FineTuneDialogue& d);

}  // namespace chitchat::format
