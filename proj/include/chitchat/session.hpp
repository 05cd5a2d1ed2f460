#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chitchat/formatter.hpp"
#include "chitchat/generation.hpp"
#include "chitchat/lm.hpp"

namespace chitchat::session {

enum class State { kOpen, kClosing, kAwaitingEvaluation, kComplete };
enum class Role { kSystem, kUser };

std::string_view to_string(State state);
State parse_state(std::string_view s);

/// The thirteen impression metrics, in questionnaire order.
inline constexpr std::array<std::string_view, 13> kMetricKeys = {
    "humanness", "ease",        "enjoyability", "empathetic", "attentiveness",
    "trust",     "personality", "agency",       "topic",      "emotion",
    "consistency", "involvement", "respeak"};
inline constexpr int kLikertMin = 0;
inline constexpr int kLikertMax = 10;

struct SystemSpec {
  std::string model_id;
  format::Condition condition = format::Condition::kFlat;
  format::DatasetKind dataset_kind = format::DatasetKind::kFav;
  std::optional<format::AdditionalInfo> info;
  gen::SamplingParams sampling;
  gen::FilterConfig filter;
};

struct ProtocolConfig {
  std::string opening_phrase = "Hello. Nice to meet you.";
  std::vector<std::string> closing_phrases = {
      "Oh, I'm sorry. Our time is about up. Thank you for today.", "Goodbye."};
  std::size_t turns_per_side = 15;

  void validate() const;
};

struct Turn {
  Role role = Role::kSystem;
  std::string text;
  std::string timestamp;
  bool fallback = false;  // system turns only
};

struct EvaluationRecord {
  std::string session_id;
  std::map<std::string, int> scores;
  std::string rater_id;
  std::string submitted_at;
};

struct Session {
  std::string id;
  SystemSpec spec;
  ProtocolConfig protocol;
  State state = State::kOpen;
  std::vector<Turn> turns;
  std::uint64_t rng_seed = 0;
  std::string created_at;
  std::uint64_t sequence = 0;  // creation order
  std::optional<EvaluationRecord> evaluation;

  std::size_t system_turns() const;
  std::size_t user_turns() const;
};

struct PostResult {
  std::optional<std::string> reply;
  bool fallback = false;
  std::vector<std::string> closing;
};

struct ExportFilter {
  std::optional<State> state;
  std::optional<std::string> model_id;
};

/// Validates scores against the 13 metric keys and the 0..10 scale; throws
/// Error(kValidation) naming the offending metric.
std::map<std::string, int> validate_scores(const nlohmann::json& scores);

class ModelRegistry {
 public:
  void add(std::string id, std::shared_ptr<const lm::Scorer> model);
  /// Throws Error(kUnknownModel).
  std::shared_ptr<const lm::Scorer> get(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::vector<std::string> ids() const;
  /// Loads every *.json / *.bin n-gram file; the id is the file stem.
  void load_directory(const std::filesystem::path& dir);

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const lm::Scorer>> models_;
};

using Clock = std::function<std::string()>;
/// RFC 3339 UTC with milliseconds.
std::string system_clock_now();

/// Owns every session. Each session has a single writer at a time; the store
/// map itself is guarded separately. With a log directory every change is
/// appended to <dir>/<session_id>.jsonl before the call returns, and the
/// constructor replays existing logs.
class SessionStore {
 public:
  SessionStore(std::shared_ptr<const ModelRegistry> models,
               std::optional<std::filesystem::path> log_dir = std::nullopt,
               Clock clock = system_clock_now, std::uint64_t global_seed = 0);

  /// The opening phrase is system turn 1. Seed defaults to one derived from
  /// the global seed and the session's sequence number.
  Session create_session(const SystemSpec& spec,
                         const ProtocolConfig& protocol = {},
                         std::optional<std::uint64_t> seed = std::nullopt);

  PostResult post_user_utterance(const std::string& session_id,
                                 const std::string& text);

  EvaluationRecord submit_evaluation(const std::string& session_id,
                                     const nlohmann::json& scores,
                                     const std::string& rater_id);

  Session get(const std::string& session_id) const;
  std::vector<Session> list() const;

  /// One JSON object per session ordered by creation, evaluations joined.
  std::string export_dialogues(const ExportFilter& filter = {}) const;
  /// Loads sessions from export lines; existing ids are rejected.
  std::size_t import_dialogues(std::string_view jsonl);

 private:
  struct Entry {
    std::mutex mutex;
    Session session;
  };

  std::shared_ptr<Entry> find(const std::string& id) const;
  void append_log(const Session& s, const nlohmann::json& event) const;
  void replay_logs();
  std::string build_query(const Session& s,
                          std::vector<std::string>& context_texts) const;

  std::shared_ptr<const ModelRegistry> models_;
  std::optional<std::filesystem::path> log_dir_;
  Clock clock_;
  std::uint64_t global_seed_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::atomic<std::uint64_t> next_sequence_{1};
};

/// Rater -> ordered list of system ids, shuffled per rater from a global seed.
std::map<std::string, std::vector<std::string>> make_assignments(
    const std::vector<std::string>& rater_ids,
    const std::vector<std::string>& system_ids, std::uint64_t seed);

nlohmann::json to_json(const Session& s);
Session session_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const SystemSpec& s);
void from_json(const nlohmann::json& j, SystemSpec& s);
void to_json(nlohmann::json& j, const ProtocolConfig& p);
void from_json(const nlohmann::json& j, ProtocolConfig& p);
void to_json(nlohmann::json& j, const EvaluationRecord& r);
void from_json(const nlohmann::json& j, EvaluationRecord& r);

}  // namespace chitchat::session
