#include "chitchat/session.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "chitchat/error.hpp"
#include "chitchat/jsonl.hpp"
#include "chitchat/random.hpp"

namespace chitchat::session {

using nlohmann::json;

std::string_view to_string(State state) {
  switch (state) {
    case State::kOpen: return "Open";
    case State::kClosing: return "Closing";
    case State::kAwaitingEvaluation: return "AwaitingEvaluation";
    case State::kComplete: return "Complete";
  }
  return "?";
}

State parse_state(std::string_view s) {
  if (s == "Open") return State::kOpen;
  if (s == "Closing") return State::kClosing;
  if (s == "AwaitingEvaluation") return State::kAwaitingEvaluation;
  if (s == "Complete") return State::kComplete;
  throw Error(ErrorCode::kInvalidArgument, "unknown state: " + std::string(s));
}

void ProtocolConfig::validate() const {
  if (turns_per_side < 1) {
    throw Error(ErrorCode::kInvalidArgument, "turns_per_side must be >= 1");
  }
  if (closing_phrases.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "closing_phrases must not be empty");
  }
}

std::size_t Session::system_turns() const {
  return static_cast<std::size_t>(std::count_if(
      turns.begin(), turns.end(), [](const Turn& t) { return t.role == Role::kSystem; }));
}

std::size_t Session::user_turns() const { return turns.size() - system_turns(); }

std::map<std::string, int> validate_scores(const json& scores) {
  if (!scores.is_object()) {
    throw Error(ErrorCode::kValidation, "scores must be an object");
  }
  std::map<std::string, int> out;
  for (std::string_view key : kMetricKeys) {
    const std::string k(key);
    if (!scores.contains(k)) {
      throw Error(ErrorCode::kValidation, "missing metric: " + k);
    }
    const auto& v = scores[k];
    if (!v.is_number_integer()) {
      throw Error(ErrorCode::kValidation, "metric " + k + " must be an integer");
    }
    const auto value = v.get<std::int64_t>();
    if (value < kLikertMin || value > kLikertMax) {
      throw Error(ErrorCode::kValidation,
                  "metric " + k + " out of range: " + std::to_string(value));
    }
    out.emplace(k, static_cast<int>(value));
  }
  if (scores.size() != kMetricKeys.size()) {
    for (const auto& [k, _] : scores.items()) {
      if (!out.contains(k)) {
        throw Error(ErrorCode::kValidation, "unknown metric: " + k);
      }
    }
  }
  return out;
}

// --- ModelRegistry ----------------------------------------------------------

void ModelRegistry::add(std::string id, std::shared_ptr<const lm::Scorer> model) {
  std::unique_lock lock(mutex_);
  models_[std::move(id)] = std::move(model);
}

std::shared_ptr<const lm::Scorer> ModelRegistry::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = models_.find(id);
  if (it == models_.end()) throw Error(ErrorCode::kUnknownModel, "unknown model: " + id);
  return it->second;
}

bool ModelRegistry::contains(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return models_.contains(id);
}

std::vector<std::string> ModelRegistry::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : models_) out.push_back(id);
  return out;
}

void ModelRegistry::load_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::kIo, "not a directory: " + dir.string());
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (!entry.is_regular_file() || (ext != ".json" && ext != ".bin")) continue;
    add(entry.path().stem().string(),
        std::make_shared<lm::NGramModel>(lm::NGramModel::load(entry.path().string())));
  }
}

std::string system_clock_now() {
  using namespace std::chrono;
  const auto now = time_point_cast<milliseconds>(system_clock::now());
  const auto days = floor<std::chrono::days>(now);
  const year_month_day ymd{days};
  const hh_mm_ss hms{now - days};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld.%03ldZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()),
                static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()),
                static_cast<long>(hms.subseconds().count()));
  return buf;
}

// --- SessionStore -----------------------------------------------------------

SessionStore::SessionStore(std::shared_ptr<const ModelRegistry> models,
                           std::optional<std::filesystem::path> log_dir,
                           Clock clock, std::uint64_t global_seed)
    : models_(std::move(models)),
      log_dir_(std::move(log_dir)),
      clock_(std::move(clock)),
      global_seed_(global_seed) {
  if (log_dir_) {
    std::filesystem::create_directories(*log_dir_);
    replay_logs();
  }
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown session: " + id);
  return it->second;
}

void SessionStore::append_log(const Session& s, const json& event) const {
  if (!log_dir_) return;
  const auto path = *log_dir_ / (s.id + ".jsonl");
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to " + path.string());
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

namespace {

json turn_json(const Turn& t) {
  json j{{"role", t.role == Role::kSystem ? "system" : "user"},
         {"text", t.text},
         {"timestamp", t.timestamp}};
  if (t.role == Role::kSystem) j["fallback"] = t.fallback;
  return j;
}

Turn turn_from_json(const json& j) {
  Turn t;
  const auto role = j.at("role").get<std::string>();
  if (role != "system" && role != "user") {
    throw Error(ErrorCode::kParse, "bad turn role: " + role);
  }
  t.role = role == "system" ? Role::kSystem : Role::kUser;
  t.text = j.at("text").get<std::string>();
  t.timestamp = j.value("timestamp", std::string{});
  t.fallback = j.value("fallback", false);
  return t;
}

json header_json(const Session& s) {
  return json{{"session_id", s.id},
              {"sequence", s.sequence},
              {"created_at", s.created_at},
              {"rng_seed", s.rng_seed},
              {"system_spec", s.spec},
              {"protocol", s.protocol}};
}

}  // namespace

void SessionStore::replay_logs() {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(*log_dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::uint64_t max_sequence = 0;
  for (const auto& path : files) {
    auto in = jsonl::open_in(path.string());
    auto entry = std::make_shared<Entry>();
    Session& s = entry->session;
    bool created = false;
    jsonl::for_each_line(in, [&](std::size_t, const std::string& line) {
      json e;
      try {
        e = json::parse(line);
      } catch (const json::exception&) {
        // A torn final write from a crash; everything before it stands.
        return;
      }
      const auto kind = e.at("event").get<std::string>();
      if (kind == "created") {
        s = session_from_json(e.at("session"));
        s.turns.clear();
        s.state = State::kOpen;
        s.evaluation.reset();
        created = true;
      } else if (kind == "turn") {
        s.turns.push_back(turn_from_json(e.at("turn")));
      } else if (kind == "state") {
        s.state = parse_state(e.at("state").get<std::string>());
      } else if (kind == "evaluation") {
        s.evaluation = e.at("record").get<EvaluationRecord>();
      }
    });
    if (!created) continue;
    max_sequence = std::max(max_sequence, s.sequence);
    sessions_.emplace(s.id, std::move(entry));
  }
  next_sequence_ = max_sequence + 1;
}

Session SessionStore::create_session(const SystemSpec& spec,
                                     const ProtocolConfig& protocol,
                                     std::optional<std::uint64_t> seed) {
  protocol.validate();
  spec.sampling.validate();
  spec.filter.validate();
  if (!models_->contains(spec.model_id)) {
    throw Error(ErrorCode::kUnknownModel, "unknown model: " + spec.model_id);
  }
  if (spec.condition == format::Condition::kTagged && !spec.info) {
    throw Error(ErrorCode::kMissingInfo,
                "tagged systems need additional information");
  }
  auto entry = std::make_shared<Entry>();
  Session& s = entry->session;
  s.sequence = next_sequence_++;
  char id[32];
  std::snprintf(id, sizeof id, "s%06llu",
                static_cast<unsigned long long>(s.sequence));
  s.id = id;
  s.spec = spec;
  s.protocol = protocol;
  s.rng_seed = seed.value_or(mix_seed(global_seed_, s.sequence));
  s.created_at = clock_();
  s.state = State::kOpen;
  s.turns.push_back({Role::kSystem, protocol.opening_phrase, s.created_at, false});

  std::lock_guard session_lock(entry->mutex);
  {
    std::unique_lock lock(mutex_);
    sessions_.emplace(s.id, entry);
  }
  json header = header_json(s);
  append_log(s, {{"event", "created"}, {"session", header}});
  append_log(s, {{"event", "turn"}, {"turn", turn_json(s.turns.front())}});
  return s;
}

std::string SessionStore::build_query(const Session& s,
                                      std::vector<std::string>& context_texts) const {
  std::vector<format::Utterance> history;
  for (const auto& t : s.turns) {
    history.push_back({t.role == Role::kSystem ? format::Speaker::kSpk1
                                               : format::Speaker::kSpk2,
                       t.text});
  }
  const format::FormatterConfig config;
  const auto context = format::truncate_context(history, config);
  context_texts.clear();
  for (const auto& u : context) context_texts.push_back(u.text);

  std::optional<format::AdditionalInfo> info = s.spec.info;
  if (s.spec.condition == format::Condition::kMixedTagged) {
    const auto defaults = format::inference_defaults(
        s.spec.condition, format::default_id_pool(), s.rng_seed, config);
    info = defaults.info;
    return format::render_query(context, format::DatasetKind::kFav, info,
                                s.spec.condition, config);
  }
  return format::render_query(context, s.spec.dataset_kind, info,
                              s.spec.condition, config);
}

PostResult SessionStore::post_user_utterance(const std::string& session_id,
                                             const std::string& text) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  Session& s = entry->session;
  if (s.state != State::kOpen) {
    throw Error(ErrorCode::kSessionClosed, "session " + session_id + " is closed");
  }
  if (s.turns.empty() || s.turns.back().role != Role::kSystem) {
    throw Error(ErrorCode::kNotYourTurn, "waiting for the system");
  }
  PostResult result;
  Turn user{Role::kUser, text, clock_(), false};
  s.turns.push_back(user);
  append_log(s, {{"event", "turn"}, {"turn", turn_json(user)}});

  if (s.user_turns() >= s.protocol.turns_per_side) {
    s.state = State::kClosing;
    append_log(s, {{"event", "state"}, {"state", to_string(s.state)}});
    for (const auto& phrase : s.protocol.closing_phrases) {
      Turn closing{Role::kSystem, phrase, clock_(), false};
      s.turns.push_back(closing);
      append_log(s, {{"event", "turn"}, {"turn", turn_json(closing)}});
      result.closing.push_back(phrase);
    }
    s.state = State::kAwaitingEvaluation;
    append_log(s, {{"event", "state"}, {"state", to_string(s.state)}});
    return result;
  }

  std::vector<std::string> context;
  const std::string query = build_query(s, context);
  auto params = s.spec.sampling;
  params.seed = mix_seed(s.rng_seed, s.system_turns());
  const auto model = models_->get(s.spec.model_id);
  const auto generated = gen::generate(*model, query, params, s.spec.filter, context);
  Turn reply{Role::kSystem, generated.response().text, clock_(), generated.fallback};
  s.turns.push_back(reply);
  append_log(s, {{"event", "turn"}, {"turn", turn_json(reply)}});
  result.reply = reply.text;
  result.fallback = reply.fallback;
  return result;
}

EvaluationRecord SessionStore::submit_evaluation(const std::string& session_id,
                                                 const json& scores,
                                                 const std::string& rater_id) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  Session& s = entry->session;
  if (s.state == State::kComplete) {
    throw Error(ErrorCode::kDuplicate, "session " + session_id + " already evaluated");
  }
  if (s.state != State::kAwaitingEvaluation) {
    throw Error(ErrorCode::kWrongState, "session " + session_id +
                                            " is not awaiting evaluation");
  }
  if (rater_id.empty()) throw Error(ErrorCode::kValidation, "rater_id is required");
  EvaluationRecord record{session_id, validate_scores(scores), rater_id, clock_()};
  append_log(s, {{"event", "evaluation"}, {"record", record}});
  s.evaluation = record;
  s.state = State::kComplete;
  append_log(s, {{"event", "state"}, {"state", to_string(s.state)}});
  return record;
}

Session SessionStore::get(const std::string& session_id) const {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  return entry->session;
}

std::vector<Session> SessionStore::list() const {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::shared_lock lock(mutex_);
    for (const auto& [_, e] : sessions_) entries.push_back(e);
  }
  std::vector<Session> out;
  for (const auto& e : entries) {
    std::lock_guard lock(e->mutex);
    out.push_back(e->session);
  }
  std::sort(out.begin(), out.end(), [](const Session& a, const Session& b) {
    if (a.created_at != b.created_at) return a.created_at < b.created_at;
    return a.sequence < b.sequence;
  });
  return out;
}

std::string SessionStore::export_dialogues(const ExportFilter& filter) const {
  std::string out;
  for (const auto& s : list()) {
    if (filter.state && s.state != *filter.state) continue;
    if (filter.model_id && s.spec.model_id != *filter.model_id) continue;
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

std::size_t SessionStore::import_dialogues(std::string_view jsonl) {
  std::istringstream in{std::string(jsonl)};
  std::vector<Session> parsed;
  jsonl::for_each_line(in, [&](std::size_t n, const std::string& line) {
    try {
      parsed.push_back(session_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, "line " + std::to_string(n) + ": " + e.what());
    }
  });
  std::unique_lock lock(mutex_);
  for (const auto& s : parsed) {
    if (sessions_.contains(s.id)) {
      throw Error(ErrorCode::kDuplicate, "session already present: " + s.id);
    }
  }
  for (auto& s : parsed) {
    auto entry = std::make_shared<Entry>();
    entry->session = s;
    if (log_dir_) {
      append_log(s, {{"event", "created"}, {"session", header_json(s)}});
      for (const auto& t : s.turns) {
        append_log(s, {{"event", "turn"}, {"turn", turn_json(t)}});
      }
      if (s.evaluation) {
        append_log(s, {{"event", "evaluation"}, {"record", *s.evaluation}});
      }
      append_log(s, {{"event", "state"}, {"state", to_string(s.state)}});
    }
    std::uint64_t seq = s.sequence;
    std::uint64_t expected = next_sequence_.load();
    while (seq >= expected && !next_sequence_.compare_exchange_weak(expected, seq + 1)) {
    }
    sessions_.emplace(s.id, std::move(entry));
  }
  return parsed.size();
}

std::map<std::string, std::vector<std::string>> make_assignments(
    const std::vector<std::string>& rater_ids,
    const std::vector<std::string>& system_ids, std::uint64_t seed) {
  std::map<std::string, std::vector<std::string>> table;
  std::vector<std::string> sorted_raters(rater_ids);
  std::sort(sorted_raters.begin(), sorted_raters.end());
  for (std::size_t i = 0; i < sorted_raters.size(); ++i) {
    std::vector<std::string> order(system_ids);
    Rng rng(mix_seed(seed, i));
    rng.shuffle(order);
    table[sorted_raters[i]] = std::move(order);
  }
  return table;
}

// --- JSON -------------------------------------------------------------------

json to_json(const Session& s) {
  json j = header_json(s);
  j["state"] = to_string(s.state);
  json turns = json::array();
  for (const auto& t : s.turns) turns.push_back(turn_json(t));
  j["turns"] = std::move(turns);
  j["evaluation"] = s.evaluation ? json(*s.evaluation) : json(nullptr);
  return j;
}

Session session_from_json(const json& j) {
  Session s;
  s.id = j.at("session_id").get<std::string>();
  s.sequence = j.value("sequence", std::uint64_t{0});
  s.created_at = j.value("created_at", std::string{});
  s.rng_seed = j.value("rng_seed", std::uint64_t{0});
  s.spec = j.at("system_spec").get<SystemSpec>();
  s.protocol = j.value("protocol", ProtocolConfig{});
  s.state = parse_state(j.value("state", std::string("Open")));
  if (j.contains("turns")) {
    for (const auto& t : j["turns"]) s.turns.push_back(turn_from_json(t));
  }
  if (j.contains("evaluation") && !j["evaluation"].is_null()) {
    s.evaluation = j["evaluation"].get<EvaluationRecord>();
  }
  return s;
}

void to_json(json& j, const SystemSpec& s) {
  j = json{{"model_id", s.model_id},
           {"condition", format::to_string(s.condition)},
           {"dataset_kind", format::to_string(s.dataset_kind)},
           {"sampling", s.sampling},
           {"filter", s.filter}};
  if (s.info) j["info"] = format::info_to_json(*s.info);
}

void from_json(const json& j, SystemSpec& s) {
  s.model_id = j.at("model_id").get<std::string>();
  s.condition = format::parse_condition(j.value("condition", std::string("flat")));
  s.dataset_kind =
      format::parse_dataset_kind(j.value("dataset_kind", std::string("Fav")));
  s.info.reset();
  if (j.contains("info") && !j["info"].is_null()) {
    s.info = format::info_from_json(j["info"]);
  }
  s.sampling = j.value("sampling", gen::SamplingParams{});
  s.filter = j.value("filter", gen::FilterConfig{});
}

void to_json(json& j, const ProtocolConfig& p) {
  j = json{{"opening_phrase", p.opening_phrase},
           {"closing_phrases", p.closing_phrases},
           {"turns_per_side", p.turns_per_side}};
}

void from_json(const json& j, ProtocolConfig& p) {
  p.opening_phrase = j.value("opening_phrase", p.opening_phrase);
  p.closing_phrases = j.value("closing_phrases", p.closing_phrases);
  p.turns_per_side = j.value("turns_per_side", p.turns_per_side);
}

void to_json(json& j, const EvaluationRecord& r) {
  j = json{{"session_id", r.session_id},
           {"scores", r.scores},
           {"rater_id", r.rater_id},
           {"submitted_at", r.submitted_at}};
}

void from_json(const json& j, EvaluationRecord& r) {
  r.session_id = j.at("session_id").get<std::string>();
  r.scores = validate_scores(j.at("scores"));
  r.rater_id = j.at("rater_id").get<std::string>();
  r.submitted_at = j.value("submitted_at", std::string{});
}

}  // namespace chitchat::session
