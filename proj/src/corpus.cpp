#include "chitchat/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <future>
#include <map>
#include <numeric>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "chitchat/error.hpp"
#include "chitchat/jsonl.hpp"
#include "chitchat/unicode.hpp"

namespace chitchat::corpus {

using nlohmann::json;

std::string_view to_string(RejectRule rule) {
  switch (rule) {
    case RejectRule::kMalformed: return "MALFORMED";
    case RejectRule::kRetweet: return "RETWEET";
    case RejectRule::kBot: return "BOT";
    case RejectRule::kUrl: return "URL";
    case RejectRule::kParentheses: return "PARENTHESES";
    case RejectRule::kLowKana: return "LOW_KANA";
    case RejectRule::kDuplicate: return "DUPLICATE";
    case RejectRule::kCycle: return "CYCLE";
  }
  return "UNKNOWN";
}

void CleaningConfig::validate() const {
  auto frac = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!frac(duplicate_similarity_threshold) || !frac(kana_ratio_min)) {
    throw Error(ErrorCode::kInvalidArgument,
                "cleaning thresholds must lie in [0, 1]");
  }
}

namespace {

int parse_digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) throw Error(ErrorCode::kParse, "truncated timestamp");
  int value = 0;
  const auto* first = s.data() + pos;
  const auto [ptr, ec] = std::from_chars(first, first + n, value);
  if (ec != std::errc() || ptr != first + n) {
    throw Error(ErrorCode::kParse, "bad digits in timestamp");
  }
  return value;
}

void expect(std::string_view s, std::size_t pos, char c) {
  if (pos >= s.size() || (s[pos] != c && std::tolower(s[pos]) != c)) {
    throw Error(ErrorCode::kParse,
                "malformed timestamp: " + std::string(s));
  }
}

}  // namespace

std::int64_t parse_rfc3339(std::string_view s) {
  // YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM)
  const int year = parse_digits(s, 0, 4);
  expect(s, 4, '-');
  const int month = parse_digits(s, 5, 2);
  expect(s, 7, '-');
  const int day = parse_digits(s, 8, 2);
  if (s.size() <= 10 || (s[10] != 'T' && s[10] != 't' && s[10] != ' ')) {
    throw Error(ErrorCode::kParse, "malformed timestamp: " + std::string(s));
  }
  const int hour = parse_digits(s, 11, 2);
  expect(s, 13, ':');
  const int minute = parse_digits(s, 14, 2);
  expect(s, 16, ':');
  const int second = parse_digits(s, 17, 2);
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    const std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    }
    if (pos == start) throw Error(ErrorCode::kParse, "empty fraction");
  }
  int offset_seconds = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
    const int sign = s[pos] == '+' ? 1 : -1;
    const int oh = parse_digits(s, pos + 1, 2);
    expect(s, pos + 3, ':');
    const int om = parse_digits(s, pos + 4, 2);
    offset_seconds = sign * (oh * 3600 + om * 60);
    pos += 6;
  } else {
    throw Error(ErrorCode::kParse, "timestamp lacks offset: " + std::string(s));
  }
  if (pos != s.size()) {
    throw Error(ErrorCode::kParse, "trailing data in timestamp");
  }
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year},
                           std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 60) {
    throw Error(ErrorCode::kParse, "timestamp out of range: " + std::string(s));
  }
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + hour * 3600 + minute * 60 +
         second - offset_seconds;
}

double kana_ratio(std::string_view text) {
  std::size_t kana = 0;
  std::size_t counted = 0;
  for (char32_t cp : unicode::decode(text)) {
    if (unicode::is_whitespace(cp)) continue;
    ++counted;
    if (unicode::is_hiragana(cp) || unicode::is_katakana(cp)) ++kana;
  }
  return counted == 0 ? 0.0
                      : static_cast<double>(kana) / static_cast<double>(counted);
}

namespace {

using BigramCounts = std::unordered_map<std::uint64_t, double>;

BigramCounts bigram_counts(const std::u32string& cps) {
  BigramCounts counts;
  for (std::size_t i = 0; i + 1 < cps.size(); ++i) {
    const auto key = (static_cast<std::uint64_t>(cps[i]) << 32) | cps[i + 1];
    counts[key] += 1.0;
  }
  return counts;
}

double norm(const BigramCounts& v) {
  double sq = 0.0;
  for (const auto& [_, c] : v) sq += c * c;
  return std::sqrt(sq);
}

double cosine(const BigramCounts& a, double norm_a, const BigramCounts& b,
              double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  double dot = 0.0;
  for (const auto& [key, c] : small) {
    if (auto it = large.find(key); it != large.end()) dot += c * it->second;
  }
  return std::min(1.0, dot / (norm_a * norm_b));
}

}  // namespace

double near_duplicate_similarity(std::string_view a, std::string_view b) {
  const auto va = bigram_counts(unicode::decode(a));
  const auto vb = bigram_counts(unicode::decode(b));
  return cosine(va, norm(va), vb, norm(vb));
}

std::string normalize_text(std::string_view text) {
  const auto cps = unicode::decode(text);
  std::u32string out;
  out.reserve(cps.size());
  auto is_handle_char = [](char32_t c) {
    return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z') ||
           (c >= U'0' && c <= U'9') || c == U'_';
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if ((c == U'@' || c == U'＠') && i + 1 < cps.size() &&
        is_handle_char(cps[i + 1])) {
      std::size_t j = i + 1;
      while (j < cps.size() && is_handle_char(cps[j])) ++j;
      if (j < cps.size() && unicode::is_whitespace(cps[j])) ++j;
      i = j - 1;
      continue;
    }
    if (unicode::is_emoji(c)) continue;
    out.push_back(c);
  }
  std::size_t first = 0;
  while (first < out.size() && unicode::is_whitespace(out[first])) ++first;
  std::size_t last = out.size();
  while (last > first && unicode::is_whitespace(out[last - 1])) --last;
  return unicode::encode(std::u32string_view(out).substr(first, last - first));
}

namespace {

bool contains_url(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](char c) {
    return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  });
  return lower.find("http://") != std::string::npos ||
         lower.find("https://") != std::string::npos ||
         lower.find("www.") != std::string::npos;
}

bool contains_parenthesis(std::string_view text) {
  for (char32_t cp : unicode::decode(text)) {
    if (cp == U'(' || cp == U')' || cp == U'（' || cp == U'）') return true;
  }
  return false;
}

bool is_retweet_text(std::string_view raw) { return raw.starts_with("RT @"); }

std::int64_t day_of(std::int64_t epoch_seconds) {
  return epoch_seconds >= 0 ? epoch_seconds / 86400
                            : -((-epoch_seconds + 86399) / 86400);
}

struct Candidate {
  std::size_t input_index;
  CleanTweet tweet;
};

// Marks DUPLICATE within one calendar day. Survivors of the per-tweet rules
// are scanned in timestamp order; a tweet is dropped when any earlier
// non-exempt tweet of the same day reaches the threshold.
std::vector<bool> dedup_day(const std::vector<const Candidate*>& day,
                            const CleaningConfig& config) {
  std::vector<const Candidate*> order(day);
  std::stable_sort(order.begin(), order.end(),
                   [](const Candidate* a, const Candidate* b) {
                     if (a->tweet.epoch_seconds != b->tweet.epoch_seconds) {
                       return a->tweet.epoch_seconds < b->tweet.epoch_seconds;
                     }
                     return a->input_index < b->input_index;
                   });
  struct Vec {
    BigramCounts counts;
    double norm;
  };
  std::vector<Vec> earlier;
  std::unordered_map<const Candidate*, bool> dropped;
  for (const Candidate* c : order) {
    const auto cps = unicode::decode(c->tweet.text);
    if (cps.size() < config.duplicate_min_length) continue;
    auto counts = bigram_counts(cps);
    const double n = norm(counts);
    bool dup = false;
    for (const auto& e : earlier) {
      if (cosine(e.counts, e.norm, counts, n) >=
          config.duplicate_similarity_threshold) {
        dup = true;
        break;
      }
    }
    if (dup) dropped[c] = true;
    earlier.push_back({std::move(counts), n});
  }
  std::vector<bool> flags(day.size(), false);
  for (std::size_t i = 0; i < day.size(); ++i) flags[i] = dropped.contains(day[i]);
  return flags;
}

}  // namespace

CleanResult clean_tweets(const std::vector<RawTweet>& tweets,
                         const CleaningConfig& config) {
  config.validate();
  std::vector<std::optional<RejectRule>> verdict(tweets.size());
  std::vector<Candidate> candidates;
  candidates.reserve(tweets.size());

  for (std::size_t i = 0; i < tweets.size(); ++i) {
    const RawTweet& t = tweets[i];
    if (config.drop_retweets && (t.is_retweet || is_retweet_text(t.text))) {
      verdict[i] = RejectRule::kRetweet;
      continue;
    }
    if (config.drop_bots && t.author_is_bot) {
      verdict[i] = RejectRule::kBot;
      continue;
    }
    std::string text = normalize_text(t.text);
    if (config.drop_urls && contains_url(text)) {
      verdict[i] = RejectRule::kUrl;
      continue;
    }
    if (config.drop_parentheses && contains_parenthesis(text)) {
      verdict[i] = RejectRule::kParentheses;
      continue;
    }
    if (kana_ratio(text) < config.kana_ratio_min) {
      verdict[i] = RejectRule::kLowKana;
      continue;
    }
    candidates.push_back({i, CleanTweet{t.id, t.author_id, t.in_reply_to,
                                        t.timestamp, t.epoch_seconds,
                                        std::move(text)}});
  }

  std::map<std::int64_t, std::vector<const Candidate*>> days;
  for (const auto& c : candidates) {
    days[day_of(c.tweet.epoch_seconds)].push_back(&c);
  }
  std::vector<const std::vector<const Candidate*>*> partitions;
  for (const auto& [_, day] : days) partitions.push_back(&day);

  unsigned workers = config.threads == 0 ? std::thread::hardware_concurrency()
                                         : config.threads;
  workers = std::max(1u, std::min<unsigned>(
                             workers, static_cast<unsigned>(partitions.size())));
  std::vector<std::vector<bool>> flags(partitions.size());
  if (workers <= 1) {
    for (std::size_t p = 0; p < partitions.size(); ++p) {
      flags[p] = dedup_day(*partitions[p], config);
    }
  } else {
    std::vector<std::future<void>> jobs;
    for (unsigned w = 0; w < workers; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t p = w; p < partitions.size(); p += workers) {
          flags[p] = dedup_day(*partitions[p], config);
        }
      }));
    }
    for (auto& j : jobs) j.get();
  }
  for (std::size_t p = 0; p < partitions.size(); ++p) {
    for (std::size_t k = 0; k < partitions[p]->size(); ++k) {
      if (flags[p][k]) verdict[(*partitions[p])[k]->input_index] =
          RejectRule::kDuplicate;
    }
  }

  CleanResult result;
  auto next = candidates.begin();
  for (std::size_t i = 0; i < tweets.size(); ++i) {
    if (verdict[i]) {
      result.rejections.push_back({tweets[i].id, *verdict[i]});
      if (next != candidates.end() && next->input_index == i) ++next;
      continue;
    }
    result.tweets.push_back(std::move(next->tweet));
    ++next;
  }
  return result;
}

ChainResult build_chains(const std::vector<CleanTweet>& tweets) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < tweets.size(); ++i) index.emplace(tweets[i].id, i);

  constexpr std::size_t kRoot = static_cast<std::size_t>(-1);
  std::vector<std::size_t> parent(tweets.size(), kRoot);
  for (std::size_t i = 0; i < tweets.size(); ++i) {
    if (!tweets[i].in_reply_to) continue;
    if (auto it = index.find(*tweets[i].in_reply_to); it != index.end()) {
      parent[i] = it->second;
    }
  }

  // 0 = unvisited, 1 = on current walk, 2 = reaches a root, 3 = cyclic.
  std::vector<int> state(tweets.size(), 0);
  for (std::size_t start = 0; start < tweets.size(); ++start) {
    if (state[start] != 0) continue;
    std::vector<std::size_t> walk;
    std::size_t node = start;
    int outcome = 2;
    while (true) {
      if (state[node] == 1) {
        outcome = 3;
        break;
      }
      if (state[node] >= 2) {
        outcome = state[node];
        break;
      }
      state[node] = 1;
      walk.push_back(node);
      if (parent[node] == kRoot) {
        outcome = 2;
        break;
      }
      node = parent[node];
    }
    for (std::size_t n : walk) state[n] = outcome;
  }

  auto tweet_order = [&](std::size_t a, std::size_t b) {
    if (tweets[a].epoch_seconds != tweets[b].epoch_seconds) {
      return tweets[a].epoch_seconds < tweets[b].epoch_seconds;
    }
    return tweets[a].id < tweets[b].id;
  };

  std::vector<std::vector<std::size_t>> children(tweets.size());
  std::vector<std::size_t> roots;
  ChainResult result;
  for (std::size_t i = 0; i < tweets.size(); ++i) {
    if (state[i] == 3) {
      result.dropped.push_back({tweets[i].id, RejectRule::kCycle});
      continue;
    }
    if (parent[i] == kRoot) {
      roots.push_back(i);
    } else {
      children[parent[i]].push_back(i);
    }
  }
  std::sort(roots.begin(), roots.end(), tweet_order);
  for (auto& c : children) std::sort(c.begin(), c.end(), tweet_order);

  // Iterative preorder DFS; each visited non-root node closes one chain.
  for (std::size_t root : roots) {
    std::vector<std::size_t> path{root};
    std::vector<std::size_t> cursor{0};
    while (!path.empty()) {
      const std::size_t node = path.back();
      std::size_t& next = cursor.back();
      if (next < children[node].size()) {
        const std::size_t child = children[node][next++];
        path.push_back(child);
        cursor.push_back(0);
        Chain chain;
        chain.id = tweets[child].id;
        chain.tweets.reserve(path.size());
        for (std::size_t n : path) chain.tweets.push_back(tweets[n]);
        result.chains.push_back(std::move(chain));
      } else {
        path.pop_back();
        cursor.pop_back();
      }
    }
  }
  return result;
}

std::vector<Chain> maximal_chains(const std::vector<Chain>& chains) {
  std::unordered_set<std::string> has_reply;
  for (const auto& c : chains) {
    has_reply.insert(c.tweets[c.tweets.size() - 2].id);
  }
  std::vector<Chain> out;
  for (const auto& c : chains) {
    if (!has_reply.contains(c.id)) out.push_back(c);
  }
  return out;
}

std::vector<DialoguePair> extract_pairs(const Chain& chain) {
  std::vector<DialoguePair> pairs;
  if (chain.tweets.size() < 2) return pairs;
  for (std::size_t i = 1; i < chain.tweets.size(); ++i) {
    DialoguePair p;
    for (std::size_t j = 0; j < i; ++j) p.context.push_back(chain.tweets[j].text);
    p.target = chain.tweets[i].text;
    p.source_chain_id = chain.id;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<DialoguePair> pairs_from_chains(const std::vector<Chain>& chains) {
  std::vector<DialoguePair> pairs;
  pairs.reserve(chains.size());
  for (const auto& chain : chains) {
    if (chain.tweets.size() < 2) continue;
    DialoguePair p;
    for (std::size_t j = 0; j + 1 < chain.tweets.size(); ++j) {
      p.context.push_back(chain.tweets[j].text);
    }
    p.target = chain.tweets.back().text;
    p.source_chain_id = chain.id;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

CorpusStats corpus_stats(const std::vector<DialoguePair>& pairs) {
  CorpusStats stats;
  stats.pair_count = pairs.size();
  if (pairs.empty()) return stats;
  double utterances = 0.0;
  double context_chars = 0.0;
  double target_chars = 0.0;
  for (const auto& p : pairs) {
    utterances += static_cast<double>(p.context.size());
    for (const auto& u : p.context) {
      context_chars += static_cast<double>(unicode::length(u));
    }
    target_chars += static_cast<double>(unicode::length(p.target));
  }
  const auto n = static_cast<double>(pairs.size());
  stats.mean_context_utterances = utterances / n;
  stats.mean_context_chars = context_chars / n;
  stats.mean_target_chars = target_chars / n;
  return stats;
}

// --- JSON surface -----------------------------------------------------------

RawReadResult read_raw_tweets(std::istream& in) {
  RawReadResult result;
  std::unordered_set<std::string> seen;
  jsonl::for_each_line(in, [&](std::size_t n, const std::string& line) {
    std::string id = "line:" + std::to_string(n);
    try {
      const json j = json::parse(line);
      if (j.contains("id") && j["id"].is_string()) id = j["id"].get<std::string>();
      RawTweet t;
      t.id = j.at("id").get<std::string>();
      t.author_id = j.at("author_id").get<std::string>();
      if (j.contains("in_reply_to") && !j["in_reply_to"].is_null()) {
        t.in_reply_to = j["in_reply_to"].get<std::string>();
      }
      t.timestamp = j.at("timestamp").get<std::string>();
      t.epoch_seconds = parse_rfc3339(t.timestamp);
      t.text = j.at("text").get<std::string>();
      t.author_is_bot = j.value("is_bot", false);
      t.is_retweet = j.value("is_retweet", false);
      if (!seen.insert(t.id).second) {
        result.malformed.push_back({id, RejectRule::kMalformed});
        return;
      }
      result.tweets.push_back(std::move(t));
    } catch (const json::exception&) {
      result.malformed.push_back({id, RejectRule::kMalformed});
    } catch (const Error&) {
      result.malformed.push_back({id, RejectRule::kMalformed});
    }
  });
  return result;
}

RawReadResult read_raw_tweets_file(const std::string& path) {
  auto in = jsonl::open_in(path);
  return read_raw_tweets(in);
}

std::vector<CleanTweet> read_clean_tweets_file(const std::string& path) {
  return jsonl::read_file<CleanTweet>(path);
}

std::vector<DialoguePair> read_pairs_file(const std::string& path) {
  return jsonl::read_file<DialoguePair>(path);
}

void to_json(json& j, const RawTweet& t) {
  j = json{{"id", t.id},
           {"author_id", t.author_id},
           {"in_reply_to", t.in_reply_to ? json(*t.in_reply_to) : json(nullptr)},
           {"timestamp", t.timestamp},
           {"text", t.text},
           {"is_bot", t.author_is_bot}};
  if (t.is_retweet) j["is_retweet"] = true;
}

void to_json(json& j, const CleanTweet& t) {
  j = json{{"id", t.id},
           {"author_id", t.author_id},
           {"in_reply_to", t.in_reply_to ? json(*t.in_reply_to) : json(nullptr)},
           {"timestamp", t.timestamp},
           {"text", t.text}};
}

void from_json(const json& j, CleanTweet& t) {
  t.id = j.at("id").get<std::string>();
  t.author_id = j.at("author_id").get<std::string>();
  t.in_reply_to.reset();
  if (j.contains("in_reply_to") && !j["in_reply_to"].is_null()) {
    t.in_reply_to = j["in_reply_to"].get<std::string>();
  }
  t.timestamp = j.at("timestamp").get<std::string>();
  t.epoch_seconds = parse_rfc3339(t.timestamp);
  t.text = j.at("text").get<std::string>();
}

void to_json(json& j, const Rejection& r) {
  j = json{{"id", r.id}, {"rule", to_string(r.rule)}};
}

void to_json(json& j, const DialoguePair& p) {
  j = json{{"context", p.context},
           {"target", p.target},
           {"chain_id", p.source_chain_id}};
}

void from_json(const json& j, DialoguePair& p) {
  p.context = j.at("context").get<std::vector<std::string>>();
  p.target = j.at("target").get<std::string>();
  p.source_chain_id = j.value("chain_id", std::string{});
}

void to_json(json& j, const CorpusStats& s) {
  auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  j = json{{"pair_count", s.pair_count},
           {"mean_context_utterances", opt(s.mean_context_utterances)},
           {"mean_context_chars", opt(s.mean_context_chars)},
           {"mean_target_chars", opt(s.mean_target_chars)}};
}

void from_json(const json& j, CleaningConfig& c) {
  c.duplicate_similarity_threshold =
      j.value("duplicate_similarity_threshold", c.duplicate_similarity_threshold);
  c.duplicate_min_length = j.value("duplicate_min_length", c.duplicate_min_length);
  c.kana_ratio_min = j.value("kana_ratio_min", c.kana_ratio_min);
  c.drop_urls = j.value("drop_urls", c.drop_urls);
  c.drop_parentheses = j.value("drop_parentheses", c.drop_parentheses);
  c.drop_retweets = j.value("drop_retweets", c.drop_retweets);
  c.drop_bots = j.value("drop_bots", c.drop_bots);
  c.threads = j.value("threads", c.threads);
}

void to_json(json& j, const CleaningConfig& c) {
  j = json{{"duplicate_similarity_threshold", c.duplicate_similarity_threshold},
           {"duplicate_min_length", c.duplicate_min_length},
           {"kana_ratio_min", c.kana_ratio_min},
           {"drop_urls", c.drop_urls},
           {"drop_parentheses", c.drop_parentheses},
           {"drop_retweets", c.drop_retweets},
           {"drop_bots", c.drop_bots},
           {"threads", c.threads}};
}

}  // namespace chitchat::corpus
