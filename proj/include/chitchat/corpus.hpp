#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace chitchat::corpus {

struct RawTweet {
  std::string id;
  std::string author_id;
  std::optional<std::string> in_reply_to;
  std::string timestamp;      // RFC 3339 as received
  std::int64_t epoch_seconds = 0;  // parsed, UTC
  std::string text;
  bool author_is_bot = false;
  bool is_retweet = false;
};

struct CleanTweet {
  std::string id;
  std::string author_id;
  std::optional<std::string> in_reply_to;
  std::string timestamp;
  std::int64_t epoch_seconds = 0;
  std::string text;

  bool operator==(const CleanTweet&) const = default;
};

struct CleaningConfig {
  double duplicate_similarity_threshold = 0.9;
  std::size_t duplicate_min_length = 20;
  double kana_ratio_min = 0.30;
  bool drop_urls = true;
  bool drop_parentheses = true;
  bool drop_retweets = true;
  bool drop_bots = true;
  /// Worker count for day partitions; 0 picks hardware concurrency.
  unsigned threads = 1;

  void validate() const;
};

enum class RejectRule {
  kMalformed,
  kRetweet,
  kBot,
  kUrl,
  kParentheses,
  kLowKana,
  kDuplicate,
  kCycle,
};

std::string_view to_string(RejectRule rule);

struct Rejection {
  std::string id;
  RejectRule rule;

  bool operator==(const Rejection&) const = default;
};

struct CleanResult {
  std::vector<CleanTweet> tweets;
  std::vector<Rejection> rejections;
};

/// A root-anchored reply path; id is the id of its last tweet.
struct Chain {
  std::string id;
  std::vector<CleanTweet> tweets;
};

struct ChainResult {
  std::vector<Chain> chains;
  std::vector<Rejection> dropped;  // tweets lost to reply cycles
};

struct DialoguePair {
  std::vector<std::string> context;  // root first
  std::string target;
  std::string source_chain_id;

  bool operator==(const DialoguePair&) const = default;
};

struct CorpusStats {
  std::size_t pair_count = 0;
  std::optional<double> mean_context_utterances;
  std::optional<double> mean_context_chars;
  std::optional<double> mean_target_chars;
};

/// Seconds since the Unix epoch for an RFC 3339 timestamp.
/// Throws Error(kParse) on malformed input.
std::int64_t parse_rfc3339(std::string_view text);

/// Hiragana+Katakana code points over non-whitespace code points.
double kana_ratio(std::string_view text);

/// Cosine of character-bigram count vectors; 0 when either has no bigram.
double near_duplicate_similarity(std::string_view a, std::string_view b);

/// Strips @-mentions and emoji, then trims surrounding whitespace.
std::string normalize_text(std::string_view text);

CleanResult clean_tweets(const std::vector<RawTweet>& tweets,
                         const CleaningConfig& config);

ChainResult build_chains(const std::vector<CleanTweet>& tweets);

/// Chains whose last tweet has no reply inside the chain set.
std::vector<Chain> maximal_chains(const std::vector<Chain>& chains);

std::vector<DialoguePair> extract_pairs(const Chain& chain);

/// One pair per chain: the last tweet is the target, the rest the context.
/// Over the output of build_chains this yields every prefix pair exactly once.
std::vector<DialoguePair> pairs_from_chains(const std::vector<Chain>& chains);

CorpusStats corpus_stats(const std::vector<DialoguePair>& pairs);

// JSON Lines surface.

struct RawReadResult {
  std::vector<RawTweet> tweets;
  std::vector<Rejection> malformed;
};

/// Reads one tweet per line. Malformed lines are logged (with the line's id
/// when recoverable, otherwise "line:<n>") and skipped.
RawReadResult read_raw_tweets(std::istream& in);
RawReadResult read_raw_tweets_file(const std::string& path);
std::vector<CleanTweet> read_clean_tweets_file(const std::string& path);
std::vector<DialoguePair> read_pairs_file(const std::string& path);

void to_json(nlohmann::json& j, const RawTweet& t);
void to_json(nlohmann::json& j, const CleanTweet& t);
void from_json(const nlohmann::json& j, CleanTweet& t);
void to_json(nlohmann::json& j, const Rejection& r);
void to_json(nlohmann::json& j, const DialoguePair& p);
void from_json(const nlohmann::json& j, DialoguePair& p);
void to_json(nlohmann::json& j, const CorpusStats& s);
void from_json(const nlohmann::json& j, CleaningConfig& c);
void to_json(nlohmann::json& j, const CleaningConfig& c);

}  // namespace chitchat::corpus
