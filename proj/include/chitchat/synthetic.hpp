#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chitchat/corpus.hpp"
#include "chitchat/formatter.hpp"

// Seeded toy data for demos, the pipeline smoke config and the test suites.
namespace chitchat::synth {

struct TweetCorpusOptions {
  std::size_t total = 10000;
  std::size_t days = 30;
  /// Planted count per rule: retweet, bot, URL, parentheses, low kana,
  /// same-day near-duplicate.
  std::size_t per_rule = 150;
  /// Decoys that must survive: near-duplicates on another day and
  /// near-duplicates below the length exemption.
  std::size_t decoys = 100;
  std::size_t max_chain_length = 6;
};

struct TweetCorpus {
  std::vector<corpus::RawTweet> tweets;
  /// Planted violations: tweet id -> the rule expected to reject it.
  std::map<std::string, corpus::RejectRule> planted;
};

TweetCorpus tweet_corpus(const TweetCorpusOptions& options, std::uint64_t seed);

struct ToyFavOptions {
  std::size_t speakers = 8;
  std::size_t shared_alphabet = 24;
  std::size_t vocabulary_per_speaker = 6;
  std::size_t train_dialogues = 3000;
  std::size_t test_dialogues = 600;
  std::size_t utterances = 4;
};

struct ToyFav {
  std::vector<format::FineTuneDialogue> train;
  std::vector<format::FineTuneDialogue> test;
  std::map<std::string, std::u32string> vocabularies;  // speaker id -> chars
};

/// Favorite-things style dialogues where the replying speaker's ID alone
/// decides which characters its utterances use.
ToyFav toy_fav(const ToyFavOptions& options, std::uint64_t seed);

struct ToyOrderOptions {
  std::size_t alphabet = 10;
  std::size_t train_records = 3000;
  std::size_t test_records = 500;
  std::size_t target_length = 24;
};

/// Query/target records from a sparse second-order Markov source, so each
/// added order of context carries information.
struct ToyOrder {
  std::vector<format::QueryRecord> train;
  std::vector<format::QueryRecord> test;
};
ToyOrder toy_order(const ToyOrderOptions& options, std::uint64_t seed);

}  // namespace chitchat::synth
