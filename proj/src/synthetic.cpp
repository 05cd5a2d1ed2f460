#include "chitchat/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <set>

#include "chitchat/error.hpp"
#include "chitchat/random.hpp"
#include "chitchat/unicode.hpp"

namespace chitchat::synth {

namespace {

constexpr std::int64_t kEpochBase = 1577836800;  // 2020-01-01T00:00:00Z
constexpr std::int64_t kDay = 86400;

const std::u32string kKanji = U"日本語学校先生今天気時間年月人大小中山川田電車駅店話友達家会社食事本映画音楽旅行朝夜";
const std::u32string kKatakana = U"アイウエオカキクケコサシスセソタチツテトナニヌネノハヒフヘホマミムメモ";
const std::u32string kEmoji = U"\U0001F600\U0001F60A\U0001F389❤\U0001F44D";

char32_t pick(Rng& rng, std::u32string_view pool) {
  return pool[static_cast<std::size_t>(rng.below(pool.size()))];
}

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

std::u32string hiragana() {
  std::u32string s;
  for (char32_t c = 0x3041; c <= 0x3093; ++c) s += c;
  return s;
}

// Mostly kana with a sprinkling of kanji: always passes the kana floor.
std::string clean_text(Rng& rng, std::size_t length) {
  static const std::u32string kana = hiragana();
  std::u32string s;
  for (std::size_t i = 0; i < length; ++i) {
    s += rng.uniform() < 0.15 ? pick(rng, kKanji) : pick(rng, kana);
  }
  return unicode::encode(s);
}

std::string low_kana_text(Rng& rng) {
  static const std::u32string kana = hiragana();
  std::u32string s;
  for (int i = 0; i < 27; ++i) s += pick(rng, kKanji);
  for (int i = 0; i < 3; ++i) s.insert(s.begin() + static_cast<long>(rng.below(s.size())), pick(rng, kana));
  return unicode::encode(s);
}

// Replaces the last code point with a different kana.
std::string near_copy(Rng& rng, const std::string& text) {
  static const std::u32string kana = hiragana();
  std::u32string s = unicode::decode(text);
  char32_t c = s.back();
  while (c == s.back()) c = pick(rng, kana);
  s.back() = c;
  return unicode::encode(s);
}

std::string rfc3339(std::int64_t epoch) {
  const std::time_t t = static_cast<std::time_t>(epoch);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

TweetCorpus tweet_corpus(const TweetCorpusOptions& options, std::uint64_t seed) {
  const std::size_t planted_total = 6 * options.per_rule + 2 * options.decoys;
  if (options.days == 0 || options.max_chain_length == 0 ||
      options.total < 2 * planted_total + 2 * options.decoys) {
    throw Error(ErrorCode::kInvalidArgument, "tweet corpus too small for its plants");
  }
  Rng rng(seed);
  TweetCorpus out;
  std::vector<std::string> base;  // text before decoration
  auto& tweets = out.tweets;

  while (tweets.size() < options.total) {
    const std::size_t length =
        std::min(between(rng, 1, options.max_chain_length), options.total - tweets.size());
    const std::int64_t day = static_cast<std::int64_t>(rng.below(options.days));
    const std::int64_t room = kDay - static_cast<std::int64_t>(length) * 600 - 1;
    std::int64_t t = kEpochBase + day * kDay + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(room)));
    std::optional<std::string> parent;
    for (std::size_t i = 0; i < length; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "t%06zu", tweets.size());
      corpus::RawTweet tw;
      tw.id = id;
      tw.author_id = "u" + std::to_string(rng.below(500));
      tw.in_reply_to = parent;
      tw.epoch_seconds = t;
      tw.timestamp = rfc3339(t);
      base.push_back(clean_text(rng, between(rng, 22, 40)));
      tw.text = base.back();
      if (rng.uniform() < 0.2) tw.text = "@user" + std::to_string(rng.below(1000)) + " " + tw.text;
      if (rng.uniform() < 0.1) tw.text += unicode::encode(std::u32string(1, pick(rng, kEmoji)));
      parent = tw.id;
      tweets.push_back(std::move(tw));
      t += 1 + static_cast<std::int64_t>(rng.below(600));
    }
  }

  // Every tweet takes part in at most one plant; sources stay clean.
  std::vector<std::size_t> order(tweets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<bool> used(tweets.size(), false);
  std::size_t cursor = 0;
  auto take = [&]() {
    while (used[order[cursor]]) ++cursor;
    used[order[cursor]] = true;
    return order[cursor++];
  };
  auto plant = [&](std::size_t i, corpus::RejectRule rule) { out.planted[tweets[i].id] = rule; };

  for (std::size_t n = 0; n < options.per_rule; ++n) {
    const auto i = take();
    if (n % 2 == 0) {
      tweets[i].is_retweet = true;
    } else {
      tweets[i].text = "RT @user" + std::to_string(n) + ": " + base[i];
    }
    plant(i, corpus::RejectRule::kRetweet);
  }
  for (std::size_t n = 0; n < options.per_rule; ++n) {
    const auto i = take();
    tweets[i].author_is_bot = true;
    plant(i, corpus::RejectRule::kBot);
  }
  for (std::size_t n = 0; n < options.per_rule; ++n) {
    const auto i = take();
    const char* url = n % 3 == 0 ? " https://t.co/x" : (n % 3 == 1 ? " http://example.jp/a" : " www.example.com");
    tweets[i].text += url + std::to_string(n);
    plant(i, corpus::RejectRule::kUrl);
  }
  for (std::size_t n = 0; n < options.per_rule; ++n) {
    const auto i = take();
    tweets[i].text += n % 2 == 0 ? "(笑)" : "（笑）";
    plant(i, corpus::RejectRule::kParentheses);
  }
  for (std::size_t n = 0; n < options.per_rule; ++n) {
    const auto i = take();
    tweets[i].text = low_kana_text(rng);
    plant(i, corpus::RejectRule::kLowKana);
  }

  // Near-duplicates need a clean source on the same day with an earlier
  // timestamp; decoys copy a source onto another day or below the length
  // exemption. Each source is used once.
  std::vector<std::size_t> by_time(tweets.size());
  for (std::size_t i = 0; i < by_time.size(); ++i) by_time[i] = i;
  std::stable_sort(by_time.begin(), by_time.end(), [&](std::size_t a, std::size_t b) {
    return tweets[a].epoch_seconds < tweets[b].epoch_seconds;
  });
  auto day_of = [&](std::size_t i) { return (tweets[i].epoch_seconds - kEpochBase) / kDay; };
  auto find_source = [&](std::size_t copy, bool same_day) -> std::optional<std::size_t> {
    for (std::size_t tries = 0; tries < 4 * tweets.size(); ++tries) {
      const auto s = static_cast<std::size_t>(rng.below(tweets.size()));
      if (used[s] || s == copy) continue;
      if (same_day != (day_of(s) == day_of(copy))) continue;
      if (tweets[s].epoch_seconds >= tweets[copy].epoch_seconds) continue;
      return s;
    }
    return std::nullopt;
  };

  std::size_t planted_dups = 0;
  while (planted_dups < options.per_rule) {
    const auto i = take();
    const auto s = find_source(i, true);
    if (!s) continue;  // i stays clean
    used[*s] = true;
    tweets[i].text = near_copy(rng, base[*s]);
    plant(i, corpus::RejectRule::kDuplicate);
    ++planted_dups;
  }
  std::size_t cross_day = 0;
  while (cross_day < options.decoys) {
    const auto i = take();
    const auto s = find_source(i, false);
    if (!s) continue;
    used[*s] = true;
    tweets[i].text = near_copy(rng, base[*s]);
    ++cross_day;
  }
  std::size_t short_pairs = 0;
  while (short_pairs < options.decoys) {
    const auto i = take();
    const auto s = find_source(i, true);
    if (!s) continue;
    used[*s] = true;
    const auto text = clean_text(rng, between(rng, 12, 18));
    tweets[*s].text = text;
    tweets[i].text = text;
    ++short_pairs;
  }

  rng.shuffle(tweets);
  return out;
}

ToyFav toy_fav(const ToyFavOptions& options, std::uint64_t seed) {
  const std::u32string pool = hiragana().substr(0, options.shared_alphabet);
  if (options.shared_alphabet > 83 || options.vocabulary_per_speaker == 0 ||
      options.vocabulary_per_speaker > options.shared_alphabet || options.speakers == 0 ||
      options.utterances < 2) {
    throw Error(ErrorCode::kInvalidArgument, "bad toy corpus options");
  }
  Rng rng(seed);
  ToyFav out;
  std::vector<std::string> ids;
  for (std::size_t s = 0; s < options.speakers; ++s) {
    char id[8];
    std::snprintf(id, sizeof id, "%03zu", s + 1);
    ids.emplace_back(id);
    std::u32string letters(pool);
    std::vector<char32_t> shuffled(letters.begin(), letters.end());
    rng.shuffle(shuffled);
    out.vocabularies[id] =
        std::u32string(shuffled.begin(), shuffled.begin() + static_cast<long>(options.vocabulary_per_speaker));
  }

  auto utterance = [&](std::u32string_view letters) {
    std::u32string s;
    const std::size_t n = between(rng, 4, 8);
    for (std::size_t i = 0; i < n; ++i) s += pick(rng, letters);
    return unicode::encode(s);
  };
  auto dialogue = [&]() {
    format::FineTuneDialogue d;
    d.dataset_kind = format::DatasetKind::kFav;
    const auto& id = ids[static_cast<std::size_t>(rng.below(ids.size()))];
    d.additional_info = format::SpeakerIdInfo{id};
    for (std::size_t u = 0; u < options.utterances; ++u) {
      const bool own = u % 2 == 1;
      d.utterances.push_back({own ? format::Speaker::kSpk2 : format::Speaker::kSpk1,
                              utterance(own ? std::u32string_view(out.vocabularies[id])
                                            : std::u32string_view(kKatakana))});
    }
    return d;
  };
  for (std::size_t i = 0; i < options.train_dialogues; ++i) out.train.push_back(dialogue());
  for (std::size_t i = 0; i < options.test_dialogues; ++i) out.test.push_back(dialogue());
  return out;
}

ToyOrder toy_order(const ToyOrderOptions& options, std::uint64_t seed) {
  if (options.alphabet < 3 || options.alphabet > 83 || options.target_length < 3) {
    throw Error(ErrorCode::kInvalidArgument, "bad toy order options");
  }
  Rng rng(seed);
  const std::u32string letters = hiragana().substr(0, options.alphabet);
  const std::size_t a = options.alphabet;
  // Each (prev2, prev1) context prefers two successors, 0.7 / 0.3.
  std::vector<std::pair<std::size_t, std::size_t>> successors(a * a);
  for (auto& s : successors) {
    s.first = static_cast<std::size_t>(rng.below(a));
    do {
      s.second = static_cast<std::size_t>(rng.below(a));
    } while (s.second == s.first);
  }
  auto record = [&]() {
    std::u32string query;
    for (int i = 0; i < 3; ++i) query += letters[static_cast<std::size_t>(rng.below(a))];
    std::vector<std::size_t> seq = {static_cast<std::size_t>(rng.below(a)),
                                    static_cast<std::size_t>(rng.below(a))};
    while (seq.size() < options.target_length) {
      const auto& s = successors[seq[seq.size() - 2] * a + seq.back()];
      seq.push_back(rng.uniform() < 0.7 ? s.first : s.second);
    }
    std::u32string target;
    for (auto i : seq) target += letters[i];
    format::QueryRecord r;
    r.query_text = unicode::encode(query);
    r.target_text = unicode::encode(target);
    return r;
  };
  ToyOrder out;
  for (std::size_t i = 0; i < options.train_records; ++i) out.train.push_back(record());
  for (std::size_t i = 0; i < options.test_records; ++i) out.test.push_back(record());
  return out;
}

}  // namespace chitchat::synth
