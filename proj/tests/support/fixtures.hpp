#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <unistd.h>

#include "chitchat/formatter.hpp"
#include "chitchat/lm.hpp"
#include "chitchat/synthetic.hpp"

namespace fixture {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("chitchat-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// Same probability for every vocabulary entry.
class UniformScorer final : public chitchat::lm::Scorer {
 public:
  explicit UniformScorer(chitchat::lm::Vocabulary v) : vocab_(std::move(v)) {}
  const chitchat::lm::Vocabulary& vocabulary() const override { return vocab_; }
  chitchat::lm::TokenDistribution next_token_dist(std::span<const chitchat::lm::TokenId>,
                                                  std::string_view) const override {
    return {std::vector<double>(vocab_.size(), 1.0 / static_cast<double>(vocab_.size()))};
  }

 private:
  chitchat::lm::Vocabulary vocab_;
};

/// Always emits `reply` then EOS, with probability one.
class ScriptedScorer final : public chitchat::lm::Scorer {
 public:
  explicit ScriptedScorer(const std::string& reply) {
    for (const auto& t : chitchat::lm::tokenize(reply)) vocab_.add(t);
    script_ = vocab_.encode(reply);
    script_.push_back(vocab_.eos());
  }
  const chitchat::lm::Vocabulary& vocabulary() const override { return vocab_; }
  chitchat::lm::TokenDistribution next_token_dist(std::span<const chitchat::lm::TokenId> history,
                                                  std::string_view) const override {
    std::size_t since_bos = 0;
    for (std::size_t i = history.size(); i > 0; --i) {
      if (history[i - 1] == vocab_.bos()) break;
      ++since_bos;
    }
    std::vector<double> p(vocab_.size(), 0.0);
    p[script_[std::min(since_bos, script_.size() - 1)]] = 1.0;
    return {p};
  }

 private:
  chitchat::lm::Vocabulary vocab_;
  std::vector<chitchat::lm::TokenId> script_;
};

/// History-independent distribution over a few symbols plus EOS.
class FixedScorer final : public chitchat::lm::Scorer {
 public:
  FixedScorer(const std::vector<std::string>& symbols, const std::vector<double>& probs,
              double eos_prob) {
    probs_.assign(6 + symbols.size(), 0.0);
    for (std::size_t i = 0; i < symbols.size(); ++i) probs_[vocab_.add(symbols[i])] = probs[i];
    probs_[vocab_.eos()] = eos_prob;
  }
  const chitchat::lm::Vocabulary& vocabulary() const override { return vocab_; }
  chitchat::lm::TokenDistribution next_token_dist(std::span<const chitchat::lm::TokenId>,
                                                  std::string_view) const override {
    return {probs_};
  }

 private:
  chitchat::lm::Vocabulary vocab_;
  std::vector<double> probs_;
};

inline std::vector<chitchat::format::QueryRecord> fav_records(
    const std::vector<chitchat::format::FineTuneDialogue>& dialogues,
    chitchat::format::Condition condition) {
  std::vector<chitchat::format::QueryRecord> out;
  const chitchat::format::FormatterConfig config;
  for (const auto& d : dialogues) {
    auto r = chitchat::format::format_dialogue(d, condition, config);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

/// Small flat order-3 model trained on toy favorite-things dialogues.
inline std::shared_ptr<const chitchat::lm::NGramModel> toy_model() {
  static const auto model = [] {
    chitchat::synth::ToyFavOptions options;
    options.train_dialogues = 400;
    options.test_dialogues = 0;
    const auto fav = chitchat::synth::toy_fav(options, 99);
    return std::make_shared<const chitchat::lm::NGramModel>(chitchat::lm::train_ngram(
        fav_records(fav.train, chitchat::format::Condition::kFlat), {3, 0.01, false}));
  }();
  return model;
}

inline std::string random_string(std::mt19937_64& rng, std::u32string_view alphabet,
                                 std::size_t max_len) {
  std::u32string s;
  const std::size_t n = rng() % (max_len + 1);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
  std::string out;
  for (char32_t c : s) {
    if (c < 0x80) {
      out += static_cast<char>(c);
    } else if (c < 0x800) {
      out += static_cast<char>(0xC0 | (c >> 6));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else if (c < 0x10000) {
      out += static_cast<char>(0xE0 | (c >> 12));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (c >> 18));
      out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    }
  }
  return out;
}

}  // namespace fixture
