#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "chitchat/formatter.hpp"

namespace chitchat::lm {

using TokenId = std::uint32_t;

inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";

/// Character-level tokenization; "[SEP]", "[SPK1]" and "[SPK2]" are single
/// symbols. detokenize(tokenize(t)) == t for every t.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  Vocabulary();

  TokenId add(std::string_view symbol);
  std::optional<TokenId> find(std::string_view symbol) const;
  /// Unknown symbols map to unk().
  TokenId id(std::string_view symbol) const;
  const std::string& symbol(TokenId id) const { return symbols_.at(id); }
  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  TokenId sep() const { return 0; }
  TokenId spk1() const { return 1; }
  TokenId spk2() const { return 2; }
  TokenId bos() const { return 3; }
  TokenId eos() const { return 4; }
  TokenId unk() const { return 5; }
  bool is_reserved(TokenId id) const { return id < 6; }

  std::vector<TokenId> encode(std::string_view text) const;
  /// Inverse of encode; BOS/EOS are dropped.
  std::string decode(std::span<const TokenId> ids) const;

  static Vocabulary from_symbols(const std::vector<std::string>& symbols);

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Architecture metadata used to key report rows; not consulted by scoring.
struct ModelConfig {
  std::string label;
  std::int64_t total_parameters = 0;
  std::int64_t vocab_size = 0;
  int encoder_layers = 0;
  int decoder_layers = 0;
  int embedding_dim = 0;
  int attention_heads = 0;
  std::int64_t training_steps = 0;

  void validate() const;
};

/// The four reference pre-trained configurations, smallest first.
std::vector<ModelConfig> reference_model_configs();

struct TokenDistribution {
  std::vector<double> probabilities;

  /// Sums to 1 within `tolerance` and has no negative entries.
  bool is_valid(double tolerance = 1e-9) const;
};

/// Scoring seam. The decoder and the session service depend only on this
/// contract, so any model that can produce next-token distributions plugs in.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual const Vocabulary& vocabulary() const = 0;

  /// `condition` is the conditioning key of the query (see encode_query).
  virtual TokenDistribution next_token_dist(std::span<const TokenId> history,
                                            std::string_view condition) const = 0;

  virtual double probability(std::span<const TokenId> history, TokenId next,
                             std::string_view condition) const {
    return next_token_dist(history, condition).probabilities.at(next);
  }

  /// Whether the model keys distributions on the query's info block.
  virtual bool uses_condition() const { return false; }
};

struct EncodedQuery {
  std::vector<TokenId> history;  // query tokens followed by BOS
  std::string condition;         // empty unless the scorer uses conditions
};

EncodedQuery encode_query(const Scorer& scorer, std::string_view query_text);

/// exp of the mean negative log-likelihood of response+EOS given the query.
/// Throws Error(kZeroProbability) if any token has zero probability.
double sequence_perplexity(const Scorer& scorer, std::string_view query_text,
                           std::span<const TokenId> response);

/// Token-weighted perplexity over records (target given query).
double corpus_perplexity(const Scorer& scorer,
                         const std::vector<format::QueryRecord>& records);

struct NGramOptions {
  int order = 3;
  double k = 0.01;
  /// Also learn info-block-specific tables for target positions.
  bool conditioning = false;
};

/// Interpolated add-k character n-gram model:
///   P_0(w) = 1/V
///   P_j(w|h_j) = (c(h_j, w) + kV P_{j-1}(w|h_{j-1})) / (c(h_j) + kV)
/// where h_j is the last j-1 tokens; unseen contexts pass the lower order
/// through unchanged. With conditioning, a second chain of the same form is
/// stacked on top, using the unconditioned full-order distribution as P_0 and
/// counts restricted to the query's info block.
class NGramModel final : public Scorer {
 public:
  struct ContextCounts {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint64_t> next;
  };
  using Table = std::unordered_map<std::string, ContextCounts>;

  NGramModel(Vocabulary vocab, NGramOptions options);

  const Vocabulary& vocabulary() const override { return vocab_; }
  TokenDistribution next_token_dist(std::span<const TokenId> history,
                                    std::string_view condition) const override;
  double probability(std::span<const TokenId> history, TokenId next,
                     std::string_view condition) const override;
  bool uses_condition() const override { return options_.conditioning; }

  int order() const { return options_.order; }
  double k() const { return options_.k; }
  const NGramOptions& options() const { return options_; }

  /// Counts one (history, next) event at every order the history supports.
  void observe(std::span<const TokenId> history, TokenId next,
               std::string_view condition);

  const Table& table() const { return global_; }
  const ContextCounts* lookup(std::span<const TokenId> context) const;

  nlohmann::json to_json() const;
  static NGramModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static NGramModel load(const std::string& path);

 private:
  void apply_chain(const Table& table, std::span<const TokenId> history,
                   std::vector<double>& p) const;
  double chain_probability(const Table& table, std::span<const TokenId> history,
                           TokenId next, double prior) const;

  Vocabulary vocab_;
  NGramOptions options_;
  Table global_;
  std::unordered_map<std::string, Table> conditioned_;
};

/// Sequences are query + BOS + target + EOS. Throws Error(kEmptyCorpus) on an
/// empty corpus and kInvalidArgument on order < 1 or k <= 0.
NGramModel train_ngram(const std::vector<format::QueryRecord>& corpus,
                       const NGramOptions& options);

}  // namespace chitchat::lm
