#include "chitchat/lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "chitchat/error.hpp"
#include "chitchat/jsonl.hpp"
#include "chitchat/unicode.hpp"

namespace chitchat::lm {

using nlohmann::json;

namespace {

constexpr std::string_view kReservedInText[] = {format::kSep, format::kSpk1,
                                                format::kSpk2};
constexpr int kFormatVersion = 1;

std::string context_key(std::span<const TokenId> context) {
  std::string key(context.size() * sizeof(TokenId), '\0');
  if (!context.empty()) {
    std::memcpy(key.data(), context.data(), key.size());
  }
  return key;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (std::string_view reserved : kReservedInText) {
      if (text.substr(i).starts_with(reserved)) {
        tokens.emplace_back(reserved);
        i += reserved.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    // One code point; malformed bytes become single-byte tokens so the
    // round trip stays exact.
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((b0 & 0xE0) == 0xC0) len = 2;
    else if ((b0 & 0xF0) == 0xE0) len = 3;
    else if ((b0 & 0xF8) == 0xF0) len = 4;
    if (i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    tokens.emplace_back(text.substr(i, len));
    i += len;
  }
  return tokens;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

Vocabulary::Vocabulary() {
  for (std::string_view s : {format::kSep, format::kSpk1, format::kSpk2, kBos,
                             kEos, kUnk}) {
    add(s);
  }
}

TokenId Vocabulary::add(std::string_view symbol) {
  auto [it, inserted] =
      index_.emplace(std::string(symbol), static_cast<TokenId>(symbols_.size()));
  if (inserted) symbols_.emplace_back(symbol);
  return it->second;
}

std::optional<TokenId> Vocabulary::find(std::string_view symbol) const {
  if (auto it = index_.find(std::string(symbol)); it != index_.end()) {
    return it->second;
  }
  return std::nullopt;
}

TokenId Vocabulary::id(std::string_view symbol) const {
  return find(symbol).value_or(unk());
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == bos() || id == eos()) continue;
    out += symbol(id);
  }
  return out;
}

Vocabulary Vocabulary::from_symbols(const std::vector<std::string>& symbols) {
  Vocabulary v;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i < v.size()) {
      if (symbols[i] != v.symbol(static_cast<TokenId>(i))) {
        throw Error(ErrorCode::kParse, "reserved vocabulary entries out of order");
      }
      continue;
    }
    if (v.add(symbols[i]) != i) {
      throw Error(ErrorCode::kParse, "duplicate vocabulary symbol");
    }
  }
  return v;
}

void ModelConfig::validate() const {
  if (label.empty() || total_parameters <= 0 || vocab_size <= 0 ||
      encoder_layers <= 0 || decoder_layers <= 0 || embedding_dim <= 0 ||
      attention_heads <= 0 || training_steps <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "model config fields must be positive");
  }
}

std::vector<ModelConfig> reference_model_configs() {
  return {
      {"0.35B", 359'607'808, 32'000, 2, 22, 896, 32, 46'000},
      {"0.7B", 698'536'960, 32'000, 2, 22, 1280, 32, 48'000},
      {"1.1B", 1'065'683'200, 32'000, 2, 22, 1600, 32, 48'000},
      {"1.6B", 1'627'872'000, 32'000, 2, 24, 1920, 32, 48'000},
  };
}

bool TokenDistribution::is_valid(double tolerance) const {
  double sum = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tolerance;
}

EncodedQuery encode_query(const Scorer& scorer, std::string_view query_text) {
  EncodedQuery q;
  const auto& vocab = scorer.vocabulary();
  q.history = vocab.encode(query_text);
  q.history.push_back(vocab.bos());
  if (scorer.uses_condition()) q.condition = format::conditioning_prefix(query_text);
  return q;
}

double sequence_perplexity(const Scorer& scorer, std::string_view query_text,
                           std::span<const TokenId> response) {
  auto q = encode_query(scorer, query_text);
  double nll = 0.0;
  std::size_t m = 0;
  auto score = [&](TokenId next) {
    const double p = scorer.probability(q.history, next, q.condition);
    if (!(p > 0.0)) {
      throw Error(ErrorCode::kZeroProbability,
                  "token '" + scorer.vocabulary().symbol(next) +
                      "' has zero probability");
    }
    nll -= std::log(p);
    ++m;
    q.history.push_back(next);
  };
  for (TokenId t : response) score(t);
  score(scorer.vocabulary().eos());
  return std::exp(nll / static_cast<double>(m));
}

double corpus_perplexity(const Scorer& scorer,
                         const std::vector<format::QueryRecord>& records) {
  double nll = 0.0;
  double tokens = 0.0;
  for (const auto& r : records) {
    const auto response = scorer.vocabulary().encode(r.target_text);
    const double m = static_cast<double>(response.size() + 1);
    nll += m * std::log(sequence_perplexity(scorer, r.query_text, response));
    tokens += m;
  }
  if (tokens == 0.0) throw Error(ErrorCode::kEmptyCorpus, "no records to score");
  return std::exp(nll / tokens);
}

// --- NGramModel -------------------------------------------------------------

NGramModel::NGramModel(Vocabulary vocab, NGramOptions options)
    : vocab_(std::move(vocab)), options_(options) {
  if (options_.order < 1) {
    throw Error(ErrorCode::kInvalidArgument, "n-gram order must be >= 1");
  }
  if (!(options_.k > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "add-k constant must be > 0");
  }
}

void NGramModel::observe(std::span<const TokenId> history, TokenId next,
                         std::string_view condition) {
  const std::size_t max_ctx =
      std::min<std::size_t>(history.size(), static_cast<std::size_t>(options_.order - 1));
  Table* cond = nullptr;
  if (options_.conditioning && !condition.empty()) {
    cond = &conditioned_[std::string(condition)];
  }
  for (std::size_t len = 0; len <= max_ctx; ++len) {
    const std::string key = context_key(history.last(len));
    auto& g = global_[key];
    ++g.total;
    ++g.next[next];
    if (cond) {
      auto& c = (*cond)[key];
      ++c.total;
      ++c.next[next];
    }
  }
}

const NGramModel::ContextCounts* NGramModel::lookup(
    std::span<const TokenId> context) const {
  auto it = global_.find(context_key(context));
  return it == global_.end() ? nullptr : &it->second;
}

void NGramModel::apply_chain(const Table& table, std::span<const TokenId> history,
                             std::vector<double>& p) const {
  const double kv = options_.k * static_cast<double>(vocab_.size());
  const std::size_t max_ctx =
      std::min<std::size_t>(history.size(), static_cast<std::size_t>(options_.order - 1));
  for (std::size_t len = 0; len <= max_ctx; ++len) {
    auto it = table.find(context_key(history.last(len)));
    if (it == table.end()) continue;
    const auto& counts = it->second;
    const double denom = static_cast<double>(counts.total) + kv;
    const double scale = kv / denom;
    for (double& x : p) x *= scale;
    for (const auto& [tok, c] : counts.next) p[tok] += static_cast<double>(c) / denom;
  }
}

double NGramModel::chain_probability(const Table& table,
                                     std::span<const TokenId> history,
                                     TokenId next, double prior) const {
  const double kv = options_.k * static_cast<double>(vocab_.size());
  const std::size_t max_ctx =
      std::min<std::size_t>(history.size(), static_cast<std::size_t>(options_.order - 1));
  double p = prior;
  for (std::size_t len = 0; len <= max_ctx; ++len) {
    auto it = table.find(context_key(history.last(len)));
    if (it == table.end()) continue;
    const auto& counts = it->second;
    const auto hit = counts.next.find(next);
    const double c = hit == counts.next.end() ? 0.0 : static_cast<double>(hit->second);
    p = (c + kv * p) / (static_cast<double>(counts.total) + kv);
  }
  return p;
}

TokenDistribution NGramModel::next_token_dist(std::span<const TokenId> history,
                                              std::string_view condition) const {
  TokenDistribution dist;
  dist.probabilities.assign(vocab_.size(), 1.0 / static_cast<double>(vocab_.size()));
  apply_chain(global_, history, dist.probabilities);
  if (options_.conditioning && !condition.empty()) {
    if (auto it = conditioned_.find(std::string(condition)); it != conditioned_.end()) {
      apply_chain(it->second, history, dist.probabilities);
    }
  }
  return dist;
}

double NGramModel::probability(std::span<const TokenId> history, TokenId next,
                               std::string_view condition) const {
  if (next >= vocab_.size()) return 0.0;
  double p = chain_probability(global_, history, next,
                               1.0 / static_cast<double>(vocab_.size()));
  if (options_.conditioning && !condition.empty()) {
    if (auto it = conditioned_.find(std::string(condition)); it != conditioned_.end()) {
      p = chain_probability(it->second, history, next, p);
    }
  }
  return p;
}

namespace {

json table_to_json(const NGramModel::Table& table) {
  // Sorted by key bytes so the file is deterministic.
  std::map<std::string, const NGramModel::ContextCounts*> sorted;
  for (const auto& [key, counts] : table) sorted.emplace(key, &counts);
  json rows = json::array();
  for (const auto& [key, counts] : sorted) {
    std::vector<TokenId> ctx(key.size() / sizeof(TokenId));
    if (!ctx.empty()) std::memcpy(ctx.data(), key.data(), key.size());
    std::vector<std::pair<TokenId, std::uint64_t>> next(counts->next.begin(),
                                                        counts->next.end());
    std::sort(next.begin(), next.end());
    json n = json::array();
    for (const auto& [tok, c] : next) n.push_back({tok, c});
    rows.push_back({{"context", ctx}, {"total", counts->total}, {"next", n}});
  }
  return rows;
}

NGramModel::Table table_from_json(const json& rows, std::size_t vocab_size) {
  NGramModel::Table table;
  for (const auto& row : rows) {
    const auto ctx = row.at("context").get<std::vector<TokenId>>();
    NGramModel::ContextCounts counts;
    counts.total = row.at("total").get<std::uint64_t>();
    std::uint64_t sum = 0;
    for (const auto& pair : row.at("next")) {
      const auto tok = pair.at(0).get<TokenId>();
      const auto c = pair.at(1).get<std::uint64_t>();
      if (tok >= vocab_size) throw Error(ErrorCode::kParse, "token id out of range");
      counts.next[tok] = c;
      sum += c;
    }
    if (sum != counts.total) throw Error(ErrorCode::kParse, "inconsistent count row");
    table.emplace(context_key(ctx), std::move(counts));
  }
  return table;
}

}  // namespace

json NGramModel::to_json() const {
  json j{{"format", "chitchat-ngram"},
         {"version", kFormatVersion},
         {"order", options_.order},
         {"k", options_.k},
         {"conditioning", options_.conditioning},
         {"vocabulary", vocab_.symbols()},
         {"counts", table_to_json(global_)}};
  std::map<std::string, const Table*> conds;
  for (const auto& [c, t] : conditioned_) conds.emplace(c, &t);
  json cj = json::array();
  for (const auto& [c, t] : conds) {
    cj.push_back({{"condition", c}, {"counts", table_to_json(*t)}});
  }
  j["conditioned"] = std::move(cj);
  return j;
}

NGramModel NGramModel::from_json(const json& j) {
  try {
    if (j.at("format") != "chitchat-ngram" || j.at("version") != kFormatVersion) {
      throw Error(ErrorCode::kParse, "unsupported model file");
    }
    NGramOptions opts;
    opts.order = j.at("order").get<int>();
    opts.k = j.at("k").get<double>();
    opts.conditioning = j.value("conditioning", false);
    NGramModel model(
        Vocabulary::from_symbols(j.at("vocabulary").get<std::vector<std::string>>()),
        opts);
    model.global_ = table_from_json(j.at("counts"), model.vocab_.size());
    for (const auto& c : j.value("conditioned", json::array())) {
      model.conditioned_.emplace(c.at("condition").get<std::string>(),
                                 table_from_json(c.at("counts"), model.vocab_.size()));
    }
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("bad model file: ") + e.what());
  }
}

void NGramModel::save(const std::string& path) const {
  auto out = jsonl::open_out(path);
  out << to_json().dump() << '\n';
}

NGramModel NGramModel::load(const std::string& path) {
  auto in = jsonl::open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
  return from_json(j);
}

NGramModel train_ngram(const std::vector<format::QueryRecord>& corpus,
                       const NGramOptions& options) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "empty training corpus");
  Vocabulary vocab;
  std::vector<std::vector<std::string>> queries;
  std::vector<std::vector<std::string>> targets;
  queries.reserve(corpus.size());
  targets.reserve(corpus.size());
  for (const auto& r : corpus) {
    queries.push_back(tokenize(r.query_text));
    targets.push_back(tokenize(r.target_text));
    for (const auto& t : queries.back()) vocab.add(t);
    for (const auto& t : targets.back()) vocab.add(t);
  }
  NGramModel model(std::move(vocab), options);
  const auto& v = model.vocabulary();
  std::vector<TokenId> seq;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string condition =
        options.conditioning ? format::conditioning_prefix(corpus[i].query_text)
                             : std::string{};
    seq.clear();
    for (const auto& t : queries[i]) {
      const TokenId id = v.id(t);
      model.observe(seq, id, {});
      seq.push_back(id);
    }
    model.observe(seq, v.bos(), {});
    seq.push_back(v.bos());
    for (const auto& t : targets[i]) {
      const TokenId id = v.id(t);
      model.observe(seq, id, condition);
      seq.push_back(id);
    }
    model.observe(seq, v.eos(), condition);
  }
  return model;
}

}  // namespace chitchat::lm
