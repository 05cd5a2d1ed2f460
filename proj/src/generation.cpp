#include "chitchat/generation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>

#include "chitchat/error.hpp"
#include "chitchat/random.hpp"
#include "chitchat/unicode.hpp"

namespace chitchat::gen {

using lm::TokenDistribution;
using lm::TokenId;
using nlohmann::json;

void SamplingParams::validate() const {
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be > 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "top_p must lie in (0, 1]");
  }
  if (num_candidates < 1 || max_tokens < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "num_candidates and max_tokens must be >= 1");
  }
}

void FilterConfig::validate() const {
  if (!(sigma_r >= 0.0 && sigma_r <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "sigma_r must lie in [0, 1]");
  }
}

TokenDistribution apply_temperature(const TokenDistribution& dist,
                                    double temperature) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be > 0");
  }
  const auto& p = dist.probabilities;
  std::vector<double> logits(p.size(), -std::numeric_limits<double>::infinity());
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      logits[i] = std::log(p[i]) / temperature;
      max_logit = std::max(max_logit, logits[i]);
    }
  }
  TokenDistribution out;
  out.probabilities.assign(p.size(), 0.0);
  if (!std::isfinite(max_logit)) return out;
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (std::isfinite(logits[i])) {
      out.probabilities[i] = std::exp(logits[i] - max_logit);
      sum += out.probabilities[i];
    }
  }
  for (double& x : out.probabilities) x /= sum;
  return out;
}

TokenDistribution nucleus_filter(const TokenDistribution& dist, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "top_p must lie in (0, 1]");
  }
  const auto& p = dist.probabilities;
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  TokenDistribution out;
  out.probabilities.assign(p.size(), 0.0);
  double cumulative = 0.0;
  for (std::size_t idx : order) {
    if (p[idx] <= 0.0) break;
    out.probabilities[idx] = p[idx];
    cumulative += p[idx];
    if (cumulative >= top_p - kNucleusSlack) break;
  }
  if (cumulative > 0.0) {
    for (double& x : out.probabilities) x /= cumulative;
  }
  return out;
}

TokenId draw_token(const TokenDistribution& dist, double u) {
  const auto& p = dist.probabilities;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    last_positive = i;
    cumulative += p[i];
    if (u < cumulative) return static_cast<TokenId>(i);
  }
  // Rounding left u above the final cumulative sum.
  return static_cast<TokenId>(last_positive);
}

std::vector<TokenId> sample_response(const lm::Scorer& model,
                                     std::string_view query,
                                     const SamplingParams& params,
                                     std::uint64_t seed) {
  params.validate();
  auto q = lm::encode_query(model, query);
  const TokenId eos = model.vocabulary().eos();
  Rng rng(seed);
  std::vector<TokenId> out;
  while (out.size() < params.max_tokens) {
    auto dist = model.next_token_dist(q.history, q.condition);
    dist = nucleus_filter(apply_temperature(dist, params.temperature), params.top_p);
    const TokenId next = draw_token(dist, rng.uniform());
    if (next == eos) break;
    out.push_back(next);
    q.history.push_back(next);
  }
  return out;
}

namespace {

struct Block {
  std::size_t a;
  std::size_t b;
  std::size_t size;
};

// Longest common block of a[alo, ahi) and b[blo, bhi); among equal lengths the
// smallest start in a, then in b.
Block longest_match(std::u32string_view a, std::size_t alo, std::size_t ahi,
                    std::u32string_view b, std::size_t blo, std::size_t bhi,
                    std::vector<std::size_t>& prev, std::vector<std::size_t>& cur) {
  Block best{alo, blo, 0};
  const std::size_t width = bhi - blo;
  prev.assign(width + 1, 0);
  cur.assign(width + 1, 0);
  for (std::size_t i = alo; i < ahi; ++i) {
    for (std::size_t j = blo; j < bhi; ++j) {
      const std::size_t col = j - blo + 1;
      if (a[i] == b[j]) {
        const std::size_t k = prev[col - 1] + 1;
        cur[col] = k;
        if (k > best.size) best = {i + 1 - k, j + 1 - k, k};
      } else {
        cur[col] = 0;
      }
    }
    std::swap(prev, cur);
  }
  return best;
}

}  // namespace

double gestalt_similarity(std::u32string_view a, std::u32string_view b) {
  const std::size_t total = a.size() + b.size();
  if (total == 0) return 1.0;
  std::vector<std::size_t> prev;
  std::vector<std::size_t> cur;
  std::size_t matched = 0;
  struct Range {
    std::size_t alo, ahi, blo, bhi;
  };
  std::vector<Range> stack{{0, a.size(), 0, b.size()}};
  while (!stack.empty()) {
    const Range r = stack.back();
    stack.pop_back();
    if (r.alo >= r.ahi || r.blo >= r.bhi) continue;
    const Block m = longest_match(a, r.alo, r.ahi, b, r.blo, r.bhi, prev, cur);
    if (m.size == 0) continue;
    matched += m.size;
    stack.push_back({r.alo, m.a, r.blo, m.b});
    stack.push_back({m.a + m.size, r.ahi, m.b + m.size, r.bhi});
  }
  return 2.0 * static_cast<double>(matched) / static_cast<double>(total);
}

double gestalt_similarity(std::string_view a, std::string_view b) {
  return gestalt_similarity(unicode::decode(a), unicode::decode(b));
}

std::vector<std::string> split_sentences(std::string_view text,
                                         const FilterConfig& config) {
  std::vector<std::string> out;
  std::u32string current;
  auto flush = [&] {
    std::size_t first = 0;
    while (first < current.size() && unicode::is_whitespace(current[first])) ++first;
    std::size_t last = current.size();
    while (last > first && unicode::is_whitespace(current[last - 1])) --last;
    if (last > first) {
      out.push_back(unicode::encode(
          std::u32string_view(current).substr(first, last - first)));
    }
    current.clear();
  };
  for (char32_t cp : unicode::decode(text)) {
    current.push_back(cp);
    if (config.sentence_delimiters.find(cp) != std::u32string::npos) flush();
  }
  flush();
  return out;
}

double repetition_score(std::string_view candidate,
                        const std::vector<std::string>& context,
                        const FilterConfig& config) {
  const auto cand = unicode::decode(candidate);
  double best = 0.0;
  for (const auto& utterance : context) {
    best = std::max(best, gestalt_similarity(cand, unicode::decode(utterance)));
    for (const auto& sentence : split_sentences(utterance, config)) {
      best = std::max(best, gestalt_similarity(cand, unicode::decode(sentence)));
    }
  }
  return best;
}

void select_candidate(GenerationResult& result) {
  const auto& c = result.candidates;
  if (c.empty()) throw Error(ErrorCode::kInvalidArgument, "no candidates");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i].filtered) continue;
    if (!best || c[i].perplexity < c[*best].perplexity) best = i;
  }
  if (best) {
    result.selected = *best;
    result.fallback = false;
    return;
  }
  std::size_t least = 0;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (c[i].repetition_score < c[least].repetition_score) least = i;
  }
  result.selected = least;
  result.fallback = true;
}

GenerationResult generate(const lm::Scorer& model, std::string_view query,
                          const SamplingParams& params, const FilterConfig& filter,
                          const std::vector<std::string>& context) {
  params.validate();
  filter.validate();
  GenerationResult result;
  result.candidates.resize(params.num_candidates);
  auto draw = [&](std::size_t i) {
    auto& cand = result.candidates[i];
    cand.tokens = sample_response(model, query, params, mix_seed(params.seed, i));
    cand.text = model.vocabulary().decode(cand.tokens);
    cand.perplexity = lm::sequence_perplexity(model, query, cand.tokens);
    cand.repetition_score = repetition_score(cand.text, context, filter);
    cand.filtered = cand.repetition_score > filter.sigma_r;
  };
  const unsigned workers = std::max(
      1u, std::min<unsigned>(params.threads,
                             static_cast<unsigned>(params.num_candidates)));
  if (workers == 1) {
    for (std::size_t i = 0; i < params.num_candidates; ++i) draw(i);
  } else {
    std::vector<std::future<void>> jobs;
    for (unsigned w = 0; w < workers; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < params.num_candidates; i += workers) draw(i);
      }));
    }
    for (auto& j : jobs) j.get();
  }
  select_candidate(result);
  return result;
}

json to_json(const GenerationResult& result) {
  json cands = json::array();
  for (const auto& c : result.candidates) {
    cands.push_back({{"text", c.text},
                     {"ppl", c.perplexity},
                     {"repetition_score", c.repetition_score},
                     {"filtered", c.filtered}});
  }
  return json{{"selected", result.response().text},
              {"selected_index", result.selected},
              {"fallback", result.fallback},
              {"candidates", std::move(cands)}};
}

void to_json(json& j, const SamplingParams& p) {
  j = json{{"temperature", p.temperature},
           {"top_p", p.top_p},
           {"num_candidates", p.num_candidates},
           {"max_tokens", p.max_tokens},
           {"seed", p.seed}};
}

void from_json(const json& j, SamplingParams& p) {
  p.temperature = j.value("temperature", p.temperature);
  p.top_p = j.value("top_p", p.top_p);
  p.num_candidates = j.value("num_candidates", p.num_candidates);
  p.max_tokens = j.value("max_tokens", p.max_tokens);
  p.seed = j.value("seed", p.seed);
  p.threads = j.value("threads", p.threads);
}

void to_json(json& j, const FilterConfig& f) {
  j = json{{"sigma_r", f.sigma_r},
           {"sentence_delimiters", unicode::encode(f.sentence_delimiters)}};
}

void from_json(const json& j, FilterConfig& f) {
  f.sigma_r = j.value("sigma_r", f.sigma_r);
  if (j.contains("sentence_delimiters")) {
    f.sentence_delimiters =
        unicode::decode(j["sentence_delimiters"].get<std::string>());
  }
}

}  // namespace chitchat::gen
