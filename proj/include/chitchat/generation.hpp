#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chitchat/lm.hpp"

namespace chitchat::gen {

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 0.9;
  std::size_t num_candidates = 20;
  std::size_t max_tokens = 64;
  std::uint64_t seed = 0;
  /// Worker threads for candidate draws; results do not depend on it.
  unsigned threads = 1;

  void validate() const;
};

struct FilterConfig {
  double sigma_r = 0.5;
  std::u32string sentence_delimiters = U"。．！？!?.";

  void validate() const;
};

struct CandidateResponse {
  std::string text;
  std::vector<lm::TokenId> tokens;
  double perplexity = 0.0;
  double repetition_score = 0.0;
  bool filtered = false;
};

struct GenerationResult {
  std::size_t selected = 0;  // index into candidates
  bool fallback = false;
  std::vector<CandidateResponse> candidates;

  const CandidateResponse& response() const { return candidates.at(selected); }
};

/// p_i' proportional to p_i^(1/T), computed in log space. T must be > 0.
lm::TokenDistribution apply_temperature(const lm::TokenDistribution& dist,
                                        double temperature);

/// Keeps the smallest probability-sorted prefix (ties by index) whose mass
/// reaches top_p, zeroes the rest, renormalizes.
lm::TokenDistribution nucleus_filter(const lm::TokenDistribution& dist,
                                     double top_p);

/// Slack applied when comparing cumulative mass against top_p, so that sums
/// such as 0.6 + 0.3 count as reaching 0.9.
inline constexpr double kNucleusSlack = 1e-12;

/// Inverse-CDF draw over indices in vocabulary order; u in [0, 1).
lm::TokenId draw_token(const lm::TokenDistribution& dist, double u);

/// Autoregressive draw until EOS or max_tokens, from the stream seeded by
/// `seed`. The returned tokens exclude EOS.
std::vector<lm::TokenId> sample_response(const lm::Scorer& model,
                                         std::string_view query,
                                         const SamplingParams& params,
                                         std::uint64_t seed);

/// Ratcliff-Obershelp ratio 2M / (|a| + |b|) over code points, with
/// leftmost-longest block choice at every level. Both empty gives 1.
double gestalt_similarity(std::u32string_view a, std::u32string_view b);
double gestalt_similarity(std::string_view a, std::string_view b);

/// Splits after each delimiter; pieces are whitespace-trimmed, empties dropped.
std::vector<std::string> split_sentences(std::string_view text,
                                         const FilterConfig& config);

/// Max similarity against every context utterance and every sentence of it.
double repetition_score(std::string_view candidate,
                        const std::vector<std::string>& context,
                        const FilterConfig& config);

/// Sample-and-rank: N independent draws (draw i seeded from (seed, i)),
/// repetition filtering, then lowest perplexity among the survivors. When
/// every candidate is filtered the least repetitive one is returned and
/// `fallback` is set.
GenerationResult generate(const lm::Scorer& model, std::string_view query,
                          const SamplingParams& params,
                          const FilterConfig& filter,
                          const std::vector<std::string>& context);

/// Selection rule over already-scored candidates.
void select_candidate(GenerationResult& result);

nlohmann::json to_json(const GenerationResult& result);
void to_json(nlohmann::json& j, const SamplingParams& p);
void from_json(const nlohmann::json& j, SamplingParams& p);
void to_json(nlohmann::json& j, const FilterConfig& f);
void from_json(const nlohmann::json& j, FilterConfig& f);

}  // namespace chitchat::gen
