#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chitchat/analytics.hpp"

namespace chitchat::report {

// Significance tables: metrics down, datasets across. A marked cell reads
// "8.12↑"; marks that survive the strict level are wrapped as "**8.12↑**".
std::string significance_text(const stats::SignificanceTable& table);
std::string significance_csv(const stats::SignificanceTable& table);
nlohmann::json significance_json(const stats::SignificanceTable& table);

/// The rendered mark of one cell ("", "↑", "↓", "**↑**", "**↓**").
std::string mark(const stats::SignificanceCell& cell);

struct PplEntry {
  std::string corpus;    // fine-tuning corpus label, e.g. "PC50k"
  std::string size;      // model label, e.g. "1.6B"
  std::string test_set;  // evaluation set label
  std::optional<double> flat;
  std::optional<double> tagged;
};

/// "21.32/18.35"; a missing side renders as "-".
std::string ppl_cell(const std::optional<double>& flat,
                     const std::optional<double>& tagged);

/// Rows are (corpus, size) and columns test sets, both in first-seen order.
/// Empty input gives the header alone.
std::string ppl_grid_text(const std::vector<PplEntry>& entries);
std::string ppl_grid_csv(const std::vector<PplEntry>& entries);
nlohmann::json ppl_grid_json(const std::vector<PplEntry>& entries);

std::vector<PplEntry> read_ppl_entries(const std::string& path);

/// One evaluated session reduced to what the analysis needs.
struct ScoredSession {
  std::string session_id;
  std::string model_id;
  std::string dataset;  // dataset kind, or "Mix" for mixed conditions
  std::optional<double> model_size;
  std::string rater_id;
  stats::MetricRow scores{};
};

/// Parses a session export; sessions without an evaluation are skipped.
std::vector<ScoredSession> scored_sessions(std::string_view export_jsonl);

/// Groups by dataset label, in first-seen order.
std::vector<stats::ScoreMatrix> score_matrices(const std::vector<ScoredSession>& sessions);

/// "m-0.35B" -> 0.35e9, "x_350M" -> 3.5e8; nullopt without a size suffix.
std::optional<double> parse_model_size(std::string_view model_id);

struct SizeSeries {
  std::string dataset;
  std::vector<double> sizes;
  std::vector<double> mean_scores;  // mean over raters and metrics
  stats::CorrelationResult correlation;
};

/// Per dataset, Spearman correlation of model size against mean score.
/// Datasets with fewer than 3 sizes are reported without a correlation.
std::vector<SizeSeries> size_series(const std::vector<ScoredSession>& sessions);
std::string size_series_text(const std::vector<SizeSeries>& series);
nlohmann::json size_series_json(const std::vector<SizeSeries>& series);

}  // namespace chitchat::report
