#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chitchat::stats {

inline constexpr std::size_t kMetricCount = 13;
using MetricRow = std::array<std::optional<int>, kMetricCount>;
using MetricValues = std::array<double, kMetricCount>;

/// Display names in questionnaire order (parallel to session::kMetricKeys).
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {
    "Humanness", "Ease",        "Enjoyability", "Empathetic", "Attentiveness",
    "Trust",     "Personality", "Agency",       "Topic",      "Emotion",
    "Consistency", "Involvement", "Respeak"};

/// Raters x 13 metrics for one dataset; missing entries allowed.
struct ScoreMatrix {
  std::string dataset;
  std::vector<MetricRow> rows;
  std::vector<std::string> rater_ids;  // optional, parallel to rows

  void validate() const;
};

enum class Normalization {
  kRowCentering,     // score - rater's own mean
  kColumnCentering,  // score - metric's reference mean
  kTwoWay,           // both, grand mean added back
};

Normalization parse_normalization(std::string_view s);
std::string_view to_string(Normalization n);

struct NormalizedScores {
  std::vector<std::vector<double>> deltas;  // complete rows only
  std::vector<std::size_t> excluded_rows;   // indices with missing metrics
};

/// `reference_means` are per-metric averages across datasets; when empty the
/// matrix's own column means are used.
NormalizedScores normalize_scores(const ScoreMatrix& matrix,
                                  Normalization mode = Normalization::kRowCentering,
                                  std::span<const double> reference_means = {});

/// Per-metric means over complete rows.
MetricValues metric_means(const ScoreMatrix& matrix);

/// Average across datasets of each metric's per-dataset mean.
MetricValues reference_means(const std::vector<MetricValues>& dataset_means);

/// Normalized deltas computed directly on a dataset x metric table of means.
std::vector<MetricValues> center_means(const std::vector<MetricValues>& means,
                                       Normalization mode);

enum class Method {
  kFriedman,
  kFriedmanExact,
  kWilcoxonExact,
  kWilcoxonNormal,
  kSpearmanExact,
  kSpearmanT,
};
std::string_view to_string(Method m);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Method method = Method::kFriedman;
  std::size_t n_effective = 0;
  std::optional<double> exact_p_value;
};

/// Rows x columns (blocks x treatments). Midranks within rows, tie-corrected
/// chi-square with k-1 degrees of freedom. For n <= 6 and k <= 4 the exact
/// permutation p is also reported.
TestResult friedman_test(const std::vector<std::vector<double>>& matrix);
inline constexpr std::size_t kFriedmanExactMaxRows = 6;
inline constexpr std::size_t kFriedmanExactMaxCols = 4;
/// Exact permutation p (probability of a rank-sum spread at least as large).
double friedman_exact_p(const std::vector<std::vector<double>>& matrix);

/// One-sample signed-rank test against zero; zeros dropped, midranks,
/// W = min(W+, W-), two-sided. Exact for n <= 15 after zero removal.
/// Throws Error(kDegenerate) when every value is zero.
TestResult wilcoxon_signed_rank(std::span<const double> deltas);
inline constexpr std::size_t kWilcoxonExactMaxN = 15;

struct BhResult {
  std::vector<bool> rejected;
  std::vector<double> adjusted;
};

/// Benjamini-Hochberg step-up at level q.
BhResult bh_correct(std::span<const double> p_values, double q);

struct SignificanceOptions {
  Normalization normalization = Normalization::kRowCentering;
  double omnibus_alpha = 0.05;
  double q_strict = 0.05;  // bold
  double q_loose = 0.10;   // plain
};

struct SignificanceCell {
  double mean = 0.0;
  double delta = 0.0;
  std::optional<double> p_value;
  std::optional<double> adjusted_p;
  bool reject_strict = false;
  bool reject_loose = false;
  int direction = 0;  // +1 up, -1 down, 0 unmarked
};

struct DatasetSignificance {
  std::string dataset;
  double dataset_mean = 0.0;
  std::optional<TestResult> omnibus;
  bool omnibus_significant = false;
  std::array<SignificanceCell, kMetricCount> cells{};
  std::size_t raters = 0;
};

struct SignificanceTable {
  std::vector<DatasetSignificance> datasets;
  SignificanceOptions options;
};

/// Marks one dataset from precomputed deltas and p-values: when the omnibus p
/// is below alpha, BH is applied across the metrics at both q levels and each
/// rejected metric carries the sign of its delta.
DatasetSignificance mark_dataset(std::string dataset, const MetricValues& means,
                                 double dataset_mean, const MetricValues& deltas,
                                 std::optional<TestResult> omnibus,
                                 const std::optional<MetricValues>& raw_p,
                                 const SignificanceOptions& options);

/// Full procedure over raw score matrices.
SignificanceTable significance_table(const std::vector<ScoreMatrix>& matrices,
                                     const SignificanceOptions& options = {});

struct CorrelationResult {
  std::optional<double> rho;  // empty when undefined (constant input)
  std::optional<double> p_value;
  Method method = Method::kSpearmanExact;
  std::size_t n = 0;
};

/// Spearman rank correlation with midranks; exact permutation p for n <= 8,
/// Student-t approximation above. Needs at least 3 points.
CorrelationResult size_correlation(std::span<const double> sizes,
                                   std::span<const double> scores);
inline constexpr std::size_t kSpearmanExactMaxN = 8;

/// Midranks (1-based) of values; values within 1e-9 (relative) count as tied.
std::vector<double> midranks(std::span<const double> values);

}  // namespace chitchat::stats
