#include "chitchat/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "chitchat/error.hpp"

namespace chitchat::stats {

void ScoreMatrix::validate() const {
  for (const auto& row : rows) {
    for (const auto& v : row) {
      if (v && (*v < 0 || *v > 10)) {
        throw Error(ErrorCode::kValidation,
                    "score out of range in dataset " + dataset);
      }
    }
  }
  if (!rater_ids.empty() && rater_ids.size() != rows.size()) {
    throw Error(ErrorCode::kValidation, "rater_ids must parallel rows");
  }
}

Normalization parse_normalization(std::string_view s) {
  if (s == "row") return Normalization::kRowCentering;
  if (s == "column") return Normalization::kColumnCentering;
  if (s == "two-way") return Normalization::kTwoWay;
  throw Error(ErrorCode::kInvalidArgument, "unknown normalization: " + std::string(s));
}

std::string_view to_string(Normalization n) {
  switch (n) {
    case Normalization::kRowCentering: return "row";
    case Normalization::kColumnCentering: return "column";
    case Normalization::kTwoWay: return "two-way";
  }
  return "?";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kFriedman: return "friedman";
    case Method::kFriedmanExact: return "friedman-exact";
    case Method::kWilcoxonExact: return "wilcoxon-exact";
    case Method::kWilcoxonNormal: return "wilcoxon-normal";
    case Method::kSpearmanExact: return "spearman-exact";
    case Method::kSpearmanT: return "spearman-t";
  }
  return "?";
}

namespace {

bool complete(const MetricRow& row) {
  return std::all_of(row.begin(), row.end(), [](const auto& v) { return v.has_value(); });
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

MetricValues metric_means(const ScoreMatrix& matrix) {
  MetricValues sums{};
  std::size_t n = 0;
  for (const auto& row : matrix.rows) {
    if (!complete(row)) continue;
    ++n;
    for (std::size_t m = 0; m < kMetricCount; ++m) sums[m] += *row[m];
  }
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "no complete rows in " + matrix.dataset);
  for (double& s : sums) s /= static_cast<double>(n);
  return sums;
}

MetricValues reference_means(const std::vector<MetricValues>& dataset_means) {
  if (dataset_means.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no datasets");
  }
  MetricValues ref{};
  for (const auto& d : dataset_means) {
    for (std::size_t m = 0; m < kMetricCount; ++m) ref[m] += d[m];
  }
  for (double& r : ref) r /= static_cast<double>(dataset_means.size());
  return ref;
}

NormalizedScores normalize_scores(const ScoreMatrix& matrix, Normalization mode,
                                  std::span<const double> reference) {
  matrix.validate();
  NormalizedScores out;
  MetricValues ref{};
  if (mode != Normalization::kRowCentering) {
    if (reference.empty()) {
      ref = metric_means(matrix);
    } else if (reference.size() == kMetricCount) {
      std::copy(reference.begin(), reference.end(), ref.begin());
    } else {
      throw Error(ErrorCode::kInvalidArgument, "reference means need 13 entries");
    }
  }
  const double ref_grand = mean_of(ref);
  for (std::size_t r = 0; r < matrix.rows.size(); ++r) {
    const auto& row = matrix.rows[r];
    if (!complete(row)) {
      out.excluded_rows.push_back(r);
      continue;
    }
    std::vector<double> values(kMetricCount);
    for (std::size_t m = 0; m < kMetricCount; ++m) values[m] = *row[m];
    const double row_mean = mean_of(values);
    std::vector<double> delta(kMetricCount);
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      switch (mode) {
        case Normalization::kRowCentering:
          delta[m] = values[m] - row_mean;
          break;
        case Normalization::kColumnCentering:
          delta[m] = values[m] - ref[m];
          break;
        case Normalization::kTwoWay:
          delta[m] = values[m] - row_mean - (ref[m] - ref_grand);
          break;
      }
    }
    out.deltas.push_back(std::move(delta));
  }
  if (out.deltas.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no complete rows in " + matrix.dataset);
  }
  return out;
}

std::vector<MetricValues> center_means(const std::vector<MetricValues>& means,
                                       Normalization mode) {
  const MetricValues ref = reference_means(means);
  const double grand = mean_of(ref);
  std::vector<MetricValues> out(means.size());
  for (std::size_t d = 0; d < means.size(); ++d) {
    const double row_mean = mean_of(means[d]);
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      switch (mode) {
        case Normalization::kRowCentering:
          out[d][m] = means[d][m] - row_mean;
          break;
        case Normalization::kColumnCentering:
          out[d][m] = means[d][m] - ref[m];
          break;
        case Normalization::kTwoWay:
          out[d][m] = means[d][m] - row_mean - ref[m] + grand;
          break;
      }
    }
  }
  return out;
}

namespace {

// Normalized deltas carry rounding from the centering step, so values that
// are equal in exact arithmetic can differ in the last bits.
constexpr double kTieTolerance = 1e-9;

bool tied(double a, double b) {
  return std::abs(a - b) <= kTieTolerance * std::max({1.0, std::abs(a), std::abs(b)});
}

// Sum of t^3 - t over groups of tied values.
double tie_term(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  std::size_t i = 0;
  while (i < values.size()) {
    std::size_t j = i;
    while (j + 1 < values.size() && tied(values[j + 1], values[i])) ++j;
    const double t = static_cast<double>(j - i + 1);
    sum += t * t * t - t;
    i = j + 1;
  }
  return sum;
}

}  // namespace

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && tied(values[order[j + 1]], values[order[i]])) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

void check_shape(const std::vector<std::vector<double>>& matrix) {
  if (matrix.size() < 2 || matrix.front().size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "Friedman needs n >= 2 and k >= 2");
  }
  for (const auto& row : matrix) {
    if (row.size() != matrix.front().size()) {
      throw Error(ErrorCode::kInvalidArgument, "ragged matrix");
    }
  }
}

// Within-row midranks doubled so ties stay integral.
std::vector<std::vector<long>> doubled_row_ranks(
    const std::vector<std::vector<double>>& matrix) {
  std::vector<std::vector<long>> out;
  for (const auto& row : matrix) {
    const auto r = midranks(row);
    std::vector<long> d(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) d[i] = std::lround(2.0 * r[i]);
    out.push_back(std::move(d));
  }
  return out;
}

long sum_of_squares(const std::vector<long>& v) {
  long s = 0;
  for (long x : v) s += x * x;
  return s;
}

}  // namespace

double friedman_exact_p(const std::vector<std::vector<double>>& matrix) {
  check_shape(matrix);
  const auto ranks = doubled_row_ranks(matrix);
  const std::size_t k = matrix.front().size();
  std::vector<long> observed(k, 0);
  for (const auto& row : ranks) {
    for (std::size_t j = 0; j < k; ++j) observed[j] += row[j];
  }
  // The tie correction is fixed by each row's rank multiset, so the statistic
  // orders configurations exactly as the sum of squared rank sums does.
  std::map<std::vector<long>, double> dist{{std::vector<long>(k, 0), 1.0}};
  for (const auto& row : ranks) {
    std::vector<long> perm(row);
    std::sort(perm.begin(), perm.end());
    std::vector<std::vector<long>> perms;
    do {
      perms.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double weight = 1.0 / static_cast<double>(perms.size());
    std::map<std::vector<long>, double> next;
    for (const auto& [sums, prob] : dist) {
      for (const auto& p : perms) {
        std::vector<long> s(sums);
        for (std::size_t j = 0; j < k; ++j) s[j] += p[j];
        next[std::move(s)] += prob * weight;
      }
    }
    dist = std::move(next);
  }
  const long threshold = sum_of_squares(observed);
  double p = 0.0;
  for (const auto& [sums, prob] : dist) {
    if (sum_of_squares(sums) >= threshold) p += prob;
  }
  return std::min(1.0, p);
}

TestResult friedman_test(const std::vector<std::vector<double>>& matrix) {
  check_shape(matrix);
  const double n = static_cast<double>(matrix.size());
  const std::size_t kk = matrix.front().size();
  const double k = static_cast<double>(kk);
  std::vector<double> rank_sums(kk, 0.0);
  double tie_sum = 0.0;
  for (const auto& row : matrix) {
    const auto r = midranks(row);
    for (std::size_t j = 0; j < kk; ++j) rank_sums[j] += r[j];
    tie_sum += tie_term(row);
  }
  TestResult result;
  result.method = Method::kFriedman;
  result.n_effective = matrix.size();
  const double correction = 1.0 - tie_sum / (n * (k * k * k - k));
  if (correction <= 1e-12) {
    result.statistic = 0.0;
    result.p_value = 1.0;
    return result;
  }
  double ss = 0.0;
  for (double r : rank_sums) ss += r * r;
  double q = (12.0 / (n * k * (k + 1.0)) * ss - 3.0 * n * (k + 1.0)) / correction;
  q = std::max(0.0, q);
  result.statistic = q;
  if (q == 0.0) {
    result.p_value = 1.0;
  } else {
    const boost::math::chi_squared dist(k - 1.0);
    result.p_value = std::clamp(boost::math::cdf(boost::math::complement(dist, q)), 0.0, 1.0);
  }
  if (matrix.size() <= kFriedmanExactMaxRows && kk <= kFriedmanExactMaxCols) {
    result.exact_p_value = friedman_exact_p(matrix);
  }
  return result;
}

TestResult wilcoxon_signed_rank(std::span<const double> deltas) {
  std::vector<double> nonzero;
  for (double d : deltas) {
    if (!tied(d, 0.0)) nonzero.push_back(d);
  }
  if (nonzero.empty()) {
    throw Error(ErrorCode::kDegenerate, "all deltas are zero");
  }
  const std::size_t n = nonzero.size();
  std::vector<double> magnitudes(n);
  for (std::size_t i = 0; i < n; ++i) magnitudes[i] = std::abs(nonzero[i]);
  const auto ranks = midranks(magnitudes);

  double w_plus = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += ranks[i];
    if (nonzero[i] > 0) w_plus += ranks[i];
  }
  const double w_minus = total - w_plus;
  TestResult result;
  result.statistic = std::min(w_plus, w_minus);
  result.n_effective = n;

  if (n <= kWilcoxonExactMaxN) {
    // Null distribution of doubled W+ by subset-sum counting.
    std::vector<long> doubled(n);
    long doubled_total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      doubled[i] = std::lround(2.0 * ranks[i]);
      doubled_total += doubled[i];
    }
    std::vector<double> counts(static_cast<std::size_t>(doubled_total) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long r : doubled) {
      for (long s = reach; s >= 0; --s) {
        if (counts[static_cast<std::size_t>(s)] != 0.0) {
          counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
        }
      }
      reach += r;
    }
    const long w_obs = std::lround(2.0 * result.statistic);
    double extreme = 0.0;
    for (long s = 0; s <= doubled_total; ++s) {
      if (std::min(s, doubled_total - s) <= w_obs) {
        extreme += counts[static_cast<std::size_t>(s)];
      }
    }
    result.p_value = std::min(1.0, extreme / std::ldexp(1.0, static_cast<int>(n)));
    result.method = Method::kWilcoxonExact;
    return result;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double variance =
      nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term(magnitudes) / 48.0;
  const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(variance);
  result.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  result.method = Method::kWilcoxonNormal;
  return result;
}

BhResult bh_correct(std::span<const double> p_values, double q) {
  const std::size_t m = p_values.size();
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "p-values must lie in [0, 1]");
    }
  }
  BhResult result{std::vector<bool>(m, false), std::vector<double>(m, 1.0)};
  if (m == 0) return result;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  const double mm = static_cast<double>(m);
  std::size_t cutoff = 0;  // number of rejections
  for (std::size_t i = m; i >= 1; --i) {
    if (p_values[order[i - 1]] <= static_cast<double>(i) * q / mm) {
      cutoff = i;
      break;
    }
  }
  for (std::size_t i = 0; i < cutoff; ++i) result.rejected[order[i]] = true;
  double running = 1.0;
  for (std::size_t i = m; i >= 1; --i) {
    running = std::min(running, mm * p_values[order[i - 1]] / static_cast<double>(i));
    result.adjusted[order[i - 1]] = std::min(1.0, running);
  }
  return result;
}

DatasetSignificance mark_dataset(std::string dataset, const MetricValues& means,
                                 double dataset_mean, const MetricValues& deltas,
                                 std::optional<TestResult> omnibus,
                                 const std::optional<MetricValues>& raw_p,
                                 const SignificanceOptions& options) {
  DatasetSignificance out;
  out.dataset = std::move(dataset);
  out.dataset_mean = dataset_mean;
  out.omnibus = omnibus;
  out.omnibus_significant = omnibus && omnibus->p_value < options.omnibus_alpha;
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    out.cells[m].mean = means[m];
    out.cells[m].delta = deltas[m];
  }
  if (!out.omnibus_significant || !raw_p) return out;
  const auto strict = bh_correct(*raw_p, options.q_strict);
  const auto loose = bh_correct(*raw_p, options.q_loose);
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    auto& cell = out.cells[m];
    cell.p_value = (*raw_p)[m];
    cell.adjusted_p = strict.adjusted[m];
    const int sign = deltas[m] > 0 ? 1 : (deltas[m] < 0 ? -1 : 0);
    cell.reject_strict = strict.rejected[m] && sign != 0;
    cell.reject_loose = loose.rejected[m] && sign != 0;
    if (cell.reject_strict || cell.reject_loose) cell.direction = sign;
  }
  return out;
}

SignificanceTable significance_table(const std::vector<ScoreMatrix>& matrices,
                                     const SignificanceOptions& options) {
  SignificanceTable table;
  table.options = options;
  std::vector<MetricValues> means;
  for (const auto& m : matrices) means.push_back(metric_means(m));
  const MetricValues ref = means.empty() ? MetricValues{} : reference_means(means);

  for (std::size_t d = 0; d < matrices.size(); ++d) {
    const auto normalized = normalize_scores(matrices[d], options.normalization, ref);
    const auto& deltas = normalized.deltas;
    MetricValues agg{};
    for (const auto& row : deltas) {
      for (std::size_t m = 0; m < kMetricCount; ++m) agg[m] += row[m];
    }
    for (double& a : agg) a /= static_cast<double>(deltas.size());
    const double dataset_mean = mean_of(means[d]);

    std::optional<TestResult> omnibus;
    std::optional<MetricValues> raw_p;
    if (deltas.size() >= 2) {
      omnibus = friedman_test(deltas);
      if (omnibus->p_value < options.omnibus_alpha) {
        MetricValues p{};
        for (std::size_t m = 0; m < kMetricCount; ++m) {
          std::vector<double> column;
          for (const auto& row : deltas) column.push_back(row[m]);
          try {
            p[m] = wilcoxon_signed_rank(column).p_value;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kDegenerate) throw;
            p[m] = 1.0;
          }
        }
        raw_p = p;
      }
    }
    auto marked = mark_dataset(matrices[d].dataset, means[d], dataset_mean, agg,
                               omnibus, raw_p, options);
    marked.raters = deltas.size();
    table.datasets.push_back(std::move(marked));
  }
  return table;
}

namespace {

double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

bool constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

CorrelationResult size_correlation(std::span<const double> sizes,
                                   std::span<const double> scores) {
  if (sizes.size() != scores.size()) {
    throw Error(ErrorCode::kInvalidArgument, "sizes and scores differ in length");
  }
  if (sizes.size() < 3) {
    throw Error(ErrorCode::kInvalidArgument, "correlation needs at least 3 points");
  }
  CorrelationResult result;
  result.n = sizes.size();
  if (constant(sizes) || constant(scores)) return result;
  const auto rx = midranks(sizes);
  auto ry = midranks(scores);
  const double rho = std::clamp(pearson(rx, ry), -1.0, 1.0);
  result.rho = rho;
  if (result.n <= kSpearmanExactMaxN) {
    std::sort(ry.begin(), ry.end());
    std::size_t extreme = 0;
    std::size_t total = 0;
    do {
      ++total;
      if (std::abs(pearson(rx, ry)) >= std::abs(rho) - 1e-12) ++extreme;
    } while (std::next_permutation(ry.begin(), ry.end()));
    // next_permutation skips duplicate orderings; with tied ranks every
    // distinct ordering carries the same multiplicity, so the ratio holds.
    result.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    result.method = Method::kSpearmanExact;
    return result;
  }
  const double df = static_cast<double>(result.n) - 2.0;
  result.method = Method::kSpearmanT;
  if (std::abs(rho) >= 1.0) {
    result.p_value = 0.0;
    return result;
  }
  const double t = rho * std::sqrt(df / (1.0 - rho * rho));
  const boost::math::students_t dist(df);
  result.p_value = std::min(
      1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  return result;
}

}  // namespace chitchat::stats
