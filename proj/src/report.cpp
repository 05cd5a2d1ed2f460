#include "chitchat/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

#include "chitchat/error.hpp"
#include "chitchat/jsonl.hpp"
#include "chitchat/session.hpp"

namespace chitchat::report {

using nlohmann::json;

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string arrow(int direction) {
  return direction > 0 ? "↑" : (direction < 0 ? "↓" : "");
}

std::string rendered_cell(const stats::SignificanceCell& cell) {
  std::string text = fixed2(cell.mean) + arrow(cell.direction);
  if (cell.direction != 0 && cell.reject_strict) return "**" + text + "**";
  return text;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

std::string mark(const stats::SignificanceCell& cell) {
  if (cell.direction == 0) return "";
  return cell.reject_strict ? "**" + arrow(cell.direction) + "**" : arrow(cell.direction);
}

std::string significance_text(const stats::SignificanceTable& table) {
  std::ostringstream out;
  out << "| Metric |";
  for (const auto& d : table.datasets) out << ' ' << d.dataset << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < table.datasets.size(); ++i) out << "---|";
  out << '\n';
  for (std::size_t m = 0; m < stats::kMetricCount; ++m) {
    out << "| " << stats::kMetricNames[m] << " |";
    for (const auto& d : table.datasets) out << ' ' << rendered_cell(d.cells[m]) << " |";
    out << '\n';
  }
  out << "| Average |";
  for (const auto& d : table.datasets) out << ' ' << fixed2(d.dataset_mean) << " |";
  out << '\n';
  return out.str();
}

std::string significance_csv(const stats::SignificanceTable& table) {
  std::ostringstream out;
  out << "dataset,metric,mean,delta,p_value,adjusted_p,mark_q_strict,mark_q_loose\n";
  for (const auto& d : table.datasets) {
    for (std::size_t m = 0; m < stats::kMetricCount; ++m) {
      const auto& c = d.cells[m];
      out << csv_field(d.dataset) << ',' << stats::kMetricNames[m] << ','
          << fixed2(c.mean) << ',' << c.delta << ','
          << (c.p_value ? std::to_string(*c.p_value) : "") << ','
          << (c.adjusted_p ? std::to_string(*c.adjusted_p) : "") << ','
          << (c.reject_strict ? arrow(c.direction) : "") << ','
          << (c.reject_loose ? arrow(c.direction) : "") << '\n';
    }
  }
  return out.str();
}

json significance_json(const stats::SignificanceTable& table) {
  json datasets = json::array();
  for (const auto& d : table.datasets) {
    json cells = json::array();
    for (std::size_t m = 0; m < stats::kMetricCount; ++m) {
      const auto& c = d.cells[m];
      cells.push_back({{"metric", stats::kMetricNames[m]},
                       {"mean", c.mean},
                       {"delta", c.delta},
                       {"p_value", optional_number(c.p_value)},
                       {"adjusted_p", optional_number(c.adjusted_p)},
                       {"reject_strict", c.reject_strict},
                       {"reject_loose", c.reject_loose},
                       {"direction", c.direction}});
    }
    json omnibus = nullptr;
    if (d.omnibus) {
      omnibus = {{"statistic", d.omnibus->statistic},
                 {"p_value", d.omnibus->p_value},
                 {"method", stats::to_string(d.omnibus->method)},
                 {"n_effective", d.omnibus->n_effective},
                 {"exact_p_value", optional_number(d.omnibus->exact_p_value)}};
    }
    datasets.push_back({{"dataset", d.dataset},
                        {"dataset_mean", d.dataset_mean},
                        {"raters", d.raters},
                        {"omnibus", omnibus},
                        {"omnibus_significant", d.omnibus_significant},
                        {"cells", cells}});
  }
  return {{"normalization", stats::to_string(table.options.normalization)},
          {"omnibus_alpha", table.options.omnibus_alpha},
          {"q_strict", table.options.q_strict},
          {"q_loose", table.options.q_loose},
          {"datasets", datasets}};
}

std::string ppl_cell(const std::optional<double>& flat,
                     const std::optional<double>& tagged) {
  return (flat ? fixed2(*flat) : "-") + "/" + (tagged ? fixed2(*tagged) : "-");
}

namespace {

struct Grid {
  std::vector<std::pair<std::string, std::string>> rows;
  std::vector<std::string> columns;
  std::map<std::tuple<std::string, std::string, std::string>, const PplEntry*> cells;
};

Grid build_grid(const std::vector<PplEntry>& entries) {
  Grid g;
  for (const auto& e : entries) {
    const std::pair row{e.corpus, e.size};
    if (std::find(g.rows.begin(), g.rows.end(), row) == g.rows.end()) g.rows.push_back(row);
    if (std::find(g.columns.begin(), g.columns.end(), e.test_set) == g.columns.end()) {
      g.columns.push_back(e.test_set);
    }
    g.cells[{e.corpus, e.size, e.test_set}] = &e;
  }
  return g;
}

std::string grid_cell(const Grid& g, const std::pair<std::string, std::string>& row,
                      const std::string& column) {
  const auto it = g.cells.find({row.first, row.second, column});
  if (it == g.cells.end()) return "";
  return ppl_cell(it->second->flat, it->second->tagged);
}

}  // namespace

std::string ppl_grid_text(const std::vector<PplEntry>& entries) {
  const Grid g = build_grid(entries);
  std::ostringstream out;
  out << "| Fine-tune | Size |";
  for (const auto& c : g.columns) out << ' ' << c << " |";
  out << "\n|---|---|";
  for (std::size_t i = 0; i < g.columns.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& row : g.rows) {
    out << "| " << row.first << " | " << row.second << " |";
    for (const auto& c : g.columns) out << ' ' << grid_cell(g, row, c) << " |";
    out << '\n';
  }
  return out.str();
}

std::string ppl_grid_csv(const std::vector<PplEntry>& entries) {
  const Grid g = build_grid(entries);
  std::ostringstream out;
  out << "corpus,size";
  for (const auto& c : g.columns) out << ',' << csv_field(c);
  out << '\n';
  for (const auto& row : g.rows) {
    out << csv_field(row.first) << ',' << csv_field(row.second);
    for (const auto& c : g.columns) out << ',' << grid_cell(g, row, c);
    out << '\n';
  }
  return out.str();
}

json ppl_grid_json(const std::vector<PplEntry>& entries) {
  json out = json::array();
  for (const auto& e : entries) {
    out.push_back({{"corpus", e.corpus},
                   {"size", e.size},
                   {"test_set", e.test_set},
                   {"flat", optional_number(e.flat)},
                   {"tagged", optional_number(e.tagged)},
                   {"cell", ppl_cell(e.flat, e.tagged)}});
  }
  return out;
}

std::vector<PplEntry> read_ppl_entries(const std::string& path) {
  auto in = jsonl::open_in(path);
  std::vector<PplEntry> out;
  jsonl::for_each_line(in, [&](std::size_t n, const std::string& line) {
    try {
      const json j = json::parse(line);
      PplEntry e;
      e.corpus = j.at("corpus").get<std::string>();
      e.size = j.at("size").get<std::string>();
      e.test_set = j.at("test_set").get<std::string>();
      if (j.contains("flat") && !j["flat"].is_null()) e.flat = j["flat"].get<double>();
      if (j.contains("tagged") && !j["tagged"].is_null()) e.tagged = j["tagged"].get<double>();
      out.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, path + ":" + std::to_string(n) + ": " + e.what());
    }
  });
  return out;
}

std::optional<double> parse_model_size(std::string_view model_id) {
  const auto cut = model_id.find_last_of("-_");
  std::string_view tail = cut == std::string_view::npos ? model_id : model_id.substr(cut + 1);
  if (tail.size() < 2) return std::nullopt;
  double scale = 0;
  switch (tail.back()) {
    case 'B': case 'b': scale = 1e9; break;
    case 'M': case 'm': scale = 1e6; break;
    case 'K': case 'k': scale = 1e3; break;
    default: return std::nullopt;
  }
  const std::string number(tail.substr(0, tail.size() - 1));
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(number, &used);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (used != number.size() || !(v > 0)) return std::nullopt;
  return v * scale;
}

std::vector<ScoredSession> scored_sessions(std::string_view export_jsonl) {
  std::istringstream in{std::string(export_jsonl)};
  std::vector<ScoredSession> out;
  jsonl::for_each_line(in, [&](std::size_t n, const std::string& line) {
    session::Session s;
    try {
      s = session::session_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, "export line " + std::to_string(n) + ": " + e.what());
    }
    if (!s.evaluation) return;
    ScoredSession r;
    r.session_id = s.id;
    r.model_id = s.spec.model_id;
    const bool mixed = s.spec.condition == format::Condition::kMixedFlat ||
                       s.spec.condition == format::Condition::kMixedTagged;
    r.dataset = mixed ? "Mix" : std::string(format::to_string(s.spec.dataset_kind));
    r.model_size = parse_model_size(s.spec.model_id);
    r.rater_id = s.evaluation->rater_id;
    for (std::size_t m = 0; m < stats::kMetricCount; ++m) {
      const auto it = s.evaluation->scores.find(std::string(session::kMetricKeys[m]));
      if (it != s.evaluation->scores.end()) r.scores[m] = it->second;
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<stats::ScoreMatrix> score_matrices(const std::vector<ScoredSession>& sessions) {
  std::vector<stats::ScoreMatrix> out;
  for (const auto& s : sessions) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const auto& m) { return m.dataset == s.dataset; });
    if (it == out.end()) {
      out.push_back({s.dataset, {}, {}});
      it = std::prev(out.end());
    }
    it->rows.push_back(s.scores);
    it->rater_ids.push_back(s.rater_id);
  }
  return out;
}

std::vector<SizeSeries> size_series(const std::vector<ScoredSession>& sessions) {
  std::vector<std::string> order;
  std::map<std::string, std::map<double, std::pair<double, std::size_t>>> acc;
  for (const auto& s : sessions) {
    if (!s.model_size) continue;
    double sum = 0;
    std::size_t count = 0;
    for (const auto& v : s.scores) {
      if (v) {
        sum += *v;
        ++count;
      }
    }
    if (count == 0) continue;
    if (!acc.contains(s.dataset)) order.push_back(s.dataset);
    auto& cell = acc[s.dataset][*s.model_size];
    cell.first += sum / static_cast<double>(count);
    cell.second += 1;
  }
  std::vector<SizeSeries> out;
  for (const auto& dataset : order) {
    SizeSeries series;
    series.dataset = dataset;
    for (const auto& [size, cell] : acc[dataset]) {
      series.sizes.push_back(size);
      series.mean_scores.push_back(cell.first / static_cast<double>(cell.second));
    }
    series.correlation.n = series.sizes.size();
    if (series.sizes.size() >= 3) {
      series.correlation = stats::size_correlation(series.sizes, series.mean_scores);
    }
    out.push_back(std::move(series));
  }
  return out;
}

std::string size_series_text(const std::vector<SizeSeries>& series) {
  std::ostringstream out;
  out << "| Dataset | Sizes | rho | p | method |\n|---|---|---|---|---|\n";
  for (const auto& s : series) {
    out << "| " << s.dataset << " | " << s.sizes.size() << " | ";
    if (s.correlation.rho) {
      out << fixed2(*s.correlation.rho) << " | " << *s.correlation.p_value << " | "
          << stats::to_string(s.correlation.method);
    } else {
      out << "undefined | - | -";
    }
    out << " |\n";
  }
  return out.str();
}

json size_series_json(const std::vector<SizeSeries>& series) {
  json out = json::array();
  for (const auto& s : series) {
    out.push_back({{"dataset", s.dataset},
                   {"sizes", s.sizes},
                   {"mean_scores", s.mean_scores},
                   {"n", s.correlation.n},
                   {"rho", optional_number(s.correlation.rho)},
                   {"p_value", optional_number(s.correlation.p_value)},
                   {"method", s.correlation.rho ? json(stats::to_string(s.correlation.method))
                                                : json(nullptr)}});
  }
  return out;
}

}  // namespace chitchat::report
