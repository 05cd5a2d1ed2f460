// chitchat: command-line entry point for the corpus -> format -> train ->
// generate -> serve -> analyze workflow. Exit codes: 0 ok, 1 user error,
// 2 internal error.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "chitchat/analytics.hpp"
#include "chitchat/corpus.hpp"
#include "chitchat/error.hpp"
#include "chitchat/formatter.hpp"
#include "chitchat/generation.hpp"
#include "chitchat/http_api.hpp"
#include "chitchat/jsonl.hpp"
#include "chitchat/lm.hpp"
#include "chitchat/pipeline.hpp"
#include "chitchat/report.hpp"
#include "chitchat/session.hpp"
#include "chitchat/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace chitchat;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string config;
  std::string out_dir;
};

json read_json_file(const std::string& path) {
  auto in = jsonl::open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
}

// Writes to `path`, or stdout when empty or "-".
void emit(const std::string& path, const std::string& data) {
  if (path.empty() || path == "-") {
    std::cout << data;
    return;
  }
  auto out = jsonl::open_out(path);
  out << data;
}

std::string resolve_out(const Globals& g, const std::string& path) {
  if (path.empty() || path == "-" || g.out_dir.empty() || fs::path(path).is_absolute()) return path;
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / path).string();
}

std::string to_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
  return out;
}

template <typename T>
std::string to_jsonl_of(const std::vector<T>& items) {
  std::vector<json> rows;
  for (const auto& i : items) rows.push_back(i);
  return to_jsonl(rows);
}

// Query records, or reply pairs rendered as flat queries.
std::vector<format::QueryRecord> read_training_records(const std::string& path) {
  auto in = jsonl::open_in(path);
  std::vector<format::QueryRecord> out;
  jsonl::for_each_line(in, [&](std::size_t n, const std::string& line) {
    try {
      const json j = json::parse(line);
      if (j.contains("query")) {
        out.push_back(j.get<format::QueryRecord>());
        return;
      }
      const auto pair = j.get<corpus::DialoguePair>();
      format::QueryRecord r;
      for (std::size_t i = 0; i < pair.context.size(); ++i) {
        if (i > 0) r.query_text += format::kSep;
        r.query_text += pair.context[i];
      }
      r.target_text = pair.target;
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, path + ":" + std::to_string(n) + ": " + e.what());
    }
  });
  return out;
}

http::ApiServer* g_server = nullptr;
void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chitchat - chit-chat corpus, generation and evaluation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--config", g.config, "Config file (per-subcommand meaning)");
  app.add_option("--out-dir", g.out_dir, "Directory for relative output paths");

  std::function<void()> action;

  // corpus ------------------------------------------------------------------
  auto* corpus_cmd = app.add_subcommand("corpus", "Tweet cleaning, reply chains and pairs");
  corpus_cmd->require_subcommand(1);
  std::string c_in, c_out, c_rej;
  auto add_io = [&](CLI::App* sub) {
    sub->add_option("--in", c_in, "Input JSON Lines")->required();
    sub->add_option("--out", c_out, "Output path (default stdout)");
  };
  auto cleaning_config = [&]() {
    return g.config.empty() ? corpus::CleaningConfig{}
                            : read_json_file(g.config).get<corpus::CleaningConfig>();
  };

  auto* clean_cmd = corpus_cmd->add_subcommand("clean", "Apply cleaning rules to raw tweets");
  add_io(clean_cmd);
  clean_cmd->add_option("--rejections", c_rej, "Rejection log path");
  clean_cmd->callback([&] {
    action = [&] {
      const auto config = cleaning_config();
      config.validate();
      const auto raw = corpus::read_raw_tweets_file(c_in);
      const auto result = corpus::clean_tweets(raw.tweets, config);
      emit(resolve_out(g, c_out), to_jsonl_of(result.tweets));
      std::vector<corpus::Rejection> rejections(raw.malformed);
      rejections.insert(rejections.end(), result.rejections.begin(), result.rejections.end());
      if (!c_rej.empty()) emit(resolve_out(g, c_rej), to_jsonl_of(rejections));
      std::cerr << "kept " << result.tweets.size() << ", rejected " << rejections.size() << "\n";
    };
  });

  auto* chains_cmd = corpus_cmd->add_subcommand("chains", "Build reply chains from cleaned tweets");
  add_io(chains_cmd);
  chains_cmd->callback([&] {
    action = [&] {
      const auto result = corpus::build_chains(corpus::read_clean_tweets_file(c_in));
      std::vector<json> rows;
      for (const auto& chain : corpus::maximal_chains(result.chains)) {
        json ids = json::array(), texts = json::array();
        for (const auto& t : chain.tweets) {
          ids.push_back(t.id);
          texts.push_back(t.text);
        }
        rows.push_back({{"chain_id", chain.id}, {"tweet_ids", ids}, {"texts", texts}});
      }
      emit(resolve_out(g, c_out), to_jsonl(rows));
      if (!result.dropped.empty()) std::cerr << result.dropped.size() << " tweets dropped in reply cycles\n";
    };
  });

  auto* pairs_cmd = corpus_cmd->add_subcommand("pairs", "Extract context/target pairs");
  add_io(pairs_cmd);
  pairs_cmd->callback([&] {
    action = [&] {
      const auto result = corpus::build_chains(corpus::read_clean_tweets_file(c_in));
      emit(resolve_out(g, c_out), to_jsonl_of(corpus::pairs_from_chains(result.chains)));
    };
  });

  auto* stats_cmd = corpus_cmd->add_subcommand("stats", "Summary statistics of a pair file");
  add_io(stats_cmd);
  stats_cmd->callback([&] {
    action = [&] {
      emit(resolve_out(g, c_out), json(corpus::corpus_stats(corpus::read_pairs_file(c_in))).dump(2) + "\n");
    };
  });

  // format ------------------------------------------------------------------
  auto* format_cmd = app.add_subcommand("format", "Render fine-tuning dialogues as encoder queries");
  std::vector<std::string> f_in;
  std::string f_out, f_condition = "flat", f_mix = "equal";
  std::size_t f_max_utt = 4, f_max_chars = 128;
  std::optional<std::size_t> f_total;
  format_cmd->add_option("--in", f_in, "Dialogue JSON Lines (one per dataset)")->required();
  format_cmd->add_option("--out", f_out, "Output path (default stdout)");
  format_cmd->add_option("--condition", f_condition)
      ->check(CLI::IsMember({"flat", "tagged", "mixed-flat", "mixed-tagged"}));
  format_cmd->add_option("--mix", f_mix)->check(CLI::IsMember({"equal", "full"}));
  format_cmd->add_option("--total", f_total, "Equal-mix total (default: largest dataset)");
  format_cmd->add_option("--max-utterances", f_max_utt);
  format_cmd->add_option("--max-chars", f_max_chars);
  format_cmd->callback([&] {
    action = [&] {
      format::FormatterConfig config;
      config.max_context_utterances = f_max_utt;
      config.max_context_chars = f_max_chars;
      config.validate();
      const auto condition = format::parse_condition(f_condition);
      std::vector<std::vector<format::QueryRecord>> sets;
      for (const auto& path : f_in) {
        std::vector<format::QueryRecord> set;
        for (const auto& d : jsonl::read_file<format::FineTuneDialogue>(path)) {
          d.validate();
          auto r = format::format_dialogue(d, condition, config);
          set.insert(set.end(), r.begin(), r.end());
        }
        sets.push_back(std::move(set));
      }
      const auto records = sets.size() == 1
                               ? sets.front()
                               : format::mix_datasets(sets, format::parse_mix_mode(f_mix), g.seed, f_total);
      emit(resolve_out(g, f_out), to_jsonl_of(records));
    };
  });

  // train -------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a character n-gram model");
  std::string t_in, t_out;
  lm::NGramOptions t_opts;
  train_cmd->add_option("--in", t_in, "Query records or reply pairs (JSON Lines)")->required();
  train_cmd->add_option("--out", t_out, "Model file")->required();
  train_cmd->add_option("--order", t_opts.order)->check(CLI::PositiveNumber);
  train_cmd->add_option("--k", t_opts.k)->check(CLI::PositiveNumber);
  train_cmd->add_flag("--conditioning", t_opts.conditioning, "Learn info-block tables");
  train_cmd->callback([&] {
    action = [&] {
      lm::train_ngram(read_training_records(t_in), t_opts).save(resolve_out(g, t_out));
    };
  });

  // generate ----------------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("generate", "Sample-and-rank response generation");
  std::string g_model, g_query;
  gen::SamplingParams g_params;
  gen::FilterConfig g_filter;
  std::vector<std::string> g_context;
  gen_cmd->add_option("--model", g_model)->required();
  gen_cmd->add_option("--query", g_query, "Encoder query text")->required();
  gen_cmd->add_option("--n", g_params.num_candidates)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--top-p", g_params.top_p);
  gen_cmd->add_option("--temperature", g_params.temperature);
  gen_cmd->add_option("--max-tokens", g_params.max_tokens);
  gen_cmd->add_option("--threads", g_params.threads);
  gen_cmd->add_option("--sigma-r", g_filter.sigma_r);
  gen_cmd->add_option("--context", g_context, "Context utterances for the repetition filter");
  gen_cmd->callback([&] {
    action = [&] {
      g_params.seed = g.seed;
      const auto model = lm::NGramModel::load(g_model);
      std::vector<std::string> context = g_context;
      if (context.empty()) {
        for (const auto& u : format::parse_tagged_query(g_query, {}).utterances) context.push_back(u.text);
      }
      const auto result = gen::generate(model, g_query, g_params, g_filter, context);
      std::cout << gen::to_json(result).dump(2) << "\n";
    };
  });

  // serve -------------------------------------------------------------------
  auto* serve_cmd = app.add_subcommand("serve", "Run the evaluation session HTTP service");
  std::string s_models, s_host = "127.0.0.1", s_logs;
  int s_port = 8080;
  serve_cmd->add_option("--models-dir", s_models)->required();
  serve_cmd->add_option("--host", s_host);
  serve_cmd->add_option("--port", s_port);
  serve_cmd->add_option("--log-dir", s_logs, "Append-only session logs (replayed on start)");
  serve_cmd->callback([&] {
    action = [&] {
      auto registry = std::make_shared<session::ModelRegistry>();
      registry->load_directory(s_models);
      std::optional<fs::path> log_dir;
      if (!s_logs.empty()) log_dir = fs::path(s_logs);
      auto store = std::make_shared<session::SessionStore>(registry, log_dir,
                                                           session::system_clock_now, g.seed);
      http::ApiServer server(store);
      const int port = server.bind(s_host, s_port);
      std::cerr << "serving " << registry->ids().size() << " model(s) on http://" << s_host << ":"
                << port << "\n";
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      server.serve();
      g_server = nullptr;
    };
  });

  // analyze -----------------------------------------------------------------
  auto* analyze_cmd = app.add_subcommand("analyze", "Significance tables, perplexity grids, size correlation");
  analyze_cmd->require_subcommand(1);
  std::string a_in, a_out, a_format = "text", a_norm = "row";
  double a_q = 0.05, a_q_loose = 0.10, a_alpha = 0.05;
  auto add_analysis_io = [&](CLI::App* sub) {
    sub->add_option("--in", a_in)->required();
    sub->add_option("--out", a_out, "Output path (default stdout)");
    sub->add_option("--format", a_format)->check(CLI::IsMember({"text", "csv", "json"}));
  };
  auto* sig_cmd = analyze_cmd->add_subcommand("significance", "Friedman + Wilcoxon + BH table");
  add_analysis_io(sig_cmd);
  sig_cmd->add_option("--q", a_q, "Strict FDR level (bold)");
  sig_cmd->add_option("--q-loose", a_q_loose, "Loose FDR level");
  sig_cmd->add_option("--alpha", a_alpha, "Omnibus level");
  sig_cmd->add_option("--normalization", a_norm)->check(CLI::IsMember({"row", "column", "two-way"}));
  sig_cmd->callback([&] {
    action = [&] {
      std::ifstream in(a_in, std::ios::binary);
      if (!in) throw Error(ErrorCode::kIo, "cannot open " + a_in);
      std::stringstream ss;
      ss << in.rdbuf();
      const auto sessions = report::scored_sessions(ss.str());
      stats::SignificanceOptions options;
      options.normalization = stats::parse_normalization(a_norm);
      options.q_strict = a_q;
      options.q_loose = a_q_loose;
      options.omnibus_alpha = a_alpha;
      const auto table = stats::significance_table(report::score_matrices(sessions), options);
      const std::string out = a_format == "csv"    ? report::significance_csv(table)
                              : a_format == "json" ? report::significance_json(table).dump(2) + "\n"
                                                   : report::significance_text(table);
      emit(resolve_out(g, a_out), out);
    };
  });
  auto* grid_cmd = analyze_cmd->add_subcommand("ppl-grid", "Flat/tagged perplexity grid");
  add_analysis_io(grid_cmd);
  grid_cmd->callback([&] {
    action = [&] {
      const auto entries = report::read_ppl_entries(a_in);
      const std::string out = a_format == "csv"    ? report::ppl_grid_csv(entries)
                              : a_format == "json" ? report::ppl_grid_json(entries).dump(2) + "\n"
                                                   : report::ppl_grid_text(entries);
      emit(resolve_out(g, a_out), out);
    };
  });
  auto* corr_cmd = analyze_cmd->add_subcommand("size-corr", "Model size vs mean score (Spearman)");
  add_analysis_io(corr_cmd);
  corr_cmd->callback([&] {
    action = [&] {
      std::ifstream in(a_in, std::ios::binary);
      if (!in) throw Error(ErrorCode::kIo, "cannot open " + a_in);
      std::stringstream ss;
      ss << in.rdbuf();
      const auto series = report::size_series(report::scored_sessions(ss.str()));
      emit(resolve_out(g, a_out), a_format == "json" ? report::size_series_json(series).dump(2) + "\n"
                                                     : report::size_series_text(series));
    };
  });

  // pipeline ----------------------------------------------------------------
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run the staged pipeline from --config");
  std::optional<unsigned> p_threads;
  pipe_cmd->add_option("--threads", p_threads, "Worker threads (outputs do not depend on it)");
  pipe_cmd->callback([&] {
    action = [&] {
      if (g.config.empty()) throw Error(ErrorCode::kInvalidArgument, "pipeline needs --config");
      pipeline::RunOptions options;
      if (!g.out_dir.empty()) options.out_dir = fs::path(g.out_dir);
      if (g.seed_set) options.seed = g.seed;
      options.threads = p_threads;
      options.on_stage = [](const pipeline::StageOutcome& o) {
        std::cout << o.stage << ": " << (o.ran ? "ran" : "skipped (manifest match)") << "\n";
      };
      pipeline::run_pipeline_file(g.config, options);
    };
  });

  // synth -------------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "Write seeded toy data");
  synth_cmd->require_subcommand(1);
  std::string y_out;
  std::size_t y_total = 10000;
  auto* y_tweets = synth_cmd->add_subcommand("tweets", "Raw tweets with planted violations");
  y_tweets->add_option("--out", y_out)->required();
  y_tweets->add_option("--total", y_total);
  y_tweets->callback([&] {
    action = [&] {
      synth::TweetCorpusOptions options;
      // Plants scale with the corpus (defaults are sized for 10,000 tweets).
      if (y_total < options.total) {
        options.per_rule = options.per_rule * y_total / options.total;
        options.decoys = options.decoys * y_total / options.total;
      }
      options.total = y_total;
      const auto c = synth::tweet_corpus(options, g.seed);
      emit(resolve_out(g, y_out), to_jsonl_of(c.tweets));
    };
  });
  auto* y_fav = synth_cmd->add_subcommand("fav", "Favorite-things style dialogues");
  y_fav->add_option("--out", y_out)->required();
  y_fav->callback([&] {
    action = [&] {
      synth::ToyFavOptions options;
      options.test_dialogues = 0;
      emit(resolve_out(g, y_out), to_jsonl_of(synth::toy_fav(options, g.seed).train));
    };
  });
  auto* y_project = synth_cmd->add_subcommand("project", "Toy inputs plus a pipeline config");
  y_project->add_option("--out", y_out, "Project directory")->required();
  y_project->callback([&] {
    action = [&] {
      std::cout << pipeline::write_toy_project(resolve_out(g, y_out), g.seed).string() << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return e.code() == ErrorCode::kZeroProbability ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
