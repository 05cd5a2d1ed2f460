#include "chitchat/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "chitchat/analytics.hpp"
#include "chitchat/corpus.hpp"
#include "chitchat/error.hpp"
#include "chitchat/formatter.hpp"
#include "chitchat/generation.hpp"
#include "chitchat/jsonl.hpp"
#include "chitchat/lm.hpp"
#include "chitchat/random.hpp"
#include "chitchat/report.hpp"
#include "chitchat/session.hpp"
#include "chitchat/synthetic.hpp"

namespace chitchat::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

namespace {

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& path, std::string_view data) {
  auto out = jsonl::open_out(path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_bytes(path)); }

namespace {

struct Context {
  json config;
  fs::path base_dir;
  fs::path out_dir;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  fs::path input(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
  fs::path out(const std::string& name) const { return out_dir / name; }
};

struct StagePlan {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
};

json hashed(const std::vector<fs::path>& paths) {
  json arr = json::array();
  for (const auto& p : paths) {
    arr.push_back({{"path", p.lexically_normal().generic_string()}, {"sha256", sha256_file(p)}});
  }
  return arr;
}

bool manifest_matches(const fs::path& manifest_path, const json& identity,
                      const json& input_hashes) {
  if (!fs::exists(manifest_path)) return false;
  json m;
  try {
    m = json::parse(read_bytes(manifest_path));
  } catch (const json::exception&) {
    return false;
  }
  if (m.value("identity", json()) != identity || m.value("inputs", json()) != input_hashes) {
    return false;
  }
  for (const auto& o : m.value("outputs", json::array())) {
    const fs::path p = o.at("path").get<std::string>();
    if (!fs::exists(p) || sha256_file(p) != o.at("sha256").get<std::string>()) return false;
  }
  return true;
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string data;
  for (const auto& r : rows) data += r.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
  write_bytes(path, data);
}

template <typename T>
void write_records(const fs::path& path, const std::vector<T>& items) {
  jsonl::write_file(path.string(), items);
}

// --- stages -----------------------------------------------------------------

StagePlan plan_corpus(const Context& ctx, const json& section) {
  return {{ctx.input(section.at("input").get<std::string>())},
          {ctx.out("clean.jsonl"), ctx.out("rejections.jsonl"), ctx.out("pairs.jsonl"),
           ctx.out("corpus_stats.json")}};
}

void run_corpus(const Context& ctx, const json& section, const StagePlan& plan) {
  auto cleaning = section.value("cleaning", corpus::CleaningConfig{});
  cleaning.threads = ctx.threads;
  cleaning.validate();
  const auto raw = corpus::read_raw_tweets_file(plan.inputs[0].string());
  const auto cleaned = corpus::clean_tweets(raw.tweets, cleaning);
  const auto chains = corpus::build_chains(cleaned.tweets);
  const auto pairs = corpus::pairs_from_chains(chains.chains);

  std::vector<corpus::Rejection> rejections(raw.malformed);
  rejections.insert(rejections.end(), cleaned.rejections.begin(), cleaned.rejections.end());
  rejections.insert(rejections.end(), chains.dropped.begin(), chains.dropped.end());

  write_records(plan.outputs[0], cleaned.tweets);
  write_records(plan.outputs[1], rejections);
  write_records(plan.outputs[2], pairs);
  write_bytes(plan.outputs[3], json(corpus::corpus_stats(pairs)).dump(2) + "\n");
}

StagePlan plan_format(const Context& ctx, const json& section) {
  StagePlan plan;
  if (section.contains("dialogues")) {
    for (const auto& p : section["dialogues"]) plan.inputs.push_back(ctx.input(p.get<std::string>()));
  } else {
    plan.inputs.push_back(ctx.out("pairs.jsonl"));
  }
  plan.outputs = {ctx.out("train.jsonl"), ctx.out("test.jsonl")};
  return plan;
}

format::FormatterConfig formatter_config(const json& section) {
  format::FormatterConfig config;
  config.max_context_utterances =
      section.value("max_context_utterances", config.max_context_utterances);
  config.max_context_chars = section.value("max_context_chars", config.max_context_chars);
  config.validate();
  return config;
}

void run_format(const Context& ctx, const json& section, const StagePlan& plan) {
  const auto config = formatter_config(section);
  const auto condition = format::parse_condition(section.value("condition", std::string("flat")));
  std::vector<format::QueryRecord> records;
  if (section.contains("dialogues")) {
    std::vector<std::vector<format::QueryRecord>> sets;
    for (const auto& path : plan.inputs) {
      std::vector<format::QueryRecord> set;
      for (const auto& d : jsonl::read_file<format::FineTuneDialogue>(path.string())) {
        d.validate();
        auto formatted = format::format_dialogue(d, condition, config);
        set.insert(set.end(), formatted.begin(), formatted.end());
      }
      sets.push_back(std::move(set));
    }
    if (sets.size() == 1) {
      records = std::move(sets.front());
    } else {
      const auto mode = format::parse_mix_mode(section.value("mix", std::string("equal")));
      std::optional<std::size_t> total;
      if (section.contains("total")) total = section["total"].get<std::size_t>();
      records = format::mix_datasets(sets, mode, mix_seed(ctx.seed, 0), total);
    }
  } else {
    if (condition != format::Condition::kFlat) {
      throw Error(ErrorCode::kInvalidArgument, "reply pairs carry no info; use condition flat");
    }
    for (const auto& pair : corpus::read_pairs_file(plan.inputs[0].string())) {
      std::vector<format::Utterance> utterances;
      for (std::size_t i = 0; i < pair.context.size(); ++i) {
        utterances.push_back({i % 2 == 0 ? format::Speaker::kSpk1 : format::Speaker::kSpk2,
                              pair.context[i]});
      }
      format::QueryRecord r;
      r.query_text = format::render_query(format::truncate_context(utterances, config),
                                          format::DatasetKind::kFav, std::nullopt,
                                          format::Condition::kFlat, config);
      r.target_text = pair.target;
      records.push_back(std::move(r));
    }
  }
  if (records.empty()) throw Error(ErrorCode::kEmptyCorpus, "format stage produced no records");

  const double test_fraction = section.value("test_fraction", 0.1);
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "test_fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(ctx.seed, 1));
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(records.size()));
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<long>(n_test));
  std::sort(test_idx.begin(), test_idx.end());
  std::vector<bool> is_test(records.size(), false);
  for (auto i : test_idx) is_test[i] = true;
  std::vector<format::QueryRecord> train, test;
  for (std::size_t i = 0; i < records.size(); ++i) (is_test[i] ? test : train).push_back(records[i]);
  write_records(plan.outputs[0], train);
  write_records(plan.outputs[1], test);
}

StagePlan plan_train(const Context& ctx, const json&) {
  return {{ctx.out("train.jsonl")}, {ctx.out("model.json")}};
}

void run_train(const Context&, const json& section, const StagePlan& plan) {
  lm::NGramOptions options;
  options.order = section.value("order", options.order);
  options.k = section.value("k", options.k);
  options.conditioning = section.value("conditioning", options.conditioning);
  const auto records = jsonl::read_file<format::QueryRecord>(plan.inputs[0].string());
  lm::train_ngram(records, options).save(plan.outputs[0].string());
}

StagePlan plan_generate(const Context& ctx, const json&) {
  return {{ctx.out("model.json"), ctx.out("test.jsonl")}, {ctx.out("generations.jsonl")}};
}

std::vector<std::string> query_utterances(const std::string& query) {
  const format::FormatterConfig config;
  if (query.find(format::kSpk1) != std::string::npos ||
      query.find(format::kSpk2) != std::string::npos) {
    std::vector<std::string> out;
    for (const auto& u : format::parse_tagged_query(query, config).utterances) out.push_back(u.text);
    return out;
  }
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = query.find(format::kSep, pos);
    out.push_back(query.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) break;
    pos = next + format::kSep.size();
  }
  return out;
}

void run_generate(const Context& ctx, const json& section, const StagePlan& plan) {
  const auto model = lm::NGramModel::load(plan.inputs[0].string());
  auto sampling = section.value("sampling", gen::SamplingParams{});
  sampling.threads = ctx.threads;
  const auto filter = section.value("filter", gen::FilterConfig{});
  std::vector<std::string> queries = section.value("queries", std::vector<std::string>{});
  const auto count = section.value("count", std::size_t{5});
  const auto test = jsonl::read_file<format::QueryRecord>(plan.inputs[1].string());
  for (std::size_t i = 0; i < std::min(count, test.size()); ++i) queries.push_back(test[i].query_text);

  std::vector<json> rows;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto params = sampling;
    params.seed = mix_seed(ctx.seed, i);
    const auto result = gen::generate(model, queries[i], params, filter, query_utterances(queries[i]));
    rows.push_back({{"query", queries[i]}, {"result", gen::to_json(result)}});
  }
  write_jsonl(plan.outputs[0], rows);
}

StagePlan plan_analyze(const Context& ctx, const json& section) {
  StagePlan plan{{ctx.out("model.json"), ctx.out("test.jsonl")},
                 {ctx.out("ppl_grid.md"), ctx.out("ppl_grid.json")}};
  if (section.contains("export")) {
    plan.inputs.push_back(ctx.input(section["export"].get<std::string>()));
    for (const char* name : {"significance.md", "significance.csv", "significance.json",
                             "size_correlation.md", "size_correlation.json"}) {
      plan.outputs.push_back(ctx.out(name));
    }
  }
  return plan;
}

void run_analyze(const Context&, const json& section, const StagePlan& plan) {
  const auto model = lm::NGramModel::load(plan.inputs[0].string());
  const auto test = jsonl::read_file<format::QueryRecord>(plan.inputs[1].string());
  if (test.empty()) throw Error(ErrorCode::kEmptyCorpus, "no held-out records");
  const double ppl = lm::corpus_perplexity(model, test);
  report::PplEntry entry{section.value("corpus_label", std::string("toy")),
                         "order-" + std::to_string(model.order()),
                         section.value("test_label", std::string("held-out")),
                         std::nullopt, std::nullopt};
  (format::is_tagged(test.front().condition) ? entry.tagged : entry.flat) = ppl;
  write_bytes(plan.outputs[0], report::ppl_grid_text({entry}));
  write_bytes(plan.outputs[1], report::ppl_grid_json({entry}).dump(2) + "\n");

  if (plan.inputs.size() > 2) {
    const auto sessions = report::scored_sessions(read_bytes(plan.inputs[2]));
    stats::SignificanceOptions options;
    options.normalization =
        stats::parse_normalization(section.value("normalization", std::string("row")));
    options.q_strict = section.value("q", options.q_strict);
    options.q_loose = section.value("q_loose", options.q_loose);
    const auto table = stats::significance_table(report::score_matrices(sessions), options);
    write_bytes(plan.outputs[2], report::significance_text(table));
    write_bytes(plan.outputs[3], report::significance_csv(table));
    write_bytes(plan.outputs[4], report::significance_json(table).dump(2) + "\n");
    const auto series = report::size_series(sessions);
    write_bytes(plan.outputs[5], report::size_series_text(series));
    write_bytes(plan.outputs[6], report::size_series_json(series).dump(2) + "\n");
  }
}

using PlanFn = StagePlan (*)(const Context&, const json&);
using RunFn = void (*)(const Context&, const json&, const StagePlan&);

struct StageDef {
  std::string_view name;
  PlanFn plan;
  RunFn run;
};

constexpr StageDef kStageDefs[] = {
    {"corpus", plan_corpus, run_corpus},       {"format", plan_format, run_format},
    {"train", plan_train, run_train},          {"generate", plan_generate, run_generate},
    {"analyze", plan_analyze, run_analyze},
};

}  // namespace

std::vector<StageOutcome> run_pipeline(const json& config, const RunOptions& options) {
  if (!config.is_object()) throw Error(ErrorCode::kInvalidArgument, "config must be a JSON object");
  for (const auto& [key, value] : config.items()) {
    const bool known = key == "seed" || key == "out_dir" || key == "threads" ||
                       std::find(std::begin(kStages), std::end(kStages), key) != std::end(kStages);
    if (!known) throw Error(ErrorCode::kInvalidArgument, "unknown config key: " + key);
  }
  Context ctx;
  ctx.config = config;
  ctx.base_dir = options.base_dir;
  ctx.seed = options.seed.value_or(config.value("seed", std::uint64_t{0}));
  ctx.threads = options.threads.value_or(config.value("threads", 1u));
  ctx.out_dir = options.out_dir.value_or(ctx.input(config.value("out_dir", std::string("out"))));
  fs::create_directories(ctx.out_dir / "manifests");

  std::vector<StageOutcome> outcomes;
  for (const auto& def : kStageDefs) {
    const std::string name(def.name);
    if (!config.contains(name)) continue;
    const json& section = config[name];
    if (!section.is_object()) throw Error(ErrorCode::kInvalidArgument, name + " section must be an object");
    const StagePlan plan = def.plan(ctx, section);
    for (const auto& in : plan.inputs) {
      if (!fs::exists(in)) throw Error(ErrorCode::kIo, name + ": missing input " + in.string());
    }
    const json identity = {{"stage", name},
                           {"config", section},
                           {"seed", ctx.seed},
                           {"tool_version", kToolVersion}};
    const json input_hashes = hashed(plan.inputs);
    const fs::path manifest_path = ctx.out_dir / "manifests" / (name + ".json");

    StageOutcome outcome{name, false, plan.outputs};
    if (!manifest_matches(manifest_path, identity, input_hashes)) {
      def.run(ctx, section, plan);
      const json manifest = {{"identity", identity},
                             {"inputs", input_hashes},
                             {"outputs", hashed(plan.outputs)}};
      write_bytes(manifest_path, manifest.dump(2) + "\n");
      outcome.ran = true;
    }
    if (options.on_stage) options.on_stage(outcome);
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

std::vector<StageOutcome> run_pipeline_file(const fs::path& config_path, RunOptions options) {
  json config;
  try {
    config = json::parse(read_bytes(config_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, config_path.string() + ": " + e.what());
  }
  options.base_dir = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");
  return run_pipeline(config, options);
}

fs::path write_toy_project(const fs::path& dir, std::uint64_t seed) {
  fs::create_directories(dir);

  synth::TweetCorpusOptions tweet_options;
  tweet_options.total = 2000;
  tweet_options.per_rule = 30;
  tweet_options.decoys = 20;
  const auto tweets = synth::tweet_corpus(tweet_options, mix_seed(seed, 10));
  {
    std::vector<json> rows;
    for (const auto& t : tweets.tweets) rows.push_back(t);
    write_jsonl(dir / "tweets.jsonl", rows);
  }

  synth::ToyFavOptions fav_options;
  fav_options.train_dialogues = 400;
  fav_options.test_dialogues = 0;
  const auto fav = synth::toy_fav(fav_options, mix_seed(seed, 11));
  write_records(dir / "fav_dialogues.jsonl", fav.train);

  // Evaluation export: three datasets x four model sizes x eight raters, with
  // attentiveness lifted for Fav and lowered for ED.
  std::vector<json> sessions;
  Rng rng(mix_seed(seed, 12));
  const char* datasets[] = {"ED", "PC", "Fav"};
  const char* sizes[] = {"0.35B", "0.7B", "1.1B", "1.6B"};
  std::uint64_t sequence = 1;
  for (const char* dataset : datasets) {
    for (std::size_t s = 0; s < 4; ++s) {
      for (int rater = 0; rater < 8; ++rater) {
        session::Session sess;
        char id[16];
        std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(sequence));
        sess.id = id;
        sess.sequence = sequence++;
        sess.created_at = "2020-02-01T00:00:00.000Z";
        sess.spec.model_id = std::string("toy-") + dataset + "-" + sizes[s];
        sess.spec.dataset_kind = format::parse_dataset_kind(dataset);
        sess.state = session::State::kComplete;
        sess.turns.push_back({session::Role::kSystem, sess.protocol.opening_phrase, sess.created_at, false});
        session::EvaluationRecord ev;
        ev.session_id = sess.id;
        ev.rater_id = "r" + std::to_string(rater);
        ev.submitted_at = sess.created_at;
        for (const auto key : session::kMetricKeys) {
          int v = 4 + static_cast<int>(rng.below(3)) + static_cast<int>(s) / 2;
          if (key == "attentiveness") {
            if (std::string_view(dataset) == "Fav") v += 3;
            if (std::string_view(dataset) == "ED") v -= 3;
          }
          ev.scores[std::string(key)] = std::clamp(v, 0, 10);
        }
        sess.evaluation = ev;
        sessions.push_back(session::to_json(sess));
      }
    }
  }
  write_jsonl(dir / "evaluations.jsonl", sessions);

  const json config = {
      {"seed", seed},
      {"out_dir", "out"},
      {"corpus", {{"input", "tweets.jsonl"}}},
      {"format",
       {{"dialogues", {"fav_dialogues.jsonl"}}, {"condition", "tagged"}, {"test_fraction", 0.1}}},
      {"train", {{"order", 3}, {"k", 0.01}, {"conditioning", true}}},
      {"generate", {{"count", 3}, {"sampling", {{"num_candidates", 5}, {"max_tokens", 16}}}}},
      {"analyze", {{"export", "evaluations.jsonl"}, {"corpus_label", "Fav-toy"}}},
  };
  const fs::path config_path = dir / "pipeline.json";
  write_bytes(config_path, config.dump(2) + "\n");
  return config_path;
}

}  // namespace chitchat::pipeline
