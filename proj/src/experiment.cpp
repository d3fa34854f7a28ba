#include "rgpl/experiment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

namespace rgpl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& where, const std::string& key, const std::string& what,
                            const std::string& value) {
  throw Error((where.empty() ? "" : where + ": ") + "field '" + key + "': expected " + what + ", got '" + value + "'");
}

template <typename T>
T parse_int(const std::string& where, const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    bad_value(where, key, std::is_signed_v<T> ? "an integer" : "a non-negative integer", value);
  }
  return out;
}

double parse_double(const std::string& where, const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) bad_value(where, key, "a finite number", value);
  return out;
}

bool parse_bool(const std::string& where, const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(where, key, "true or false", value);
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

/// One config key: how to set it and how to print it.
struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string& value, const std::string& where)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define RGPL_UINT_FIELD(KEY, MEMBER)                                                                  \
  Field{KEY,                                                                                          \
        [](ExperimentConfig& c, const std::string& v, const std::string& w) {                         \
          c.MEMBER = parse_int<std::decay_t<decltype(c.MEMBER)>>(w, KEY, v);                          \
        },                                                                                            \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }}
#define RGPL_DOUBLE_FIELD(KEY, MEMBER)                                                                      \
  Field{KEY, [](ExperimentConfig& c, const std::string& v, const std::string& w) { c.MEMBER = parse_double(w, KEY, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.MEMBER); }}
#define RGPL_STRING_FIELD(KEY, MEMBER) \
  Field{KEY, [](ExperimentConfig& c, const std::string& v, const std::string&) { c.MEMBER = v; }, \
        [](const ExperimentConfig& c) { return c.MEMBER; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      RGPL_STRING_FIELD("out", out_dir),
      Field{"seed", [](ExperimentConfig& c, const std::string& v, const std::string& w) { c.reseed(parse_int<std::uint64_t>(w, "seed", v)); },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      Field{"source",
            [](ExperimentConfig& c, const std::string& v, const std::string& w) {
              if (v == "synthetic") c.source = ExperimentConfig::Source::kSynthetic;
              else if (v == "beir") c.source = ExperimentConfig::Source::kBeir;
              else bad_value(w, "source", "synthetic or beir", v);
            },
            [](const ExperimentConfig& c) {
              return std::string(c.source == ExperimentConfig::Source::kSynthetic ? "synthetic" : "beir");
            }},
      RGPL_UINT_FIELD("synthetic.vocab_size", target.vocab_size),
      RGPL_UINT_FIELD("synthetic.num_docs", target.num_docs),
      RGPL_UINT_FIELD("synthetic.num_topics", target.num_topics),
      RGPL_UINT_FIELD("synthetic.num_clusters", target.num_clusters),
      RGPL_UINT_FIELD("synthetic.doc_len_min", target.doc_len_range.first),
      RGPL_UINT_FIELD("synthetic.doc_len_max", target.doc_len_range.second),
      RGPL_DOUBLE_FIELD("synthetic.topic_token_skew", target.topic_token_skew),
      RGPL_UINT_FIELD("synthetic.latent_dim", target.latent_dim),
      RGPL_DOUBLE_FIELD("synthetic.topic_spread", target.topic_spread),
      RGPL_UINT_FIELD("synthetic.tokens_per_topic", target.tokens_per_topic),
      RGPL_UINT_FIELD("synthetic.tokens_per_cluster", target.tokens_per_cluster),
      RGPL_UINT_FIELD("synthetic.background_tokens", target.background_tokens),
      RGPL_DOUBLE_FIELD("synthetic.cluster_token_share", target.cluster_token_share),
      RGPL_UINT_FIELD("synthetic.source_num_docs", source_num_docs),
      RGPL_UINT_FIELD("synthetic.source_num_queries", source_num_queries),
      RGPL_UINT_FIELD("queries.per_doc", train_queries.queries_per_doc),
      RGPL_UINT_FIELD("queries.num_source_docs", train_queries.num_source_docs),
      RGPL_DOUBLE_FIELD("queries.noise", train_queries.noise),
      RGPL_UINT_FIELD("queries.span_min", train_queries.span_len_range.first),
      RGPL_UINT_FIELD("queries.span_max", train_queries.span_len_range.second),
      RGPL_UINT_FIELD("test.num_queries", test_queries.num_source_docs),
      RGPL_DOUBLE_FIELD("test.noise", test_queries.noise),
      RGPL_UINT_FIELD("test.span_min", test_queries.span_len_range.first),
      RGPL_UINT_FIELD("test.span_max", test_queries.span_len_range.second),
      RGPL_STRING_FIELD("beir.corpus", beir_corpus),
      RGPL_STRING_FIELD("beir.train_queries", beir_train_queries),
      RGPL_STRING_FIELD("beir.test_queries", beir_test_queries),
      RGPL_STRING_FIELD("beir.qrels", beir_qrels),
      RGPL_STRING_FIELD("beir.vocab", beir_vocab),
      RGPL_STRING_FIELD("teacher.table", teacher_table),
      RGPL_UINT_FIELD("encoder.hidden_dim", hidden_dim),
      RGPL_UINT_FIELD("encoder.out_dim", out_dim),
      RGPL_UINT_FIELD("base.steps", base_steps),
      RGPL_STRING_FIELD("base.checkpoint", base_checkpoint),
      RGPL_STRING_FIELD("miner", miner),
      RGPL_UINT_FIELD("train.total_steps", train.total_steps),
      RGPL_UINT_FIELD("train.batch_size", train.batch_size),
      RGPL_DOUBLE_FIELD("train.learning_rate", train.learning_rate),
      Field{"train.k",
            [](ExperimentConfig& c, const std::string& v, const std::string& w) {
              c.train.refresh_interval_k = v == "inf" ? 0 : parse_int<std::int64_t>(w, "train.k", v);
            },
            [](const ExperimentConfig& c) {
              return c.train.refresh_interval_k == 0 ? std::string("inf") : std::to_string(c.train.refresh_interval_k);
            }},
      RGPL_UINT_FIELD("train.pool_size", train.pool_size),
      Field{"train.optimizer",
            [](ExperimentConfig& c, const std::string& v, const std::string& w) {
              if (v == "adam") c.train.optimizer = OptimizerKind::kAdam;
              else if (v == "sgd") c.train.optimizer = OptimizerKind::kSgd;
              else bad_value(w, "train.optimizer", "adam or sgd", v);
            },
            [](const ExperimentConfig& c) {
              return std::string(c.train.optimizer == OptimizerKind::kAdam ? "adam" : "sgd");
            }},
      RGPL_DOUBLE_FIELD("train.beta1", train.beta1),
      RGPL_DOUBLE_FIELD("train.beta2", train.beta2),
      RGPL_DOUBLE_FIELD("train.eps", train.eps),
      RGPL_UINT_FIELD("train.eval_every", train.eval_every),
      Field{"train.log_pool_scores",
            [](ExperimentConfig& c, const std::string& v, const std::string& w) {
              c.train.log_pool_scores = parse_bool(w, "train.log_pool_scores", v);
            },
            [](const ExperimentConfig& c) { return std::string(c.train.log_pool_scores ? "true" : "false"); }},
      RGPL_DOUBLE_FIELD("teacher.weight", oracle.weight),
      RGPL_DOUBLE_FIELD("teacher.noise_sigma", oracle.noise_sigma),
      RGPL_DOUBLE_FIELD("eval.grade2_cos", thresholds.grade2),
      RGPL_DOUBLE_FIELD("eval.grade1_cos", thresholds.grade1),
      RGPL_UINT_FIELD("eval.depth", eval_depth),
      Field{"eval.metrics",
            [](ExperimentConfig& c, const std::string& v, const std::string& w) {
              auto list = split_list(v);
              if (list.empty()) bad_value(w, "eval.metrics", "a comma-separated metric list", v);
              c.metrics = std::move(list);
            },
            [](const ExperimentConfig& c) { return join(c.metrics); }},
      Field{"sweep.k",
            [](ExperimentConfig& c, const std::string& v, const std::string& w) {
              std::vector<std::int64_t> ks;
              for (const auto& item : split_list(v)) {
                ks.push_back(item == "inf" ? 0 : parse_int<std::int64_t>(w, "sweep.k", item));
              }
              if (ks.empty()) bad_value(w, "sweep.k", "a comma-separated list of k values", v);
              c.sweep_k = std::move(ks);
            },
            [](const ExperimentConfig& c) {
              std::vector<std::string> items;
              for (auto k : c.sweep_k) items.push_back(k == 0 ? "inf" : std::to_string(k));
              return join(items);
            }},
  };
  return table;
}

#undef RGPL_UINT_FIELD
#undef RGPL_DOUBLE_FIELD
#undef RGPL_STRING_FIELD

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t state = master ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  return splitmix64(state);
}

enum SeedStream : std::uint64_t {
  kTargetDomain = 1,
  kSourceDomain,
  kTrainQueries,
  kTestQueries,
  kSourceQueries,
  kTeacher,
  kTrainer,
  kEncoderInit,
  kBaseTrainer,
};

SyntheticDomainSpec source_spec(const ExperimentConfig& c) {
  SyntheticDomainSpec s = c.target;
  s.num_docs = c.source_num_docs;
  s.seed = derive_seed(c.seed, kSourceDomain);
  return s;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw Error(what + " path is not configured");
  if (!fs::is_regular_file(path)) throw Error(what + " not found: " + path);
}

std::string data_dir(const ExperimentConfig& c) { return (fs::path(c.out_dir) / "data").string(); }
std::string base_path(const ExperimentConfig& c) {
  if (!c.base_checkpoint.empty()) return c.base_checkpoint;
  return (fs::path(c.out_dir) / "models" / "base.ckpt").string();
}

/// Manifest next to a command's outputs: config hash, seed, code version
/// and a content hash per artifact.
void write_manifest(const ExperimentConfig& config, const std::string& dir, const std::string& command,
                    const std::vector<std::string>& artifacts, json extra = json::object()) {
  json files = json::object();
  for (const auto& path : artifacts) {
    files[fs::relative(path, dir).generic_string()] = hash_file(path);
  }
  json m = {{"command", command},
            {"config_hash", config.hash()},
            {"seed", config.seed},
            {"code_version", kCodeVersion},
            {"files", files}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  std::ofstream out((fs::path(dir) / "manifest.json").string());
  if (!out) throw Error("cannot write manifest in " + dir);
  out << m.dump(2) << '\n';
}

std::vector<std::string> list_files(const std::string& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void save_reports(const Evaluation& ev, const std::string& dir) {
  save_run(ev.run, (fs::path(dir) / "run.trec").string());
  for (const auto& [name, report] : ev.reports) {
    save_report_tsv(report, (fs::path(dir) / (name + ".tsv")).string());
    save_report_json(report, (fs::path(dir) / (name + ".json")).string());
  }
}

std::string train_subdir(std::int64_t k) { return k == 0 ? "train_gpl" : "train_rgpl_k" + std::to_string(k); }

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  ExperimentConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path + ":" + std::to_string(line_no);
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(where + ": expected 'key = value'");
    c.set(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)), where);
  }
  return c;
}

void ExperimentConfig::set(const std::string& key, const std::string& value, const std::string& where) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value, where);
      return;
    }
  }
  throw Error((where.empty() ? "" : where + ": ") + "unknown field '" + key + "'");
}

void ExperimentConfig::validate() const {
  const bool any_beir = !beir_corpus.empty() || !beir_train_queries.empty() || !beir_test_queries.empty() ||
                        !beir_qrels.empty() || !beir_vocab.empty() || !teacher_table.empty();
  if (source == Source::kSynthetic) {
    if (any_beir) throw Error("config names dataset paths but source = synthetic; pick exactly one data source");
    target.validate();
    source_spec(*this).validate();
    if (train_queries.num_source_docs > target.num_docs) throw Error("queries.num_source_docs exceeds synthetic.num_docs");
    if (test_queries.num_source_docs == 0 || test_queries.num_source_docs > target.num_docs) {
      throw Error("test.num_queries must be in [1, synthetic.num_docs]");
    }
  } else {
    if (beir_corpus.empty() || beir_train_queries.empty() || beir_test_queries.empty() || beir_qrels.empty() ||
        beir_vocab.empty() || teacher_table.empty()) {
      throw Error("source = beir needs beir.corpus, beir.train_queries, beir.test_queries, beir.qrels, beir.vocab "
                  "and teacher.table");
    }
    if (base_checkpoint.empty()) throw Error("source = beir needs base.checkpoint");
  }
  if (hidden_dim < 1 || out_dim < 1) throw Error("encoder dimensions must be >= 1");
  if (base_steps < 0) throw Error("base.steps must be non-negative");
  train.validate();
  if (eval_depth < 1) throw Error("eval.depth must be >= 1");
  if (!(thresholds.grade2 >= thresholds.grade1)) throw Error("eval.grade2_cos must be >= eval.grade1_cos");
  for (const auto& m : metrics) {
    if (m != "ndcg@10" && m != "success@5") {
      // Other cutoffs are accepted as long as they parse.
      evaluate_metric(m, RunFile{}, Qrels{});
    }
  }
  if (out_dir.empty()) throw Error("out must not be empty");
}

std::string ExperimentConfig::dump() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  // The output directory names where results go, not what they are.
  std::string text;
  for (const auto& f : fields()) {
    if (std::string_view(f.key) == "out") continue;
    text += std::string(f.key) + " = " + f.get(*this) + "\n";
  }
  return to_hex(fnv1a64(text));
}

void ExperimentConfig::reseed(std::uint64_t master) {
  seed = master;
  target.seed = derive_seed(master, kTargetDomain);
  train_queries.seed = derive_seed(master, kTrainQueries);
  test_queries.seed = derive_seed(master, kTestQueries);
  oracle.seed = derive_seed(master, kTeacher);
  train.seed = derive_seed(master, kTrainer);
}

// ---------------------------------------------------------------------------
// Data

PreparedData prepare_synthetic(const ExperimentConfig& config) {
  config.validate();
  if (config.source != ExperimentConfig::Source::kSynthetic) throw Error("prepare_synthetic needs a synthetic config");
  PreparedData d;
  d.vocab = make_synthetic_vocabulary(config.target.vocab_size);
  d.source_corpus = generate_synthetic_corpus(source_spec(config), d.vocab).corpus;
  d.corpus = generate_synthetic_corpus(config.target, d.vocab).corpus;

  PseudoQueryOptions sq = config.train_queries;
  sq.num_source_docs = std::min(config.source_num_queries, d.source_corpus.size());
  sq.seed = derive_seed(config.seed, kSourceQueries);
  sq.id_prefix = "srcq";
  d.source_queries = generate_pseudo_queries(d.source_corpus, d.vocab, sq);
  d.train_queries = generate_pseudo_queries(d.corpus, d.vocab, config.train_queries);
  d.test_queries = generate_pseudo_queries(d.corpus, d.vocab, config.test_queries);
  d.qrels = planted_qrels(d.corpus, d.test_queries, config.thresholds);
  d.teacher = TeacherScores::oracle(config.oracle);
  return d;
}

PreparedData load_beir(const ExperimentConfig& config) {
  require_file(config.beir_vocab, "vocabulary");
  require_file(config.beir_corpus, "corpus");
  require_file(config.beir_train_queries, "training queries");
  require_file(config.beir_test_queries, "test queries");
  require_file(config.beir_qrels, "qrels");
  require_file(config.teacher_table, "teacher table");
  PreparedData d;
  d.vocab = Vocabulary::load(config.beir_vocab);
  d.corpus = load_beir_corpus(config.beir_corpus);
  d.train_queries = load_beir_queries(config.beir_train_queries);
  d.test_queries = load_beir_queries(config.beir_test_queries);
  d.qrels = load_qrels(config.beir_qrels);
  d.teacher = load_teacher_table(config.teacher_table);
  tokenize_all(d.corpus, d.vocab);
  tokenize_all(d.train_queries, d.vocab);
  tokenize_all(d.test_queries, d.vocab);
  return d;
}

void write_prepared(const PreparedData& d, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path p(dir);
  d.vocab.save((p / "vocab.txt").string());
  save_corpus(d.source_corpus, (p / "source_corpus.jsonl").string());
  save_queries(d.source_queries, (p / "source_queries.jsonl").string());
  save_corpus(d.corpus, (p / "corpus.jsonl").string());
  save_queries(d.train_queries, (p / "train_queries.jsonl").string());
  save_queries(d.test_queries, (p / "test_queries.jsonl").string());
  save_qrels(d.qrels, (p / "qrels.tsv").string());
}

PreparedData load_prepared(const ExperimentConfig& config) {
  config.validate();
  if (config.source == ExperimentConfig::Source::kBeir) return load_beir(config);
  const fs::path p(data_dir(config));
  const std::vector<std::string> names = {"vocab.txt",       "source_corpus.jsonl",  "source_queries.jsonl",
                                          "corpus.jsonl",    "train_queries.jsonl", "test_queries.jsonl",
                                          "qrels.tsv"};
  for (const auto& n : names) {
    if (!fs::is_regular_file(p / n)) throw Error("prepared data missing " + (p / n).string() + " (run prepare first)");
  }
  PreparedData d;
  d.vocab = Vocabulary::load((p / "vocab.txt").string());
  d.source_corpus = load_beir_corpus((p / "source_corpus.jsonl").string());
  d.source_queries = load_beir_queries((p / "source_queries.jsonl").string());
  d.corpus = load_beir_corpus((p / "corpus.jsonl").string());
  d.train_queries = load_beir_queries((p / "train_queries.jsonl").string());
  d.test_queries = load_beir_queries((p / "test_queries.jsonl").string());
  d.qrels = load_qrels((p / "qrels.tsv").string());
  tokenize_all(d.source_corpus, d.vocab);
  tokenize_all(d.source_queries, d.vocab);
  tokenize_all(d.corpus, d.vocab);
  tokenize_all(d.train_queries, d.vocab);
  tokenize_all(d.test_queries, d.vocab);
  attach_query_topics(d.source_queries, d.source_corpus);
  attach_query_topics(d.train_queries, d.corpus);
  attach_query_topics(d.test_queries, d.corpus);
  d.teacher = TeacherScores::oracle(config.oracle);
  return d;
}

// ---------------------------------------------------------------------------
// Training

NegativePool mine_bm25_negatives(const Bm25Index& index, const QuerySet& queries, std::size_t pool_size) {
  NegativePool pool;
  for (const auto& q : queries) {
    if (!q.source_doc_id) throw Error("query " + q.id + " has no source document to exclude");
    auto hits = bm25_search(index, q.tokens, pool_size + 1);
    std::erase_if(hits, [&](const ScoredDoc& h) { return h.doc_id == *q.source_doc_id; });
    if (hits.size() > pool_size) hits.resize(pool_size);
    pool.emplace(q.id, std::move(hits));
  }
  return pool;
}

EncoderParams train_base(const ExperimentConfig& config, const PreparedData& data) {
  EncoderParams init = init_params(static_cast<Index>(data.vocab.size()), config.hidden_dim, config.out_dim,
                                   derive_seed(config.seed, kEncoderInit), data.vocab.special_ids());
  if (config.base_steps == 0) return init;
  if (data.source_queries.empty()) throw Error("base training needs source-domain queries");
  const Bm25Index bm25 = build_bm25(data.source_corpus, data.vocab);
  const NegativePool pool = mine_bm25_negatives(bm25, data.source_queries, config.train.pool_size);
  TrainConfig tc = config.train;
  tc.total_steps = config.base_steps;
  tc.refresh_interval_k = 0;
  tc.eval_every = 0;
  tc.log_pool_scores = false;
  tc.seed = derive_seed(config.seed, kBaseTrainer);
  const TrainingData td(data.source_corpus, data.source_queries, data.teacher);
  auto result = run_gpl(tc, init, pool, td);
  result.params.step = 0;
  return std::move(result.params);
}

NegativePool initial_negatives(const ExperimentConfig& config, const PreparedData& data, const EncoderParams& base) {
  const std::size_t pool_size = config.train.pool_size;
  if (config.miner == "bm25") {
    return mine_bm25_negatives(build_bm25(data.corpus, data.vocab), data.train_queries, pool_size);
  }
  const EncoderParams miner = config.miner == "base" ? base : load_checkpoint(config.miner);
  return mine_hard_negatives(build_index(miner, data.corpus, 0), data.train_queries, miner, pool_size);
}

TrainResult adapt(const ExperimentConfig& config, const PreparedData& data, const EncoderParams& base,
                  const NegativePool& initial_pool, std::int64_t k, const TrainHooks& hooks) {
  if (k < 0) throw Error("k must be non-negative");
  TrainConfig tc = config.train;
  tc.refresh_interval_k = k;
  const TrainingData td(data.corpus, data.train_queries, data.teacher);
  return k == 0 ? run_gpl(tc, base, initial_pool, td, hooks) : run_rgpl(tc, base, initial_pool, td, hooks);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

Evaluation score_run(const ExperimentConfig& config, const PreparedData& data, RunFile run) {
  Evaluation ev;
  ev.run = std::move(run);
  for (const auto& m : config.metrics) {
    Diagnostics diag;
    auto report = evaluate_metric(m, ev.run, data.qrels, &diag);
    ev.reports.emplace(report.name(), std::move(report));
  }
  return ev;
}

}  // namespace

Evaluation evaluate_model(const ExperimentConfig& config, const PreparedData& data, const EncoderParams& params) {
  const IndexSnapshot index = build_index(params, data.corpus, params.step);
  return score_run(config, data, produce_run(params, index, data.test_queries, config.eval_depth));
}

Evaluation evaluate_bm25(const ExperimentConfig& config, const PreparedData& data) {
  const Bm25Index index = build_bm25(data.corpus, data.vocab);
  RunFile run;
  for (const auto& q : data.test_queries) run.emplace(q.id, bm25_search(index, q.tokens, config.eval_depth));
  return score_run(config, data, std::move(run));
}

// ---------------------------------------------------------------------------
// Commands

std::string cmd_prepare(const ExperimentConfig& config) {
  config.validate();
  const fs::path out(config.out_dir);
  std::ostringstream summary;
  if (config.source == ExperimentConfig::Source::kBeir) {
    const PreparedData d = load_beir(config);
    fs::create_directories(out);
    const json counts = {{"corpus", d.corpus.size()},
                         {"train_queries", d.train_queries.size()},
                         {"test_queries", d.test_queries.size()},
                         {"qrels_queries", d.qrels.size()},
                         {"teacher_pairs", d.teacher.table_size()}};
    json inputs = json::object();
    for (const auto& path : {config.beir_corpus, config.beir_train_queries, config.beir_test_queries, config.beir_qrels,
                             config.beir_vocab, config.teacher_table, config.base_checkpoint}) {
      if (fs::is_regular_file(path)) inputs[path] = hash_file(path);
    }
    const fs::path dir = out / "data";
    fs::create_directories(dir);
    write_manifest(config, dir.string(), "prepare", {}, {{"counts", counts}, {"inputs", inputs}});
    summary << "loaded " << d.corpus.size() << " documents, " << d.train_queries.size() << " training queries, "
            << d.test_queries.size() << " test queries, " << d.qrels.size() << " judged queries";
    return summary.str();
  }

  const PreparedData d = prepare_synthetic(config);
  const std::string ddir = data_dir(config);
  write_prepared(d, ddir);
  write_manifest(config, ddir, "prepare", list_files(ddir),
                 {{"counts",
                   {{"source_corpus", d.source_corpus.size()},
                    {"source_queries", d.source_queries.size()},
                    {"corpus", d.corpus.size()},
                    {"train_queries", d.train_queries.size()},
                    {"test_queries", d.test_queries.size()},
                    {"qrels_queries", d.qrels.size()}}}});

  // The Base model and its zero-shot report.
  const PreparedData loaded = load_prepared(config);
  const EncoderParams base = train_base(config, loaded);
  const fs::path mdir = out / "models";
  fs::create_directories(mdir);
  save_checkpoint(base, (mdir / "base.ckpt").string());
  const Evaluation ev = evaluate_model(config, loaded, base);
  const fs::path rdir = out / "eval_base";
  fs::create_directories(rdir);
  save_reports(ev, rdir.string());
  write_manifest(config, mdir.string(), "prepare", list_files(mdir), {{"checkpoint_hash", params_hash(base)}});
  write_manifest(config, rdir.string(), "eval", list_files(rdir), {{"checkpoint_hash", params_hash(base)}});

  summary << "prepared " << d.corpus.size() << " target documents, " << d.train_queries.size()
          << " training queries, " << d.test_queries.size() << " test queries in " << ddir;
  for (const auto& [name, r] : ev.reports) summary << "; base " << name << " = " << r.aggregate;
  return summary.str();
}

std::string cmd_train(const ExperimentConfig& config, const std::string& mode) {
  if (mode != "gpl" && mode != "rgpl") throw Error("mode must be gpl or rgpl, got '" + mode + "'");
  const std::int64_t k = mode == "gpl" ? 0 : config.train.refresh_interval_k;
  if (mode == "rgpl" && k <= 0) throw Error("mode rgpl needs train.k > 0");
  const std::string base_file = base_path(config);
  require_file(base_file, "base checkpoint");
  if (config.miner != "base" && config.miner != "bm25") require_file(config.miner, "miner checkpoint");
  const PreparedData data = load_prepared(config);
  const EncoderParams base = load_checkpoint(base_file);

  const fs::path dir = fs::path(config.out_dir) / train_subdir(k);
  fs::create_directories(dir);
  const NegativePool pool = initial_negatives(config, data, base);
  TrainResult result = adapt(config, data, base, pool, k);
  save_checkpoint(result.params, (dir / "model.ckpt").string());
  save_train_log(result.log, (dir / "train_log.jsonl").string());
  write_manifest(config, dir.string(), "train", list_files(dir),
                 {{"mode", mode},
                  {"k", k},
                  {"miner", config.miner},
                  {"base_checkpoint_hash", params_hash(base)},
                  {"checkpoint_hash", params_hash(result.params)}});

  std::ostringstream summary;
  summary << mode << " finished " << result.log.steps.size() << " steps with " << result.log.refreshes.size()
          << " refreshes; checkpoint " << (dir / "model.ckpt").string();
  return summary.str();
}

std::string cmd_eval(const ExperimentConfig& config, const std::string& checkpoint, const std::string& compare_report,
                     const std::string& out_subdir) {
  const std::string ckpt = checkpoint.empty() || checkpoint == "base" ? base_path(config) : checkpoint;
  require_file(ckpt, "checkpoint");
  if (!compare_report.empty()) require_file(compare_report, "comparison report");
  const PreparedData data = load_prepared(config);
  const EncoderParams params = load_checkpoint(ckpt);
  const Evaluation ev = evaluate_model(config, data, params);

  const std::string sub = out_subdir.empty() ? "eval_" + fs::path(ckpt).parent_path().filename().string() : out_subdir;
  const fs::path dir = fs::path(config.out_dir) / sub;
  fs::create_directories(dir);
  save_reports(ev, dir.string());

  std::ostringstream summary;
  for (const auto& [name, r] : ev.reports) summary << name << " = " << r.aggregate << "; ";
  json extra = {{"checkpoint", ckpt}, {"checkpoint_hash", params_hash(params)}};
  if (!compare_report.empty()) {
    const MetricReport other = load_report_tsv(compare_report);
    auto it = ev.reports.find(other.name());
    if (it == ev.reports.end()) throw Error("comparison report is " + other.name() + ", which was not evaluated");
    Diagnostics diag;
    const WilcoxonResult w = compare_reports(it->second, other, &diag);
    for (const auto& msg : diag.warnings()) std::cerr << "warning: " << msg << '\n';
    save_significance_json(w, (dir / ("significance_" + other.name() + ".json")).string());
    summary << "p(" << other.name() << " > " << compare_report << ") = " << w.p_value << "; ";
    extra["compared_against"] = compare_report;
  }
  write_manifest(config, dir.string(), "eval", list_files(dir), extra);
  summary << "written to " << dir.string();
  return summary.str();
}

std::string cmd_sweep(const ExperimentConfig& config, const std::vector<std::int64_t>& ks) {
  if (ks.empty()) throw Error("sweep needs at least one k");
  for (auto k : ks) {
    if (k < 0) throw Error("sweep k values must be non-negative (0 or inf means static negatives)");
  }
  const std::string base_file = base_path(config);
  require_file(base_file, "base checkpoint");
  const PreparedData data = load_prepared(config);
  const EncoderParams base = load_checkpoint(base_file);
  const NegativePool pool = initial_negatives(config, data, base);

  const fs::path root = fs::path(config.out_dir) / "sweep";
  fs::create_directories(root);
  json summary_json = json::object();
  std::map<std::int64_t, Evaluation> results;
  std::ostringstream summary;
  for (auto k : ks) {
    const std::string key = k == 0 ? "inf" : std::to_string(k);
    const fs::path dir = root / ("k_" + key);
    fs::create_directories(dir);
    TrainResult result = adapt(config, data, base, pool, k);
    save_checkpoint(result.params, (dir / "model.ckpt").string());
    save_train_log(result.log, (dir / "train_log.jsonl").string());
    Evaluation ev = evaluate_model(config, data, result.params);
    save_reports(ev, dir.string());
    write_manifest(config, dir.string(), "sweep", list_files(dir),
                   {{"k", key}, {"checkpoint_hash", params_hash(result.params)}});
    json entry = {{"refreshes", result.log.refreshes.size()}};
    for (const auto& [name, r] : ev.reports) {
      entry[name] = r.aggregate;
      summary << "k=" << key << " " << name << "=" << r.aggregate << "; ";
    }
    summary_json[key] = entry;
    results.emplace(k, std::move(ev));
  }
  // Significance of every remining schedule against static negatives.
  if (auto gpl = results.find(0); gpl != results.end()) {
    for (const auto& [k, ev] : results) {
      if (k == 0) continue;
      for (const auto& [name, r] : ev.reports) {
        Diagnostics diag;
        const auto w = compare_reports(r, gpl->second.reports.at(name), &diag);
        summary_json[std::to_string(k)]["p_vs_gpl_" + name] = w.p_value;
      }
    }
  }
  {
    std::ofstream out((root / "sweep_summary.json").string());
    if (!out) throw Error("cannot write sweep summary");
    out << summary_json.dump(2) << '\n';
  }
  write_manifest(config, root.string(), "sweep", {(root / "sweep_summary.json").string()},
                 {{"base_checkpoint_hash", params_hash(base)}});
  summary << "written to " << root.string();
  return summary.str();
}

std::string cmd_analyze(const ExperimentConfig& config, const std::string& run_subdir) {
  const fs::path run_dir = fs::path(config.out_dir) / (run_subdir.empty() ? "train_rgpl_k" + std::to_string(config.train.refresh_interval_k) : run_subdir);
  require_file((run_dir / "train_log.jsonl").string(), "train log");
  require_file((run_dir / "model.ckpt").string(), "trained checkpoint");
  const std::string base_file = base_path(config);
  require_file(base_file, "base checkpoint");
  const PreparedData data = load_prepared(config);
  const TrainLog log = load_train_log((run_dir / "train_log.jsonl").string());
  const EncoderParams model = load_checkpoint((run_dir / "model.ckpt").string());
  const EncoderParams base = load_checkpoint(base_file);

  const fs::path dir = run_dir / "analysis";
  fs::create_directories(dir);

  const MarginSeries ms = margin_series(log);
  save_series_csv(ms.loss, (dir / "loss.csv").string(), "step", "loss");
  save_series_csv(ema_smooth(ms.loss), (dir / "loss_ema.csv").string(), "step", "loss");
  save_series_csv(ms.teacher_margin, (dir / "teacher_margin.csv").string(), "step", "teacher_margin");
  save_series_csv(ema_smooth(ms.teacher_margin), (dir / "teacher_margin_ema.csv").string(), "step", "teacher_margin");
  {
    std::ofstream out((dir / "refresh_steps.csv").string());
    out << "step\n";
    for (auto s : ms.refresh_steps) out << s << '\n';
  }
  const Series relevancy = negative_relevancy_series(log, data.teacher, data.corpus, data.train_queries);
  save_series_csv(relevancy, (dir / "negative_relevancy.csv").string(), "round", "mean_teacher_score");

  // Teacher-score distributions of the top-100 retrieved documents.
  const double w = data.teacher.mode() == TeacherScores::Mode::kOracle ? config.oracle.weight : 1.0;
  const auto edges = uniform_bin_edges(-w, w, 40);
  const IndexSnapshot base_index = build_index(base, data.corpus, 0);
  const IndexSnapshot model_index = build_index(model, data.corpus, model.step);
  const RunFile base_run = produce_run(base, base_index, data.test_queries, 100);
  const RunFile model_run = produce_run(model, model_index, data.test_queries, 100);
  save_histogram_csv(score_distribution(base_run, data.teacher, data.corpus, data.test_queries, edges, 100, "base"),
                     (dir / "score_hist_base.csv").string());
  save_histogram_csv(
      score_distribution(model_run, data.teacher, data.corpus, data.test_queries, edges, 100, "adapted"),
      (dir / "score_hist_adapted.csv").string());

  // 2-D view of the first training query, its positive and its current top hits.
  const Query& q = data.train_queries[0];
  const VectorXd qe = encode(model, q.tokens);
  const auto hits = search(model_index, qe, 50);
  MatrixXd docs(static_cast<Index>(hits.size()), model_index.dim());
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto row = static_cast<Index>(*data.corpus.position(hits[i].doc_id));
    docs.row(static_cast<Index>(i)) = model_index.embeddings().row(row);
    labels.push_back(q.source_doc_id && hits[i].doc_id == *q.source_doc_id ? "positive" : "doc");
  }
  save_projection_csv(project_embeddings_2d(docs, qe), labels, (dir / "projection.csv").string());

  write_manifest(config, dir.string(), "analyze", list_files(dir),
                 {{"checkpoint_hash", params_hash(model)}, {"base_checkpoint_hash", params_hash(base)}});
  return "analysis written to " + dir.string();
}

}  // namespace rgpl
