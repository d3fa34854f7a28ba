#pragma once

#include "rgpl/analysis.hpp"
#include "rgpl/bm25.hpp"
#include "rgpl/common.hpp"
#include "rgpl/data.hpp"
#include "rgpl/dense_index.hpp"
#include "rgpl/encoder.hpp"
#include "rgpl/eval.hpp"
#include "rgpl/teacher.hpp"
#include "rgpl/trainer.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rgpl {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Every knob of an experiment. Loaded from a "key = value" file ('#'
/// starts a comment); command-line flags override file values.
struct ExperimentConfig {
  enum class Source { kSynthetic, kBeir };

  std::string out_dir = "runs/default";
  std::uint64_t seed = 1;
  Source source = Source::kSynthetic;

  // Synthetic target domain; the source domain reuses it with its own seed
  // and `source_num_docs` documents.
  SyntheticDomainSpec target;
  std::size_t source_num_docs = 5000;
  PseudoQueryOptions train_queries{1, 0.1, 0, {6, 12}, 1000, "genq"};
  std::size_t source_num_queries = 2000;
  PseudoQueryOptions test_queries{1, 0.2, 0, {4, 8}, 300, "testq"};

  // BEIR-style inputs.
  std::string beir_corpus, beir_train_queries, beir_test_queries, beir_qrels, beir_vocab, teacher_table;

  Index hidden_dim = 32;
  Index out_dim = 32;
  std::int64_t base_steps = 2000;
  std::string base_checkpoint;  // required for BEIR sources
  /// Initial miner slot: "base", "bm25" or a checkpoint path.
  std::string miner = "base";

  TrainConfig train;
  OracleConfig oracle{10.0, 0.5, 0};
  RelevanceThresholds thresholds;

  std::size_t eval_depth = kDefaultRunDepth;
  std::vector<std::string> metrics{"ndcg@10", "success@5"};
  std::vector<std::int64_t> sweep_k{333, 1000, 1667, 3333};

  static ExperimentConfig load(const std::string& path);
  /// Applies one key; `where` prefixes diagnostics (e.g. "config.txt:12").
  void set(const std::string& key, const std::string& value, const std::string& where = "");
  /// Cross-field checks.
  void validate() const;
  /// Normalised "key = value" listing of every field.
  std::string dump() const;
  std::string hash() const;
  /// Re-derives all component seeds from `seed`.
  void reseed(std::uint64_t master);
};

/// Everything an experiment reads, resident in memory.
struct PreparedData {
  Vocabulary vocab;
  Corpus source_corpus;
  QuerySet source_queries;
  Corpus corpus;
  QuerySet train_queries;
  QuerySet test_queries;
  Qrels qrels;
  TeacherScores teacher;
};

/// Generates both synthetic domains, queries, judgments and the oracle.
PreparedData prepare_synthetic(const ExperimentConfig& config);
/// Loads BEIR-style inputs named by the config.
PreparedData load_beir(const ExperimentConfig& config);

void write_prepared(const PreparedData& data, const std::string& dir);
/// Reads what write_prepared wrote (synthetic) or the BEIR files.
PreparedData load_prepared(const ExperimentConfig& config);

/// Base model: pretrained on the source domain with BM25 negatives.
EncoderParams train_base(const ExperimentConfig& config, const PreparedData& data);

NegativePool mine_bm25_negatives(const Bm25Index& index, const QuerySet& queries, std::size_t pool_size);

/// Initial hard negatives from the configured miner slot.
NegativePool initial_negatives(const ExperimentConfig& config, const PreparedData& data, const EncoderParams& base);

/// GPL when k = 0, R-GPL otherwise.
TrainResult adapt(const ExperimentConfig& config, const PreparedData& data, const EncoderParams& base,
                  const NegativePool& initial_pool, std::int64_t k, const TrainHooks& hooks = {});

struct Evaluation {
  RunFile run;
  std::map<std::string, MetricReport> reports;  // keyed by metric name
};

Evaluation evaluate_model(const ExperimentConfig& config, const PreparedData& data, const EncoderParams& params);
Evaluation evaluate_bm25(const ExperimentConfig& config, const PreparedData& data);

// Command implementations behind the CLI. Each writes into config.out_dir
// and returns a short human-readable summary.
std::string cmd_prepare(const ExperimentConfig& config);
std::string cmd_train(const ExperimentConfig& config, const std::string& mode);
std::string cmd_eval(const ExperimentConfig& config, const std::string& checkpoint, const std::string& compare_report,
                     const std::string& out_subdir);
std::string cmd_sweep(const ExperimentConfig& config, const std::vector<std::int64_t>& ks);
std::string cmd_analyze(const ExperimentConfig& config, const std::string& run_subdir);

}  // namespace rgpl
