#pragma once

#include "rgpl/common.hpp"
#include "rgpl/data.hpp"
#include "rgpl/dense_index.hpp"
#include "rgpl/encoder.hpp"
#include "rgpl/teacher.hpp"

#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace rgpl {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  std::int64_t total_steps = 10000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  /// Remine every k steps; 0 never remines (static negatives).
  std::int64_t refresh_interval_k = 1000;
  std::size_t pool_size = 50;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 13;
  std::int64_t eval_every = 0;
  /// Score every pool member with the teacher at step 0 and each refresh.
  bool log_pool_scores = true;

  void validate() const;
};

struct Triplet {
  std::string query_id;
  std::string pos_doc_id;
  std::string neg_doc_id;
  double teacher_margin = 0.0;
};

/// Mean over the batch of (student - teacher)^2.
double margin_mse_loss(std::span<const double> student_margins, std::span<const double> teacher_margins);

struct StepRecord {
  std::int64_t step = 0;  // updates completed, from 1
  double loss = 0.0;
  double mean_teacher_margin = 0.0;
  double mean_student_margin = 0.0;
  double mean_abs_margin_gap = 0.0;
  bool operator==(const StepRecord&) const = default;
};

struct RefreshEvent {
  std::int64_t step = 0;
  double mean_teacher_score = 0.0;
  double std_teacher_score = 0.0;
  std::string snapshot_hash;
  bool operator==(const RefreshEvent&) const = default;
};

struct EvalRecord {
  std::int64_t step = 0;
  std::string metric;
  double value = 0.0;
  bool operator==(const EvalRecord&) const = default;
};

/// Pools in force from `step` on: index 0 is the initial mining, index t the
/// t-th remining.
struct PoolDump {
  std::int64_t step = 0;
  std::size_t remine_index = 0;
  NegativePool pool;
  double mean_teacher_score = 0.0;
  double std_teacher_score = 0.0;
  bool operator==(const PoolDump&) const = default;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<RefreshEvent> refreshes;
  std::vector<EvalRecord> evals;
  std::vector<PoolDump> pools;
  bool operator==(const TrainLog&) const = default;
};

/// Line-delimited JSON, one record per line ("type": step|refresh|eval|pool).
/// Pool members go to <dir>/pools_<step>.tsv next to the log file.
void save_train_log(const TrainLog& log, const std::string& path);
TrainLog load_train_log(const std::string& path);

/// Read-only view of the training inputs with ids resolved to positions.
class TrainingData {
 public:
  TrainingData(const Corpus& corpus, const QuerySet& queries, const TeacherScores& teacher);

  const Corpus& corpus() const { return corpus_; }
  const QuerySet& queries() const { return queries_; }
  const TeacherScores& teacher() const { return teacher_; }
  std::size_t positive_of(std::size_t query) const { return positives_[query]; }
  std::size_t doc_position(const std::string& doc_id) const;
  std::size_t query_position(const std::string& query_id) const;

 private:
  const Corpus& corpus_;
  const QuerySet& queries_;
  const TeacherScores& teacher_;
  std::vector<std::size_t> positives_;
};

struct AdamState {
  RowMatrix<double> m_embedding, v_embedding;
  RowMatrix<double> m_projection, v_projection;
  VectorXd m_bias, v_bias;
};

/// Everything the loop mutates. The trainer owns the parameters exclusively.
struct TrainState {
  EncoderParams params;
  TrainConfig config;
  AdamState adam;
  std::int64_t step = 0;
  std::mt19937_64 rng;
  TrainLog log;

  // Epoch-shuffled query order for batch composition.
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  // Current pools as corpus positions, per query position.
  std::vector<std::vector<std::uint32_t>> pool_rows;
  // Teacher margins keyed by (query position, negative position).
  std::unordered_map<std::uint64_t, double> margin_cache;

  TrainState(EncoderParams initial, TrainConfig cfg);
};

/// One optimizer update from the mean MarginMSE gradient of `batch`;
/// appends a StepRecord and returns it.
StepRecord train_step(TrainState& state, const TrainingData& data, std::span<const Triplet> batch);

struct TrainHooks {
  /// Sees every batch right before its update; `step` is the update about
  /// to complete.
  std::function<void(std::int64_t step, std::span<const Triplet> batch)> on_batch;
  std::function<void(const IndexSnapshot& snapshot, const NegativePool& pool)> on_refresh;
  /// Called every eval_every steps; the returned value is logged under `eval_metric`.
  std::function<double(const EncoderParams& params, std::int64_t step)> on_eval;
  std::string eval_metric = "ndcg@10";
};

struct TrainResult {
  EncoderParams params;
  TrainLog log;
};

/// Static negatives: the initial pools are used for the whole run.
TrainResult run_gpl(const TrainConfig& config, const EncoderParams& initial, const NegativePool& initial_pool,
                    const TrainingData& data, const TrainHooks& hooks = {});

/// Negatives remined with the current parameters at every positive multiple
/// of k below total_steps.
TrainResult run_rgpl(const TrainConfig& config, const EncoderParams& initial, const NegativePool& initial_pool,
                     const TrainingData& data, const TrainHooks& hooks = {});

/// Shared loop behind run_gpl/run_rgpl; refresh_interval_k selects the schedule.
TrainResult run_distillation(const TrainConfig& config, const EncoderParams& initial, const NegativePool& initial_pool,
                             const TrainingData& data, const TrainHooks& hooks = {});

/// Mean and standard deviation of teacher scores over every pool member.
std::pair<double, double> pool_teacher_stats(const NegativePool& pool, const TrainingData& data);

}  // namespace rgpl
