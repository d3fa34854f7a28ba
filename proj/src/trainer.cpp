#include "rgpl/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace rgpl {

void TrainConfig::validate() const {
  if (total_steps < 0) throw Error("total_steps must be non-negative");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (refresh_interval_k < 0) throw Error("refresh_interval_k must be >= 0");
  if (pool_size < 1) throw Error("pool_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw Error("learning_rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error("adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw Error("adam eps must be positive");
  if (eval_every < 0) throw Error("eval_every must be non-negative");
}

double margin_mse_loss(std::span<const double> student_margins, std::span<const double> teacher_margins) {
  if (student_margins.size() != teacher_margins.size()) {
    throw Error("margin_mse_loss: " + std::to_string(student_margins.size()) + " student vs " +
                std::to_string(teacher_margins.size()) + " teacher margins");
  }
  if (student_margins.empty()) throw Error("margin_mse_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < student_margins.size(); ++i) {
    const double d = student_margins[i] - teacher_margins[i];
    sum += d * d;
  }
  return sum / static_cast<double>(student_margins.size());
}

TrainingData::TrainingData(const Corpus& corpus, const QuerySet& queries, const TeacherScores& teacher)
    : corpus_(corpus), queries_(queries), teacher_(teacher) {
  positives_.reserve(queries.size());
  for (const auto& q : queries) {
    if (!q.tokenized) throw Error("query " + q.id + " is not tokenized");
    if (!q.source_doc_id) throw Error("query " + q.id + " has no source document");
    const auto pos = corpus.position(*q.source_doc_id);
    if (!pos) throw Error("query " + q.id + " references unknown document " + *q.source_doc_id);
    if (!corpus[*pos].tokenized) throw Error("document " + corpus[*pos].id + " is not tokenized");
    positives_.push_back(*pos);
  }
}

std::size_t TrainingData::doc_position(const std::string& doc_id) const {
  const auto pos = corpus_.position(doc_id);
  if (!pos) throw Error("unknown document " + doc_id);
  if (!corpus_[*pos].tokenized) throw Error("document " + doc_id + " is not tokenized");
  return *pos;
}

std::size_t TrainingData::query_position(const std::string& query_id) const {
  const auto pos = queries_.position(query_id);
  if (!pos) throw Error("unknown query " + query_id);
  return *pos;
}

TrainState::TrainState(EncoderParams initial, TrainConfig cfg)
    : params(std::move(initial)), config(cfg), rng(cfg.seed) {
  config.validate();
  params.validate();
  adam.m_embedding = RowMatrix<double>::Zero(params.vocab_size(), params.hidden_dim());
  adam.v_embedding = adam.m_embedding;
  adam.m_projection = RowMatrix<double>::Zero(params.out_dim(), params.hidden_dim());
  adam.v_projection = adam.m_projection;
  adam.m_bias = VectorXd::Zero(params.out_dim());
  adam.v_bias = adam.m_bias;
}

namespace {

struct ResolvedTriplet {
  std::size_t query = 0;
  std::size_t pos = 0;
  std::size_t neg = 0;
  double teacher_margin = 0.0;
};

/// Batch gradient buffers. Embedding rows are dense but only the touched
/// rows are read or cleared.
class BatchAccumulator final : public GradientSink<double> {
 public:
  explicit BatchAccumulator(const EncoderParams& p)
      : embedding(RowMatrix<double>::Zero(p.vocab_size(), p.hidden_dim())),
        projection(RowMatrix<double>::Zero(p.out_dim(), p.hidden_dim())),
        bias(VectorXd::Zero(p.out_dim())),
        touched_flag(static_cast<std::size_t>(p.vocab_size()), 0) {}

  void add_embedding_row(TokenId row, const VectorXd& g) override {
    if (!touched_flag[static_cast<std::size_t>(row)]) {
      touched_flag[static_cast<std::size_t>(row)] = 1;
      touched.push_back(row);
    }
    embedding.row(row) += g.transpose();
  }
  void add_projection_outer(const VectorXd& u, const VectorXd& v) override {
    projection.noalias() += u * v.transpose();
  }
  void add_bias(const VectorXd& g) override { bias += g; }

  void reset() {
    for (TokenId r : touched) {
      embedding.row(r).setZero();
      touched_flag[static_cast<std::size_t>(r)] = 0;
    }
    touched.clear();
    projection.setZero();
    bias.setZero();
  }

  RowMatrix<double> embedding;
  RowMatrix<double> projection;
  VectorXd bias;
  std::vector<TokenId> touched;
  std::vector<char> touched_flag;
};

template <typename Param, typename Grad, typename Moment>
void adam_update(Param&& p, const Grad& g, Moment&& m, Moment&& v, const TrainConfig& c, double lr_t) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  p -= lr_t * (m.array() / (v.array().sqrt() + c.eps)).matrix();
}

void apply_update(TrainState& state, BatchAccumulator& acc) {
  const TrainConfig& c = state.config;
  auto& p = state.params;
  // Sorted rows keep the update order independent of batch composition order.
  std::sort(acc.touched.begin(), acc.touched.end());
  if (c.optimizer == OptimizerKind::kSgd) {
    for (TokenId r : acc.touched) p.embedding.row(r) -= c.learning_rate * acc.embedding.row(r);
    p.projection -= c.learning_rate * acc.projection;
    p.bias -= c.learning_rate * acc.bias;
    return;
  }
  const double t = static_cast<double>(state.step + 1);
  const double lr_t = c.learning_rate * std::sqrt(1.0 - std::pow(c.beta2, t)) / (1.0 - std::pow(c.beta1, t));
  // Embedding rows follow lazy (row-sparse) Adam: moments move only for rows
  // present in the batch.
  for (TokenId r : acc.touched) {
    adam_update(p.embedding.row(r), acc.embedding.row(r), state.adam.m_embedding.row(r),
                state.adam.v_embedding.row(r), c, lr_t);
  }
  adam_update(p.projection, acc.projection, state.adam.m_projection, state.adam.v_projection, c, lr_t);
  adam_update(p.bias, acc.bias, state.adam.m_bias, state.adam.v_bias, c, lr_t);
}

StepRecord train_resolved(TrainState& state, const TrainingData& data, std::span<const ResolvedTriplet> batch,
                          BatchAccumulator& acc) {
  if (batch.empty()) throw Error("train_step: empty batch");
  acc.reset();
  const double weight = 1.0 / static_cast<double>(batch.size());
  std::vector<double> student(batch.size()), teacher(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& t = batch[i];
    const auto pass = backprop_triplet(state.params, data.queries()[t.query].tokens, data.corpus()[t.pos].tokens,
                                       data.corpus()[t.neg].tokens, t.teacher_margin, weight, acc);
    student[i] = pass.student_margin;
    teacher[i] = t.teacher_margin;
  }
  apply_update(state, acc);
  ++state.step;
  state.params.step = state.step;

  StepRecord rec;
  rec.step = state.step;
  rec.loss = margin_mse_loss(student, teacher);
  const double n = static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    rec.mean_teacher_margin += teacher[i] / n;
    rec.mean_student_margin += student[i] / n;
    rec.mean_abs_margin_gap += std::abs(student[i] - teacher[i]) / n;
  }
  state.log.steps.push_back(rec);
  return rec;
}

std::uint64_t pair_key(std::size_t q, std::size_t d) {
  return (static_cast<std::uint64_t>(q) << 32) | static_cast<std::uint64_t>(d);
}

double cached_margin(TrainState& state, const TrainingData& data, std::size_t q, std::size_t pos, std::size_t neg) {
  auto [it, inserted] = state.margin_cache.try_emplace(pair_key(q, neg), 0.0);
  if (inserted) it->second = data.teacher().margin(data.queries()[q], data.corpus()[pos], data.corpus()[neg]);
  return it->second;
}

void install_pool(TrainState& state, const TrainingData& data, const NegativePool& pool) {
  state.pool_rows.assign(data.queries().size(), {});
  for (std::size_t q = 0; q < data.queries().size(); ++q) {
    const auto& qid = data.queries()[q].id;
    auto it = pool.find(qid);
    if (it == pool.end()) throw Error("no negative pool entry for query " + qid);
    if (it->second.empty()) throw Error("empty negative pool for query " + qid);
    auto& rows = state.pool_rows[q];
    rows.reserve(it->second.size());
    for (const auto& hit : it->second) {
      const std::size_t d = data.doc_position(hit.doc_id);
      if (d == data.positive_of(q)) throw Error("negative pool of query " + qid + " contains its positive");
      rows.push_back(static_cast<std::uint32_t>(d));
    }
  }
}

std::vector<ResolvedTriplet> sample_batch(TrainState& state, const TrainingData& data) {
  const std::size_t nq = data.queries().size();
  std::vector<ResolvedTriplet> batch;
  batch.reserve(state.config.batch_size);
  for (std::size_t i = 0; i < state.config.batch_size; ++i) {
    if (state.cursor == state.order.size()) {
      state.order.resize(nq);
      std::iota(state.order.begin(), state.order.end(), std::size_t{0});
      std::shuffle(state.order.begin(), state.order.end(), state.rng);
      state.cursor = 0;
    }
    const std::size_t q = state.order[state.cursor++];
    const auto& rows = state.pool_rows[q];
    std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
    const std::size_t neg = rows[pick(state.rng)];
    const std::size_t pos = data.positive_of(q);
    batch.push_back({q, pos, neg, cached_margin(state, data, q, pos, neg)});
  }
  return batch;
}

std::vector<Triplet> to_public(const std::vector<ResolvedTriplet>& batch, const TrainingData& data) {
  std::vector<Triplet> out;
  out.reserve(batch.size());
  for (const auto& t : batch) {
    out.push_back({data.queries()[t.query].id, data.corpus()[t.pos].id, data.corpus()[t.neg].id, t.teacher_margin});
  }
  return out;
}

PoolDump make_dump(std::int64_t step, std::size_t index, const NegativePool& pool, const TrainingData& data,
                   bool score) {
  PoolDump dump;
  dump.step = step;
  dump.remine_index = index;
  dump.pool = pool;
  if (score) std::tie(dump.mean_teacher_score, dump.std_teacher_score) = pool_teacher_stats(pool, data);
  return dump;
}

}  // namespace

StepRecord train_step(TrainState& state, const TrainingData& data, std::span<const Triplet> batch) {
  std::vector<ResolvedTriplet> resolved;
  resolved.reserve(batch.size());
  for (const auto& t : batch) {
    if (t.pos_doc_id == t.neg_doc_id) throw Error("triplet for " + t.query_id + " uses one document as both sides");
    if (!std::isfinite(t.teacher_margin)) throw Error("non-finite teacher margin for " + t.query_id);
    resolved.push_back({data.query_position(t.query_id), data.doc_position(t.pos_doc_id),
                        data.doc_position(t.neg_doc_id), t.teacher_margin});
  }
  BatchAccumulator acc(state.params);
  return train_resolved(state, data, resolved, acc);
}

std::pair<double, double> pool_teacher_stats(const NegativePool& pool, const TrainingData& data) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& [qid, docs] : pool) {
    const Query& q = data.queries()[data.query_position(qid)];
    for (const auto& hit : docs) {
      const double s = data.teacher().score(q, data.corpus().at(hit.doc_id));
      sum += s;
      sum_sq += s * s;
      ++n;
    }
  }
  if (n == 0) return {0.0, 0.0};
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var)};
}

TrainResult run_distillation(const TrainConfig& config, const EncoderParams& initial, const NegativePool& initial_pool,
                             const TrainingData& data, const TrainHooks& hooks) {
  config.validate();
  if (data.queries().empty()) throw Error("no training queries");
  TrainState state(initial, config);
  // Validates coverage of every query before any compute.
  install_pool(state, data, initial_pool);
  state.log.pools.push_back(make_dump(0, 0, initial_pool, data, config.log_pool_scores));

  BatchAccumulator acc(state.params);
  const std::int64_t k = config.refresh_interval_k;
  for (std::int64_t s = 0; s < config.total_steps; ++s) {
    if (k > 0 && s > 0 && s % k == 0) {
      const IndexSnapshot snapshot = build_index(state.params, data.corpus(), s);
      const NegativePool pool = mine_hard_negatives(snapshot, data.queries(), state.params, config.pool_size);
      install_pool(state, data, pool);
      auto dump = make_dump(s, state.log.pools.size(), pool, data, config.log_pool_scores);
      state.log.refreshes.push_back({s, dump.mean_teacher_score, dump.std_teacher_score, snapshot.content_hash()});
      state.log.pools.push_back(std::move(dump));
      if (hooks.on_refresh) hooks.on_refresh(snapshot, pool);
    }
    const auto batch = sample_batch(state, data);
    if (hooks.on_batch) {
      const auto visible = to_public(batch, data);
      hooks.on_batch(s + 1, visible);
    }
    train_resolved(state, data, batch, acc);
    if (config.eval_every > 0 && hooks.on_eval && state.step % config.eval_every == 0) {
      state.log.evals.push_back({state.step, hooks.eval_metric, hooks.on_eval(state.params, state.step)});
    }
  }
  return {std::move(state.params), std::move(state.log)};
}

TrainResult run_gpl(const TrainConfig& config, const EncoderParams& initial, const NegativePool& initial_pool,
                    const TrainingData& data, const TrainHooks& hooks) {
  if (config.refresh_interval_k != 0) throw Error("run_gpl expects refresh_interval_k = 0");
  return run_distillation(config, initial, initial_pool, data, hooks);
}

TrainResult run_rgpl(const TrainConfig& config, const EncoderParams& initial, const NegativePool& initial_pool,
                     const TrainingData& data, const TrainHooks& hooks) {
  if (config.refresh_interval_k <= 0) throw Error("run_rgpl expects refresh_interval_k > 0");
  return run_distillation(config, initial, initial_pool, data, hooks);
}

void save_train_log(const TrainLog& log, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(path).parent_path();
  std::ofstream out(path);
  if (!out) throw Error("cannot write train log " + path);
  using nlohmann::json;
  for (const auto& r : log.steps) {
    out << json{{"type", "step"},
                {"step", r.step},
                {"loss", r.loss},
                {"mean_teacher_margin", r.mean_teacher_margin},
                {"mean_student_margin", r.mean_student_margin},
                {"mean_abs_margin_gap", r.mean_abs_margin_gap}}
               .dump()
        << '\n';
  }
  for (const auto& r : log.refreshes) {
    out << json{{"type", "refresh"},
                {"step", r.step},
                {"mean_teacher_score", r.mean_teacher_score},
                {"std_teacher_score", r.std_teacher_score},
                {"snapshot_hash", r.snapshot_hash}}
               .dump()
        << '\n';
  }
  for (const auto& r : log.evals) {
    out << json{{"type", "eval"}, {"step", r.step}, {"metric", r.metric}, {"value", r.value}}.dump() << '\n';
  }
  for (const auto& d : log.pools) {
    const std::string file = "pools_" + std::to_string(d.step) + ".tsv";
    save_pool(d.pool, (dir / file).string());
    out << json{{"type", "pool"},
                {"step", d.step},
                {"remine_index", d.remine_index},
                {"mean_teacher_score", d.mean_teacher_score},
                {"std_teacher_score", d.std_teacher_score},
                {"file", file}}
               .dump()
        << '\n';
  }
}

TrainLog load_train_log(const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(path).parent_path();
  std::ifstream in(path);
  if (!in) throw Error("cannot open train log " + path);
  TrainLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(line);
      const std::string type = r.at("type");
      if (type == "step") {
        log.steps.push_back({r.at("step"), r.at("loss"), r.at("mean_teacher_margin"), r.at("mean_student_margin"),
                             r.at("mean_abs_margin_gap")});
      } else if (type == "refresh") {
        log.refreshes.push_back({r.at("step"), r.at("mean_teacher_score"), r.at("std_teacher_score"),
                                 r.at("snapshot_hash")});
      } else if (type == "eval") {
        log.evals.push_back({r.at("step"), r.at("metric"), r.at("value")});
      } else if (type == "pool") {
        PoolDump d;
        d.step = r.at("step");
        d.remine_index = r.at("remine_index");
        d.mean_teacher_score = r.at("mean_teacher_score");
        d.std_teacher_score = r.at("std_teacher_score");
        const fs::path file = dir / r.at("file").get<std::string>();
        if (fs::exists(file)) d.pool = load_pool(file.string());
        log.pools.push_back(std::move(d));
      } else {
        throw Error("unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed train log record at line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("train log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

}  // namespace rgpl
