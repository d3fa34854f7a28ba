#include "rgpl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

namespace rgpl {

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::vector<double> uniform_bin_edges(double lo, double hi, std::size_t num_bins) {
  if (num_bins < 1 || !(hi > lo)) throw Error("histogram needs at least one bin over a non-empty range");
  std::vector<double> edges(num_bins + 1);
  for (std::size_t i = 0; i <= num_bins; ++i) {
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(num_bins);
  }
  return edges;
}

Histogram score_distribution(const RunFile& run, const TeacherScores& teacher, const Corpus& corpus,
                             const QuerySet& queries, std::vector<double> bin_edges, std::size_t top_n,
                             std::string label) {
  if (bin_edges.size() < 2 || !std::is_sorted(bin_edges.begin(), bin_edges.end())) {
    throw Error("histogram edges must be sorted with at least two entries");
  }
  Histogram h;
  h.bin_edges = std::move(bin_edges);
  h.counts.assign(h.bin_edges.size() - 1, 0);
  h.label = std::move(label);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [qid, docs] : run) {
    const Query& q = queries.at(qid);
    const std::size_t depth = std::min(top_n, docs.size());
    for (std::size_t i = 0; i < depth; ++i) {
      const double s = teacher.score(q, corpus.at(docs[i].doc_id));
      auto it = std::upper_bound(h.bin_edges.begin(), h.bin_edges.end(), s);
      std::size_t bin = it == h.bin_edges.begin() ? 0 : static_cast<std::size_t>(it - h.bin_edges.begin()) - 1;
      bin = std::min(bin, h.counts.size() - 1);
      ++h.counts[bin];
      sum += s;
      ++n;
    }
  }
  h.value_mean = n ? sum / static_cast<double>(n) : 0.0;
  return h;
}

Series ema_smooth(const Series& series, std::size_t window) {
  if (window < 1) throw Error("ema window must be >= 1");
  Series out;
  out.x = series.x;
  if (series.y.empty()) return out;
  const double alpha = 2.0 / (static_cast<double>(window) + 1.0);
  out.y.resize(series.y.size());
  out.y[0] = series.y[0];
  for (std::size_t t = 1; t < series.y.size(); ++t) out.y[t] = alpha * series.y[t] + (1.0 - alpha) * out.y[t - 1];
  return out;
}

Series negative_relevancy_series(const TrainLog& log, const TeacherScores& teacher, const Corpus& corpus,
                                 const QuerySet& queries, std::size_t sample_queries, std::size_t top_n,
                                 std::uint64_t seed) {
  if (log.pools.empty()) throw Error("train log has no pool dump for step 0");
  const std::size_t expected = log.refreshes.size() + 1;
  for (std::size_t t = 0; t < expected; ++t) {
    const std::int64_t step = t == 0 ? 0 : log.refreshes[t - 1].step;
    const bool found = t < log.pools.size() && log.pools[t].step == step && !log.pools[t].pool.empty();
    if (!found) throw Error("train log lacks the pool dump for step " + std::to_string(step));
  }
  // One fixed query sample across all rounds.
  std::vector<std::string> ids;
  for (const auto& [qid, docs] : log.pools[0].pool) ids.push_back(qid);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  if (ids.size() > sample_queries) ids.resize(sample_queries);
  std::sort(ids.begin(), ids.end());

  Series series;
  for (std::size_t t = 0; t < expected; ++t) {
    const auto& pool = log.pools[t].pool;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (const auto& qid : ids) {
      auto it = pool.find(qid);
      if (it == pool.end()) continue;
      const Query& q = queries.at(qid);
      const std::size_t depth = std::min(top_n, it->second.size());
      for (std::size_t i = 0; i < depth; ++i) {
        const double s = teacher.score(q, corpus.at(it->second[i].doc_id));
        sum += s;
        sum_sq += s * s;
        ++n;
      }
    }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    const double var = n ? std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean) : 0.0;
    series.x.push_back(static_cast<std::int64_t>(t));
    series.y.push_back(mean);
    series.y_std.push_back(std::sqrt(var));
  }
  return series;
}

Projection2d project_embeddings_2d(const MatrixXd& embeddings, const VectorXd& query_embedding) {
  if (query_embedding.size() != embeddings.cols()) throw Error("query and document embeddings differ in dimension");
  const Index n = embeddings.rows() + 1;
  if (n < 3) throw Error("projection needs at least 3 points");
  MatrixXd points(n, embeddings.cols());
  points.topRows(embeddings.rows()) = embeddings;
  points.row(n - 1) = query_embedding.transpose();

  bool distinct = false;
  for (Index i = 1; i < n && !distinct; ++i) distinct = points.row(i) != points.row(0);
  if (!distinct) throw Error("projection needs at least 2 distinct points");

  const Eigen::RowVectorXd mean = points.colwise().mean();
  const MatrixXd centered = points.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition failed");

  // Eigenvalues ascend; take the last two. With a 1-d embedding space the
  // second axis is identically zero.
  const Index d = cov.rows();
  Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(d, 2);
  Projection2d out;
  for (int a = 0; a < 2; ++a) {
    const Index col = d - 1 - a;
    if (col < 0) {
      out.axis_variance[a] = 0.0;
      continue;
    }
    axes.col(a) = solver.eigenvectors().col(col);
    out.axis_variance[a] = std::max(0.0, solver.eigenvalues()[col]);
  }
  out.coords = centered * axes;
  for (int a = 0; a < 2; ++a) {
    Index arg = 0;
    out.coords.col(a).cwiseAbs().maxCoeff(&arg);
    if (out.coords(arg, a) < 0.0) out.coords.col(a) *= -1.0;
  }
  return out;
}

MarginSeries margin_series(const TrainLog& log) {
  MarginSeries out;
  for (const auto& r : log.steps) {
    out.teacher_margin.x.push_back(r.step);
    out.teacher_margin.y.push_back(r.mean_teacher_margin);
    out.loss.x.push_back(r.step);
    out.loss.y.push_back(r.loss);
  }
  for (const auto& e : log.refreshes) out.refresh_steps.push_back(e.step);
  return out;
}

void save_series_csv(const Series& series, const std::string& path, const std::string& x_name,
                     const std::string& y_name) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << std::setprecision(17);
  const bool with_std = !series.y_std.empty();
  out << x_name << ',' << y_name << (with_std ? "," + y_name + "_std" : "") << '\n';
  for (std::size_t i = 0; i < series.y.size(); ++i) {
    out << series.x[i] << ',' << series.y[i];
    if (with_std) out << ',' << series.y_std[i];
    out << '\n';
  }
}

void save_histogram_csv(const Histogram& histogram, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << std::setprecision(17) << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < histogram.counts.size(); ++i) {
    out << histogram.bin_edges[i] << ',' << histogram.bin_edges[i + 1] << ',' << histogram.counts[i] << '\n';
  }
}

void save_projection_csv(const Projection2d& projection, const std::vector<std::string>& labels,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << std::setprecision(17) << "index,kind,pc1,pc2\n";
  for (Index i = 0; i < projection.coords.rows(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    const std::string kind = i + 1 == projection.coords.rows() ? "query" : (u < labels.size() ? labels[u] : "doc");
    out << i << ',' << kind << ',' << projection.coords(i, 0) << ',' << projection.coords(i, 1) << '\n';
  }
}

}  // namespace rgpl
