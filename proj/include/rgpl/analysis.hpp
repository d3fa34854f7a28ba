#pragma once

#include "rgpl/common.hpp"
#include "rgpl/data.hpp"
#include "rgpl/eval.hpp"
#include "rgpl/teacher.hpp"
#include "rgpl/trainer.hpp"

#include <string>
#include <vector>

namespace rgpl {

struct Histogram {
  std::vector<double> bin_edges;  // sorted
  std::vector<std::size_t> counts;
  std::string label;

  std::size_t total() const;
  /// Mean of the scored values (not of the bin centres).
  double value_mean = 0.0;
};

/// `num_bins` equal-width bins over [lo, hi].
std::vector<double> uniform_bin_edges(double lo, double hi, std::size_t num_bins);

/// Histogram of teacher scores of each query's top-n run documents, pooled
/// over queries. Values outside the edges land in the first or last bin;
/// the last bin is closed on the right.
Histogram score_distribution(const RunFile& run, const TeacherScores& teacher, const Corpus& corpus,
                             const QuerySet& queries, std::vector<double> bin_edges, std::size_t top_n = 100,
                             std::string label = {});

struct Series {
  std::vector<std::int64_t> x;
  std::vector<double> y;
  std::vector<double> y_std;  // empty when not applicable
};

/// y'_0 = y_0, y'_t = a*y_t + (1-a)*y'_{t-1}, a = 2/(window+1).
Series ema_smooth(const Series& series, std::size_t window = 50);

/// Mean (and standard deviation) of teacher scores of the top-n pool
/// members of a random sample of queries, one point per mining round:
/// x = 0 is the initial pools, x = t the t-th remining.
Series negative_relevancy_series(const TrainLog& log, const TeacherScores& teacher, const Corpus& corpus,
                                 const QuerySet& queries, std::size_t sample_queries = 1000, std::size_t top_n = 50,
                                 std::uint64_t seed = 0);

struct Projection2d {
  MatrixXd coords;               // one row per input point, query last
  Eigen::Vector2d axis_variance;  // variance along each projected axis
};

/// PCA onto the two leading variance directions of the documents plus the
/// query. Each axis is oriented so that its largest-magnitude coordinate is
/// positive.
Projection2d project_embeddings_2d(const MatrixXd& embeddings, const VectorXd& query_embedding);

struct MarginSeries {
  Series teacher_margin;
  Series loss;
  std::vector<std::int64_t> refresh_steps;
};

MarginSeries margin_series(const TrainLog& log);

// CSV writers. Series: "x,y[,y_std]"; histogram: "bin_lo,bin_hi,count";
// projection: "index,kind,pc1,pc2".
void save_series_csv(const Series& series, const std::string& path, const std::string& x_name = "x",
                     const std::string& y_name = "y");
void save_histogram_csv(const Histogram& histogram, const std::string& path);
void save_projection_csv(const Projection2d& projection, const std::vector<std::string>& labels,
                         const std::string& path);

}  // namespace rgpl
