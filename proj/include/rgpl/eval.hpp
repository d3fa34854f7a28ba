#pragma once

#include "rgpl/common.hpp"
#include "rgpl/data.hpp"
#include "rgpl/dense_index.hpp"
#include "rgpl/encoder.hpp"

#include <map>
#include <string>
#include <vector>

namespace rgpl {

/// query id -> ranked documents, best first.
using RunFile = std::map<std::string, std::vector<ScoredDoc>>;

inline constexpr std::size_t kDefaultRunDepth = 100;

/// Dense retrieval of every query against `index`, `depth` documents each.
RunFile produce_run(const EncoderParams& params, const IndexSnapshot& index, const QuerySet& queries,
                    std::size_t depth = kDefaultRunDepth);

/// TREC run lines "qid Q0 docid rank score tag".
void save_run(const RunFile& run, const std::string& path, const std::string& tag = "rgpl");
RunFile load_run(const std::string& path);

struct MetricReport {
  std::string metric;  // "ndcg" or "success"
  std::size_t cutoff = 0;
  std::map<std::string, double> per_query;
  double aggregate = 0.0;  // mean of per_query
  /// Queries whose judgments are all zero; left out of per_query.
  std::vector<std::string> zero_judgment_queries;
  /// Run queries without any judgments; left out of per_query.
  std::vector<std::string> unjudged_queries;

  std::string name() const { return metric + "@" + std::to_string(cutoff); }
};

/// DCG = sum_{i<=k} (2^rel_i - 1) / log2(i + 1); IDCG from the judgments
/// sorted by grade. Queries of the run only.
MetricReport ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k = 10, Diagnostics* diag = nullptr);

/// 1 when a document with grade >= 1 is within the top k.
MetricReport success_at_k(const RunFile& run, const Qrels& qrels, std::size_t k = 5, Diagnostics* diag = nullptr);

/// "ndcg@10", "success@5", ... Throws on an unknown metric.
MetricReport evaluate_metric(const std::string& spec, const RunFile& run, const Qrels& qrels,
                             Diagnostics* diag = nullptr);

void save_report_tsv(const MetricReport& report, const std::string& path);
void save_report_json(const MetricReport& report, const std::string& path);
MetricReport load_report_tsv(const std::string& path);

struct WilcoxonResult {
  double p_value = 1.0;
  std::size_t n = 0;        // non-zero differences
  double statistic = 0.0;   // W+, sum of ranks of positive differences
  bool exact = true;
  /// Probability of observing exactly W+ under the null (exact method only).
  double point_mass = 0.0;
};

/// One-sided signed-rank test of H1: median(a - b) > 0. Zero differences
/// are dropped, tied |differences| share their average rank. Exact null
/// distribution for n <= 25, otherwise the normal approximation with tie
/// correction and continuity correction.
WilcoxonResult wilcoxon_one_sided(std::span<const double> a, std::span<const double> b, Diagnostics* diag = nullptr);

inline constexpr std::size_t kWilcoxonExactLimit = 25;

/// Pairs two reports by query id (both must cover the same queries) and
/// tests a > b.
WilcoxonResult compare_reports(const MetricReport& a, const MetricReport& b, Diagnostics* diag = nullptr);

void save_significance_json(const WilcoxonResult& result, const std::string& path);

}  // namespace rgpl
