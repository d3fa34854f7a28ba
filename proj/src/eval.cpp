#include "rgpl/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rgpl {

RunFile produce_run(const EncoderParams& params, const IndexSnapshot& index, const QuerySet& queries,
                    std::size_t depth) {
  if (depth < 1) throw Error("run depth must be >= 1");
  const MatrixXd q_emb = encode_queries(params, queries);
  auto ranked = search_batch(index, q_emb, depth);
  RunFile run;
  for (std::size_t i = 0; i < queries.size(); ++i) run.emplace(queries[i].id, std::move(ranked[i]));
  return run;
}

void save_run(const RunFile& run, const std::string& path, const std::string& tag) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write run " + path);
  out << std::setprecision(17);
  for (const auto& [qid, docs] : run) {
    for (std::size_t r = 0; r < docs.size(); ++r) {
      out << qid << " Q0 " << docs[r].doc_id << ' ' << r + 1 << ' ' << docs[r].score << ' ' << tag << '\n';
    }
  }
}

RunFile load_run(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open run " + path);
  std::map<std::string, std::vector<std::pair<long, ScoredDoc>>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string qid, q0, did, tag;
    long rank = 0;
    std::string score_text;
    if (!(fields >> qid)) continue;
    if (!(fields >> q0 >> did >> rank >> score_text >> tag)) {
      throw Error("malformed run line " + std::to_string(line_no) + " of " + path);
    }
    double score = 0.0;
    auto [ptr, ec] = std::from_chars(score_text.data(), score_text.data() + score_text.size(), score);
    if (ec != std::errc()) throw Error("malformed score at run line " + std::to_string(line_no));
    rows[qid].push_back({rank, {did, score}});
  }
  RunFile run;
  for (auto& [qid, entries] : rows) {
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& docs = run[qid];
    for (auto& e : entries) docs.push_back(std::move(e.second));
  }
  return run;
}

namespace {

// Shared bookkeeping for per-query metrics: decides which run queries are
// scored and hands judged ones to `per_query`.
template <typename Fn>
MetricReport evaluate(const std::string& metric, std::size_t k, const RunFile& run, const Qrels& qrels,
                      Diagnostics* diag, Fn&& per_query) {
  if (k < 1) throw Error(metric + ": cutoff must be >= 1");
  MetricReport report;
  report.metric = metric;
  report.cutoff = k;
  for (const auto& [qid, docs] : run) {
    auto it = qrels.find(qid);
    if (it == qrels.end()) {
      report.unjudged_queries.push_back(qid);
      continue;
    }
    const bool any_relevant =
        std::any_of(it->second.begin(), it->second.end(), [](const auto& kv) { return kv.second > 0; });
    if (!any_relevant) {
      report.zero_judgment_queries.push_back(qid);
      continue;
    }
    report.per_query.emplace(qid, per_query(docs, it->second));
  }
  if (!report.unjudged_queries.empty()) {
    warn(diag, std::to_string(report.unjudged_queries.size()) + " run queries have no judgments and were excluded from " +
                   report.name());
  }
  double sum = 0.0;
  for (const auto& [qid, v] : report.per_query) sum += v;
  report.aggregate = report.per_query.empty() ? 0.0 : sum / static_cast<double>(report.per_query.size());
  return report;
}

int grade_of(const std::map<std::string, int>& judged, const std::string& doc) {
  auto it = judged.find(doc);
  return it == judged.end() ? 0 : it->second;
}

}  // namespace

MetricReport ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k, Diagnostics* diag) {
  return evaluate("ndcg", k, run, qrels, diag,
                  [k](const std::vector<ScoredDoc>& docs, const std::map<std::string, int>& judged) {
                    double dcg = 0.0;
                    const std::size_t depth = std::min(k, docs.size());
                    for (std::size_t i = 0; i < depth; ++i) {
                      const int rel = grade_of(judged, docs[i].doc_id);
                      if (rel > 0) dcg += (std::exp2(rel) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
                    }
                    std::vector<int> grades;
                    for (const auto& [doc, g] : judged) grades.push_back(g);
                    std::sort(grades.begin(), grades.end(), std::greater<>());
                    double idcg = 0.0;
                    for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) {
                      if (grades[i] > 0) idcg += (std::exp2(grades[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
                    }
                    return idcg > 0.0 ? dcg / idcg : 0.0;
                  });
}

MetricReport success_at_k(const RunFile& run, const Qrels& qrels, std::size_t k, Diagnostics* diag) {
  return evaluate("success", k, run, qrels, diag,
                  [k](const std::vector<ScoredDoc>& docs, const std::map<std::string, int>& judged) {
                    const std::size_t depth = std::min(k, docs.size());
                    for (std::size_t i = 0; i < depth; ++i) {
                      if (grade_of(judged, docs[i].doc_id) >= 1) return 1.0;
                    }
                    return 0.0;
                  });
}

MetricReport evaluate_metric(const std::string& spec, const RunFile& run, const Qrels& qrels, Diagnostics* diag) {
  const auto at = spec.find('@');
  if (at == std::string::npos) throw Error("metric '" + spec + "' must look like name@k");
  const std::string name = spec.substr(0, at);
  std::size_t k = 0;
  const std::string cutoff = spec.substr(at + 1);
  auto [ptr, ec] = std::from_chars(cutoff.data(), cutoff.data() + cutoff.size(), k);
  if (ec != std::errc() || ptr != cutoff.data() + cutoff.size() || k < 1) {
    throw Error("metric '" + spec + "' has an invalid cutoff");
  }
  if (name == "ndcg") return ndcg_at_k(run, qrels, k, diag);
  if (name == "success") return success_at_k(run, qrels, k, diag);
  throw Error("unknown metric '" + name + "' (expected ndcg or success)");
}

void save_report_tsv(const MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write report " + path);
  out << std::setprecision(17);
  out << "query_id\t" << report.name() << '\n';
  for (const auto& [qid, v] : report.per_query) out << qid << '\t' << v << '\n';
}

MetricReport load_report_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open report " + path);
  std::string header;
  if (!std::getline(in, header)) throw Error("empty report " + path);
  const auto tab = header.find('\t');
  const auto at = header.find('@');
  if (tab == std::string::npos || at == std::string::npos || at < tab) throw Error("bad report header in " + path);
  MetricReport report;
  report.metric = header.substr(tab + 1, at - tab - 1);
  report.cutoff = std::stoul(header.substr(at + 1));
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t = line.find('\t');
    if (t == std::string::npos) throw Error("malformed report line " + std::to_string(line_no) + " of " + path);
    double v = 0.0;
    const std::string text = line.substr(t + 1);
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc()) throw Error("malformed value at report line " + std::to_string(line_no));
    report.per_query.emplace(line.substr(0, t), v);
  }
  double sum = 0.0;
  for (const auto& [q, v] : report.per_query) sum += v;
  report.aggregate = report.per_query.empty() ? 0.0 : sum / static_cast<double>(report.per_query.size());
  return report;
}

void save_report_json(const MetricReport& report, const std::string& path) {
  nlohmann::json j{{"metric", report.name()},
                   {"aggregate", report.aggregate},
                   {"num_queries", report.per_query.size()},
                   {"zero_judgment_queries", report.zero_judgment_queries},
                   {"unjudged_queries", report.unjudged_queries}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write report " + path);
  out << j.dump(2) << '\n';
}

WilcoxonResult wilcoxon_one_sided(std::span<const double> a, std::span<const double> b, Diagnostics* diag) {
  if (a.size() != b.size()) {
    throw Error("wilcoxon: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " paired values");
  }
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult result;
  result.n = diffs.size();
  if (diffs.empty()) {
    warn(diag, "wilcoxon: all paired differences are zero; p = 1");
    result.p_value = 1.0;
    result.point_mass = 1.0;
    return result;
  }
  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });
  // Doubled average ranks are integers: a tie group over positions i..j-1
  // (1-based ranks i+1..j) has doubled rank i + j + 1.
  std::vector<long> rank2(n);
  double tie_term = 0.0;  // sum of t^3 - t over tie groups
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
    for (std::size_t m = i; m < j; ++m) rank2[order[m]] = static_cast<long>(i + j + 1);
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (diffs[i] > 0) w2 += rank2[i];
  }
  result.statistic = static_cast<double>(w2) / 2.0;

  if (n <= kWilcoxonExactLimit) {
    // counts[s] = number of sign assignments whose positive doubled ranks sum to s.
    long total = 0;
    for (long r : rank2) total += r;
    std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long r : rank2) {
      for (long s = reach; s >= 0; --s) {
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
      }
      reach += r;
    }
    double upper = 0.0;
    for (long s = w2; s <= total; ++s) upper += counts[static_cast<std::size_t>(s)];
    const double all = std::ldexp(1.0, static_cast<int>(n));
    result.exact = true;
    result.p_value = upper / all;
    result.point_mass = counts[static_cast<std::size_t>(w2)] / all;
    return result;
  }
  const double nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
  const double z = (result.statistic - mean - 0.5) / std::sqrt(var);
  result.exact = false;
  result.p_value = 0.5 * std::erfc(z / std::sqrt(2.0));
  return result;
}

WilcoxonResult compare_reports(const MetricReport& a, const MetricReport& b, Diagnostics* diag) {
  if (a.per_query.size() != b.per_query.size()) {
    throw Error("cannot pair reports over " + std::to_string(a.per_query.size()) + " and " +
                std::to_string(b.per_query.size()) + " queries");
  }
  std::vector<double> va, vb;
  for (const auto& [qid, v] : a.per_query) {
    auto it = b.per_query.find(qid);
    if (it == b.per_query.end()) throw Error("query " + qid + " missing from the second report");
    va.push_back(v);
    vb.push_back(it->second);
  }
  return wilcoxon_one_sided(va, vb, diag);
}

void save_significance_json(const WilcoxonResult& result, const std::string& path) {
  nlohmann::json j{{"test", "wilcoxon_signed_rank_one_sided"},
                   {"alternative", "greater"},
                   {"p_value", result.p_value},
                   {"n", result.n},
                   {"statistic", result.statistic},
                   {"method", result.exact ? "exact" : "normal"}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace rgpl
