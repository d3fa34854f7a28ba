#pragma once

#include "rgpl/common.hpp"
#include "rgpl/data.hpp"

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rgpl {

struct OracleConfig {
  double weight = 10.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Stand-in for the cross-encoder teacher. Either a planted-relevance oracle
/// over latent topics or an exact lookup table of externally computed scores.
class TeacherScores {
 public:
  enum class Mode { kOracle, kTable };

  static TeacherScores oracle(OracleConfig config);
  static TeacherScores table(std::vector<std::pair<std::pair<std::string, std::string>, double>> entries);

  Mode mode() const { return mode_; }
  const OracleConfig& oracle_config() const { return oracle_; }
  std::size_t table_size() const { return table_.size(); }

  /// Oracle: weight * cos(topic(q), topic(d)) + N(0, sigma^2) noise keyed by
  /// (query id, doc id, seed). Table: exact lookup, misses are errors.
  double score(const Query& q, const Document& d) const;
  /// score(q, pos) - score(q, neg)
  double margin(const Query& q, const Document& pos, const Document& neg) const;

 private:
  Mode mode_ = Mode::kOracle;
  OracleConfig oracle_;
  std::unordered_map<std::string, double> table_;
};

inline double teacher_score(const TeacherScores& t, const Query& q, const Document& d) { return t.score(q, d); }
inline double teacher_margin(const TeacherScores& t, const Query& q, const Document& pos, const Document& neg) {
  return t.margin(q, pos, neg);
}

/// Gaussian noise that depends only on (query id, doc id, seed).
double keyed_gaussian(const std::string& query_id, const std::string& doc_id, std::uint64_t seed);

/// TSV rows "query_id<TAB>doc_id<TAB>score".
TeacherScores load_teacher_table(const std::string& path);
void save_teacher_table(const std::vector<std::pair<std::pair<std::string, std::string>, double>>& entries,
                        const std::string& path);

}  // namespace rgpl
