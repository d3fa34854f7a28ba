#include "rgpl/teacher.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace rgpl {

namespace {

std::string pair_key(const std::string& q, const std::string& d) {
  std::string key;
  key.reserve(q.size() + d.size() + 1);
  key += q;
  key.push_back('\0');
  key += d;
  return key;
}

}  // namespace

TeacherScores TeacherScores::oracle(OracleConfig config) {
  if (!(config.noise_sigma >= 0.0)) throw Error("oracle noise_sigma must be non-negative");
  TeacherScores t;
  t.mode_ = Mode::kOracle;
  t.oracle_ = config;
  return t;
}

TeacherScores TeacherScores::table(std::vector<std::pair<std::pair<std::string, std::string>, double>> entries) {
  TeacherScores t;
  t.mode_ = Mode::kTable;
  for (auto& [pair, value] : entries) {
    if (!std::isfinite(value)) throw Error("non-finite teacher score for (" + pair.first + ", " + pair.second + ")");
    auto [it, inserted] = t.table_.emplace(pair_key(pair.first, pair.second), value);
    if (!inserted) throw Error("duplicate teacher score for (" + pair.first + ", " + pair.second + ")");
  }
  return t;
}

double keyed_gaussian(const std::string& query_id, const std::string& doc_id, std::uint64_t seed) {
  std::uint64_t state = fnv1a64(pair_key(query_id, doc_id)) ^ splitmix64(seed);
  const double u1 = splitmix_uniform(state);
  const double u2 = splitmix_uniform(state);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double TeacherScores::score(const Query& q, const Document& d) const {
  if (mode_ == Mode::kTable) {
    auto it = table_.find(pair_key(q.id, d.id));
    if (it == table_.end()) throw Error("no teacher score for (" + q.id + ", " + d.id + ")");
    return it->second;
  }
  if (!q.latent_topic) throw Error("query " + q.id + " has no latent topic for the oracle teacher");
  if (!d.latent_topic) throw Error("document " + d.id + " has no latent topic for the oracle teacher");
  const VectorXd& a = *q.latent_topic;
  const VectorXd& b = *d.latent_topic;
  if (a.size() != b.size()) throw Error("latent topic dimension mismatch for (" + q.id + ", " + d.id + ")");
  const double denom = a.norm() * b.norm();
  const double cos = denom > 0.0 ? a.dot(b) / denom : 0.0;
  double value = oracle_.weight * cos;
  if (oracle_.noise_sigma > 0.0) value += oracle_.noise_sigma * keyed_gaussian(q.id, d.id, oracle_.seed);
  return value;
}

double TeacherScores::margin(const Query& q, const Document& pos, const Document& neg) const {
  return score(q, pos) - score(q, neg);
}

TeacherScores load_teacher_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open teacher table " + path);
  std::vector<std::pair<std::pair<std::string, std::string>, double>> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string qid, did, value_text, extra;
    if (!std::getline(fields, qid, '\t') || !std::getline(fields, did, '\t') || !std::getline(fields, value_text, '\t') ||
        std::getline(fields, extra, '\t')) {
      throw Error("malformed teacher row at line " + std::to_string(line_no) + " of " + path);
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(value_text.data(), value_text.data() + value_text.size(), value);
    if (ec != std::errc() || ptr != value_text.data() + value_text.size()) {
      throw Error("malformed teacher score at line " + std::to_string(line_no) + " of " + path);
    }
    entries.push_back({{qid, did}, value});
  }
  return TeacherScores::table(std::move(entries));
}

void save_teacher_table(const std::vector<std::pair<std::pair<std::string, std::string>, double>>& entries,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write teacher table " + path);
  out << std::setprecision(17);
  for (const auto& [pair, value] : entries) out << pair.first << '\t' << pair.second << '\t' << value << '\n';
}

}  // namespace rgpl
