#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rgpl {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = RowMatrix<double>;
using VectorXd = Vector<double>;

/// Every recoverable failure in the library surfaces as this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Collects warnings from operations that are loud but not fatal
/// (duplicate qrels rows, queries without judgments, degenerate tests).
/// A null sink writes to stderr.
class Diagnostics {
 public:
  void warn(std::string message);
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool empty() const { return warnings_.empty(); }

 private:
  std::vector<std::string> warnings_;
};

void warn(Diagnostics* diag, std::string message);

/// A document reference with its retrieval score.
struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;

  bool operator==(const ScoredDoc&) const = default;
};

// 64-bit FNV-1a. Stable across platforms, used for content hashes and
// for keying deterministic noise.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64_bytes(const void* data, std::size_t size,
                            std::uint64_t h = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t value);

std::uint64_t splitmix64(std::uint64_t& state);
/// Uniform in (0, 1), never exactly 0.
double splitmix_uniform(std::uint64_t& state);

/// Hash of a whole file's bytes, hex encoded.
std::string hash_file(const std::string& path);

/// Worker count for parallel phases: RGPL_WORKERS if set, else hardware
/// concurrency, at least 1.
unsigned worker_count();

/// Runs body(begin, end) over [0, n) split into contiguous chunks, one per
/// worker. Chunks are disjoint so results written by index are independent
/// of the worker count.
void parallel_for_chunks(Index n, const std::function<void(Index, Index)>& body);

}  // namespace rgpl
