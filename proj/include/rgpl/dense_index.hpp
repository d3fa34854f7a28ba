#pragma once

#include "rgpl/common.hpp"
#include "rgpl/data.hpp"
#include "rgpl/encoder.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace rgpl {

/// Frozen document embeddings produced by one encoder state. Refreshing
/// means building a new snapshot; search never mutates one.
class IndexSnapshot {
 public:
  IndexSnapshot() = default;
  IndexSnapshot(std::vector<std::string> doc_ids, MatrixXd embeddings, std::int64_t built_at_step,
                std::string encoder_checkpoint_hash);

  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const MatrixXd& embeddings() const { return embeddings_; }
  std::int64_t built_at_step() const { return built_at_step_; }
  const std::string& encoder_checkpoint_hash() const { return encoder_hash_; }
  std::size_t size() const { return doc_ids_.size(); }
  Index dim() const { return embeddings_.cols(); }

  /// Rank of each row's doc id in ascending lexicographic order (tie-breaks).
  const std::vector<std::uint32_t>& id_order() const { return id_order_; }

  /// Hash over doc ids and embedding bytes.
  std::string content_hash() const;

  void save(const std::string& path) const;
  static IndexSnapshot load(const std::string& path);

 private:
  std::vector<std::string> doc_ids_;
  MatrixXd embeddings_;
  std::int64_t built_at_step_ = 0;
  std::string encoder_hash_;
  std::vector<std::uint32_t> id_order_;
};

/// Encodes every (tokenized) document with `params`. Document encoding runs
/// across worker threads; each row depends only on its own document.
IndexSnapshot build_index(const EncoderParams& params, const Corpus& corpus, std::int64_t step);

/// Top-min(k, N) documents by dot product, descending; equal scores are
/// ordered by ascending doc id.
std::vector<ScoredDoc> search(const IndexSnapshot& index, const VectorXd& query, std::size_t k);

/// Batched search: row i of `queries` is one query embedding.
std::vector<std::vector<ScoredDoc>> search_batch(const IndexSnapshot& index, const MatrixXd& queries, std::size_t k);

/// query id -> hard negatives, best first, the query's positive excluded.
using NegativePool = std::map<std::string, std::vector<ScoredDoc>>;

/// Per query: search k = pool_size + 1 with `params`, drop the source
/// document, keep pool_size.
NegativePool mine_hard_negatives(const IndexSnapshot& index, const QuerySet& queries, const EncoderParams& params,
                                 std::size_t pool_size = 50);

/// Uniform draw from a query's pool.
const std::string& sample_negative(const NegativePool& pool, const std::string& query_id, std::mt19937_64& rng);

/// TSV rows "query_id<TAB>rank<TAB>doc_id<TAB>score", ranks from 1.
void save_pool(const NegativePool& pool, const std::string& path);
NegativePool load_pool(const std::string& path);

/// Encodes all (tokenized) queries; row i belongs to queries[i].
MatrixXd encode_queries(const EncoderParams& params, const QuerySet& queries);

}  // namespace rgpl
