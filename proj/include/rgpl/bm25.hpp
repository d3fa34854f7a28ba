#pragma once

#include "rgpl/common.hpp"
#include "rgpl/data.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace rgpl {

struct Posting {
  std::uint32_t doc = 0;  // row in doc_ids
  std::uint32_t tf = 0;
};

/// Okapi BM25 over the shared tokenizer's ids:
///   score(q, d) = sum over query tokens t of
///                 idf(t) * tf / (tf + k1 * (1 - b + b * len_d / avg_len))
///   idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
/// Repeated query tokens contribute once per occurrence.
struct Bm25Index {
  std::unordered_map<TokenId, std::vector<Posting>> postings;
  std::vector<std::string> doc_ids;
  std::vector<std::uint32_t> doc_lengths;
  std::vector<std::uint32_t> id_order;  // tie-break rank of each doc id
  double avg_doc_len = 0.0;
  std::size_t num_docs = 0;
  double b = 0.75;
  double k1 = 1.2;

  double idf(TokenId term) const;
  std::size_t document_frequency(TokenId term) const;
};

/// Indexes every word token; [CLS], [SEP], [PAD] and [UNK] are not terms.
Bm25Index build_bm25(const Corpus& corpus, const Vocabulary& vocab, double b = 0.75, double k1 = 1.2);

/// Descending score, ties by ascending doc id. An all-OOV query scores every
/// document 0.
std::vector<ScoredDoc> bm25_search(const Bm25Index& index, const TokenSeq& query, std::size_t k);

}  // namespace rgpl
