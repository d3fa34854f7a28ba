#include "rgpl/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rgpl {

double Bm25Index::idf(TokenId term) const {
  const double df = static_cast<double>(document_frequency(term));
  const double n = static_cast<double>(num_docs);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::size_t Bm25Index::document_frequency(TokenId term) const {
  auto it = postings.find(term);
  return it == postings.end() ? 0 : it->second.size();
}

Bm25Index build_bm25(const Corpus& corpus, const Vocabulary& vocab, double b, double k1) {
  if (corpus.empty()) throw Error("cannot build BM25 over an empty corpus");
  if (b < 0.0 || b > 1.0) throw Error("BM25 b must be in [0, 1]");
  if (!(k1 > 0.0)) throw Error("BM25 k1 must be positive");
  Bm25Index index;
  index.b = b;
  index.k1 = k1;
  index.num_docs = corpus.size();
  std::uint64_t total_len = 0;
  std::unordered_map<TokenId, std::uint32_t> tf;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const Document& doc = corpus[d];
    if (!doc.tokenized) throw Error("document " + doc.id + " is not tokenized");
    tf.clear();
    std::uint32_t len = 0;
    for (TokenId id : doc.tokens.ids) {
      if (vocab.is_special(id)) continue;
      ++tf[id];
      ++len;
    }
    // Sorted terms keep posting lists in document order and the build deterministic.
    std::vector<std::pair<TokenId, std::uint32_t>> terms(tf.begin(), tf.end());
    std::sort(terms.begin(), terms.end());
    for (const auto& [term, count] : terms) index.postings[term].push_back({static_cast<std::uint32_t>(d), count});
    index.doc_ids.push_back(doc.id);
    index.doc_lengths.push_back(len);
    total_len += len;
  }
  index.avg_doc_len = static_cast<double>(total_len) / static_cast<double>(corpus.size());
  std::vector<std::uint32_t> by_id(index.num_docs);
  std::iota(by_id.begin(), by_id.end(), 0u);
  std::sort(by_id.begin(), by_id.end(),
            [&](std::uint32_t a, std::uint32_t c) { return index.doc_ids[a] < index.doc_ids[c]; });
  index.id_order.resize(index.num_docs);
  for (std::uint32_t r = 0; r < by_id.size(); ++r) index.id_order[by_id[r]] = r;
  return index;
}

std::vector<ScoredDoc> bm25_search(const Bm25Index& index, const TokenSeq& query, std::size_t k) {
  if (k < 1) throw Error("bm25_search: k must be >= 1");
  std::vector<double> scores(index.num_docs, 0.0);
  // avg_doc_len is 0 only when every document is empty; no postings exist then.
  const double avg = index.avg_doc_len > 0.0 ? index.avg_doc_len : 1.0;
  for (std::size_t i = 0; i < query.ids.size(); ++i) {
    auto it = index.postings.find(query.ids[i]);
    if (it == index.postings.end()) continue;
    const double idf = index.idf(query.ids[i]);
    for (const Posting& p : it->second) {
      const double tf = p.tf;
      const double norm = index.k1 * (1.0 - index.b + index.b * index.doc_lengths[p.doc] / avg);
      scores[p.doc] += idf * tf / (tf + norm);
    }
  }
  const std::size_t n = index.num_docs;
  k = std::min(k, n);
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.id_order[a] < index.id_order[b];
  };
  if (k < n) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
  }
  std::sort(idx.begin(), idx.end(), better);
  std::vector<ScoredDoc> out;
  out.reserve(k);
  for (std::uint32_t i : idx) out.push_back({index.doc_ids[i], scores[i]});
  return out;
}

}  // namespace rgpl
