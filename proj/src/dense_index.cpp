#include "rgpl/dense_index.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace rgpl {

IndexSnapshot::IndexSnapshot(std::vector<std::string> doc_ids, MatrixXd embeddings, std::int64_t built_at_step,
                             std::string encoder_checkpoint_hash)
    : doc_ids_(std::move(doc_ids)),
      embeddings_(std::move(embeddings)),
      built_at_step_(built_at_step),
      encoder_hash_(std::move(encoder_checkpoint_hash)) {
  if (static_cast<Index>(doc_ids_.size()) != embeddings_.rows()) {
    throw Error("index snapshot: " + std::to_string(doc_ids_.size()) + " ids for " +
                std::to_string(embeddings_.rows()) + " rows");
  }
  if (built_at_step_ < 0) throw Error("index snapshot: negative build step");
  std::vector<std::uint32_t> by_id(doc_ids_.size());
  std::iota(by_id.begin(), by_id.end(), 0u);
  std::sort(by_id.begin(), by_id.end(), [&](std::uint32_t a, std::uint32_t b) { return doc_ids_[a] < doc_ids_[b]; });
  id_order_.resize(doc_ids_.size());
  for (std::uint32_t r = 0; r < by_id.size(); ++r) id_order_[by_id[r]] = r;
}

std::string IndexSnapshot::content_hash() const {
  std::uint64_t h = fnv1a64(encoder_hash_);
  for (const auto& id : doc_ids_) {
    h = fnv1a64(id, h);
    h = fnv1a64(std::string_view("\0", 1), h);
  }
  h = fnv1a64_bytes(embeddings_.data(), static_cast<std::size_t>(embeddings_.size()) * sizeof(double), h);
  return to_hex(h);
}

namespace {

constexpr char kSnapshotMagic[8] = {'R', 'G', 'P', 'L', 'I', 'D', 'X', '1'};

}  // namespace

// Layout: magic | i64 step | u32 hash length | hash bytes | u64 num_docs |
// i64 dim | per doc (u32 length | bytes) | f64[num_docs*dim] row-major.
void IndexSnapshot::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write snapshot " + path);
  auto put = [&out](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
  put(built_at_step_);
  put(static_cast<std::uint32_t>(encoder_hash_.size()));
  out.write(encoder_hash_.data(), static_cast<std::streamsize>(encoder_hash_.size()));
  put(static_cast<std::uint64_t>(doc_ids_.size()));
  put(static_cast<std::int64_t>(embeddings_.cols()));
  for (const auto& id : doc_ids_) {
    put(static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  out.write(reinterpret_cast<const char*>(embeddings_.data()),
            static_cast<std::streamsize>(embeddings_.size() * sizeof(double)));
  if (!out) throw Error("failed writing snapshot " + path);
}

IndexSnapshot IndexSnapshot::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open snapshot " + path);
  auto read = [&](void* dst, std::size_t n) {
    if (!in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) throw Error("truncated snapshot " + path);
  };
  char magic[8];
  read(magic, sizeof(magic));
  if (std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0) throw Error(path + " is not an rgpl index snapshot");
  std::int64_t step = 0;
  read(&step, sizeof(step));
  std::uint32_t hash_len = 0;
  read(&hash_len, sizeof(hash_len));
  std::string hash(hash_len, '\0');
  read(hash.data(), hash_len);
  std::uint64_t n = 0;
  std::int64_t dim = 0;
  read(&n, sizeof(n));
  read(&dim, sizeof(dim));
  std::vector<std::string> ids(n);
  for (auto& id : ids) {
    std::uint32_t len = 0;
    read(&len, sizeof(len));
    id.resize(len);
    read(id.data(), len);
  }
  MatrixXd emb(static_cast<Index>(n), dim);
  read(emb.data(), static_cast<std::size_t>(emb.size()) * sizeof(double));
  return IndexSnapshot(std::move(ids), std::move(emb), step, std::move(hash));
}

IndexSnapshot build_index(const EncoderParams& params, const Corpus& corpus, std::int64_t step) {
  if (corpus.empty()) throw Error("cannot build an index over an empty corpus");
  const Index n = static_cast<Index>(corpus.size());
  MatrixXd emb(n, params.out_dim());
  std::vector<std::string> ids(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].tokenized) throw Error("document " + corpus[i].id + " is not tokenized");
    ids[i] = corpus[i].id;
  }
  parallel_for_chunks(n, [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      const auto& doc = corpus[static_cast<std::size_t>(i)];
      try {
        emb.row(i) = encode(params, doc.tokens).transpose();
      } catch (const Error& e) {
        throw Error("encoding document " + doc.id + ": " + e.what());
      }
    }
  });
  return IndexSnapshot(std::move(ids), std::move(emb), step, params_hash(params));
}

namespace {

// Selects the top k of one score row under (score desc, id rank asc).
std::vector<ScoredDoc> top_k(const IndexSnapshot& index, const double* scores, std::size_t k) {
  const std::size_t n = index.size();
  k = std::min(k, n);
  const auto& order = index.id_order();
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return order[a] < order[b];
  };
  if (k < n) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
  }
  std::sort(idx.begin(), idx.end(), better);
  std::vector<ScoredDoc> out;
  out.reserve(k);
  for (std::uint32_t i : idx) out.push_back({index.doc_ids()[i], scores[i]});
  return out;
}

}  // namespace

std::vector<ScoredDoc> search(const IndexSnapshot& index, const VectorXd& query, std::size_t k) {
  if (k < 1) throw Error("search: k must be >= 1");
  if (query.size() != index.dim()) {
    throw Error("search: query has dimension " + std::to_string(query.size()) + ", index has " +
                std::to_string(index.dim()));
  }
  const VectorXd scores = index.embeddings() * query;
  return top_k(index, scores.data(), k);
}

std::vector<std::vector<ScoredDoc>> search_batch(const IndexSnapshot& index, const MatrixXd& queries, std::size_t k) {
  if (k < 1) throw Error("search: k must be >= 1");
  if (queries.rows() > 0 && queries.cols() != index.dim()) {
    throw Error("search: query has dimension " + std::to_string(queries.cols()) + ", index has " +
                std::to_string(index.dim()));
  }
  std::vector<std::vector<ScoredDoc>> results(static_cast<std::size_t>(queries.rows()));
  parallel_for_chunks(queries.rows(), [&](Index b0, Index b1) {
    VectorXd scores;
    for (Index r = b0; r < b1; ++r) {
      scores.noalias() = index.embeddings() * queries.row(r).transpose();
      results[static_cast<std::size_t>(r)] = top_k(index, scores.data(), k);
    }
  });
  return results;
}

MatrixXd encode_queries(const EncoderParams& params, const QuerySet& queries) {
  MatrixXd out(static_cast<Index>(queries.size()), params.out_dim());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (!queries[i].tokenized) throw Error("query " + queries[i].id + " is not tokenized");
    out.row(static_cast<Index>(i)) = encode(params, queries[i].tokens).transpose();
  }
  return out;
}

NegativePool mine_hard_negatives(const IndexSnapshot& index, const QuerySet& queries, const EncoderParams& params,
                                 std::size_t pool_size) {
  if (pool_size < 1) throw Error("pool_size must be >= 1");
  for (const auto& q : queries) {
    if (!q.source_doc_id) throw Error("query " + q.id + " has no source document to exclude");
  }
  const MatrixXd q_emb = encode_queries(params, queries);
  const auto ranked = search_batch(index, q_emb, pool_size + 1);
  NegativePool pool;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const std::string& positive = *queries[i].source_doc_id;
    std::vector<ScoredDoc> negatives;
    negatives.reserve(pool_size);
    for (const auto& hit : ranked[i]) {
      if (hit.doc_id == positive) continue;
      if (negatives.size() == pool_size) break;
      negatives.push_back(hit);
    }
    pool.emplace(queries[i].id, std::move(negatives));
  }
  return pool;
}

const std::string& sample_negative(const NegativePool& pool, const std::string& query_id, std::mt19937_64& rng) {
  auto it = pool.find(query_id);
  if (it == pool.end() || it->second.empty()) throw Error("empty negative pool for query " + query_id);
  std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
  return it->second[pick(rng)].doc_id;
}

void save_pool(const NegativePool& pool, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write pool " + path);
  out << std::setprecision(17);
  for (const auto& [qid, docs] : pool) {
    for (std::size_t r = 0; r < docs.size(); ++r) out << qid << '\t' << r + 1 << '\t' << docs[r].doc_id << '\t' << docs[r].score << '\n';
  }
}

NegativePool load_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pool " + path);
  NegativePool pool;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string qid, rank, did, score_text;
    if (!std::getline(fields, qid, '\t') || !std::getline(fields, rank, '\t') || !std::getline(fields, did, '\t') ||
        !std::getline(fields, score_text, '\t')) {
      throw Error("malformed pool row at line " + std::to_string(line_no) + " of " + path);
    }
    double score = 0.0;
    auto [ptr, ec] = std::from_chars(score_text.data(), score_text.data() + score_text.size(), score);
    if (ec != std::errc()) throw Error("malformed pool score at line " + std::to_string(line_no));
    pool[qid].push_back({did, score});
  }
  return pool;
}

}  // namespace rgpl
