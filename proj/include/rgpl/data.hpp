#pragma once

#include "rgpl/common.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rgpl {

/// Longest sequence the encoder accepts, [CLS] and [SEP] included.
inline constexpr std::size_t kMaxSeqLen = 350;

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kSepToken = "[SEP]";

using TokenId = std::int32_t;

/// Token list file: one token per line, the zero-based line number is the id.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  TokenId cls_id() const { return cls_; }
  TokenId sep_id() const { return sep_; }
  TokenId unk_id() const { return unk_; }
  /// Ids the encoder never pools over.
  std::vector<TokenId> special_ids() const;
  bool is_special(TokenId id) const;

  /// Ids of ordinary words (everything but [PAD]/[UNK]/[CLS]/[SEP]).
  const std::vector<TokenId>& word_ids() const { return word_ids_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> lookup_;
  TokenId cls_ = -1, sep_ = -1, unk_ = -1, pad_ = -1;
  std::vector<TokenId> word_ids_;
};

/// Vocabulary of `size` entries: the four special tokens followed by
/// synthetic words "w0000", "w0001", ...
Vocabulary make_synthetic_vocabulary(std::size_t size);

/// Bounded token sequence, [CLS] first and [SEP] last.
struct TokenSeq {
  std::vector<TokenId> ids;
  bool has_cls = true;
  bool has_sep = true;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSeq&) const = default;
};

/// Lowercases, splits on anything that is not alphanumeric (bytes >= 0x80
/// stay inside words), maps unknown words to [UNK] and truncates so the
/// result, specials included, never exceeds kMaxSeqLen.
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);

/// Words of a sequence joined by single spaces, specials dropped.
std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab);

struct Document {
  std::string id;
  std::string text;
  TokenSeq tokens;
  bool tokenized = false;
  std::optional<VectorXd> latent_topic;
};

struct Query {
  std::string id;
  std::string text;
  TokenSeq tokens;
  bool tokenized = false;
  std::optional<std::string> source_doc_id;
  /// Resolved from the source document for synthetic data; never persisted.
  std::optional<VectorXd> latent_topic;
};

/// Ordered collection with unique ids.
template <typename Item>
class Collection {
 public:
  void add(Item item) {
    auto [it, inserted] = index_.emplace(item.id, items_.size());
    if (!inserted) throw Error("duplicate id: " + item.id);
    items_.push_back(std::move(item));
  }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Item& operator[](std::size_t i) const { return items_[i]; }
  Item& operator[](std::size_t i) { return items_[i]; }
  const Item* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &items_[it->second];
  }
  std::optional<std::size_t> position(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const Item& at(const std::string& id) const {
    const Item* item = find(id);
    if (!item) throw Error("unknown id: " + id);
    return *item;
  }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Corpus = Collection<Document>;
using QuerySet = Collection<Query>;

/// query_id -> doc_id -> grade. Ordered maps keep every output deterministic.
using Qrels = std::map<std::string, std::map<std::string, int>>;

void tokenize_all(Corpus& corpus, const Vocabulary& vocab);
void tokenize_all(QuerySet& queries, const Vocabulary& vocab);

/// Copies latent topics from each query's source document.
void attach_query_topics(QuerySet& queries, const Corpus& corpus);

// BEIR-style line-delimited JSON. Corpus records carry "_id", optional
// "title", "text" and optionally "latent_topic" (array of numbers); query
// records carry "_id", "text" and optionally "source_doc_id".
Corpus load_beir_corpus(const std::string& path);
QuerySet load_beir_queries(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);
void save_queries(const QuerySet& queries, const std::string& path);

/// TREC qrels ("qid iter docid grade", whitespace separated). A three-column
/// BEIR file with a "query-id corpus-id score" header is accepted as well.
Qrels load_qrels(const std::string& path, Diagnostics* diag = nullptr);
void save_qrels(const Qrels& qrels, const std::string& path);

struct SyntheticDomainSpec {
  std::size_t vocab_size = 6000;  // total, specials included
  std::size_t num_docs = 10000;
  std::size_t num_topics = 200;
  std::pair<int, int> doc_len_range{24, 64};
  double topic_token_skew = 0.8;
  std::uint64_t seed = 1;

  // Topic geometry: topics are grouped into clusters; siblings share a
  // cluster direction and a block of cluster tokens.
  std::size_t num_clusters = 40;
  std::size_t latent_dim = 64;
  double topic_spread = 0.5;  // sibling cosine is about 1 / (1 + spread^2)
  std::size_t tokens_per_topic = 12;
  std::size_t tokens_per_cluster = 24;
  std::size_t background_tokens = 600;
  double cluster_token_share = 0.5;  // of topical draws, the part from the cluster block

  void validate() const;
};

struct RelevanceThresholds {
  double grade2 = 0.9;
  double grade1 = 0.7;
};

/// A generated domain. Doubles as the qrels generator for queries whose
/// latent topics are known.
struct SyntheticDomain {
  SyntheticDomainSpec spec;
  Corpus corpus;
  MatrixXd topic_vectors;             // num_topics x latent_dim, unit rows
  std::vector<std::size_t> doc_topic;  // per document

  Qrels qrels(const QuerySet& queries, RelevanceThresholds thresholds = {}) const;
};

SyntheticDomain generate_synthetic_corpus(const SyntheticDomainSpec& spec, const Vocabulary& vocab);

/// Planted judgments: grade 2 when cos(query topic, doc topic) >= grade2,
/// grade 1 when >= grade1. Only positive grades are stored.
Qrels planted_qrels(const Corpus& corpus, const QuerySet& queries, RelevanceThresholds thresholds = {});

struct PseudoQueryOptions {
  std::size_t queries_per_doc = 1;
  double noise = 0.1;
  std::uint64_t seed = 7;
  std::pair<int, int> span_len_range{6, 12};
  /// 0 = every document; otherwise a uniform sample of this many documents.
  std::size_t num_source_docs = 0;
  std::string id_prefix = "genq";
};

/// Queries made of a contiguous span of the source document's words, each
/// word replaced by a uniformly drawn vocabulary word with probability
/// `noise`. The corpus must be tokenized.
QuerySet generate_pseudo_queries(const Corpus& corpus, const Vocabulary& vocab,
                                 const PseudoQueryOptions& options);

}  // namespace rgpl
