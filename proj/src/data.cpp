#include "rgpl/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace rgpl {

using nlohmann::json;

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = lookup_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw Error("duplicate vocabulary token '" + tokens_[i] + "' at line " + std::to_string(i + 1));
  }
  auto require = [&](const char* name) {
    auto id = find(name);
    if (!id) throw Error(std::string("vocabulary lacks ") + name);
    return *id;
  };
  cls_ = require(kClsToken);
  sep_ = require(kSepToken);
  unk_ = require(kUnkToken);
  pad_ = find(kPadToken).value_or(-1);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (id != cls_ && id != sep_ && id != unk_ && id != pad_) word_ids_.push_back(id);
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocabulary " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Vocabulary::special_ids() const {
  std::vector<TokenId> ids{cls_, sep_};
  if (pad_ >= 0) ids.push_back(pad_);
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool Vocabulary::is_special(TokenId id) const {
  return id == cls_ || id == sep_ || id == unk_ || id == pad_;
}

Vocabulary make_synthetic_vocabulary(std::size_t size) {
  if (size < 5) throw Error("synthetic vocabulary needs at least one word besides the 4 specials");
  std::vector<std::string> tokens{kPadToken, kUnkToken, kClsToken, kSepToken};
  for (std::size_t i = 0; tokens.size() < size; ++i) {
    std::ostringstream w;
    w << 'w' << std::setw(4) << std::setfill('0') << i;
    tokens.push_back(w.str());
  }
  return Vocabulary(std::move(tokens));
}

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSeq seq;
  seq.ids.push_back(vocab.cls_id());
  const std::size_t max_words = kMaxSeqLen - 2;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (seq.ids.size() - 1 < max_words) seq.ids.push_back(vocab.find(word).value_or(vocab.unk_id()));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else {
      flush();
    }
  }
  flush();
  seq.ids.push_back(vocab.sep_id());
  return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if ((i == 0 && seq.has_cls) || (i + 1 == seq.ids.size() && seq.has_sep)) continue;
    const TokenId id = seq.ids[i];
    if (id == vocab.cls_id() || id == vocab.sep_id()) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

void tokenize_all(Corpus& corpus, const Vocabulary& vocab) {
  for (auto& doc : corpus) {
    doc.tokens = tokenize(doc.text, vocab);
    doc.tokenized = true;
  }
}

void tokenize_all(QuerySet& queries, const Vocabulary& vocab) {
  for (auto& q : queries) {
    q.tokens = tokenize(q.text, vocab);
    q.tokenized = true;
  }
}

void attach_query_topics(QuerySet& queries, const Corpus& corpus) {
  for (auto& q : queries) {
    if (!q.source_doc_id) continue;
    const Document* doc = corpus.find(*q.source_doc_id);
    if (!doc) throw Error("query " + q.id + " references unknown source document " + *q.source_doc_id);
    q.latent_topic = doc->latent_topic;
  }
}

namespace {

template <typename Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error&) {
      throw Error("malformed JSON at line " + std::to_string(line_no) + " of " + path);
    }
    if (!record.is_object()) throw Error("expected a JSON object at line " + std::to_string(line_no));
    fn(record, line_no);
  }
}

std::string required_string(const json& record, const char* key, std::size_t line_no) {
  auto it = record.find(key);
  if (it == record.end() || it->is_null()) {
    throw Error(std::string("missing ") + (std::string(key) == "_id" ? "id" : key) + " at line " +
                std::to_string(line_no));
  }
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw Error(std::string("field ") + key + " is not a string at line " + std::to_string(line_no));
}

}  // namespace

Corpus load_beir_corpus(const std::string& path) {
  Corpus corpus;
  for_each_json_line(path, [&](const json& record, std::size_t line_no) {
    Document doc;
    doc.id = required_string(record, "_id", line_no);
    if (doc.id.empty()) throw Error("missing id at line " + std::to_string(line_no));
    const std::string title = record.value("title", std::string());
    const std::string text = record.contains("text") ? required_string(record, "text", line_no) : std::string();
    doc.text = title.empty() ? text : (text.empty() ? title : title + " " + text);
    if (auto it = record.find("latent_topic"); it != record.end()) {
      if (!it->is_array() || it->empty()) throw Error("latent_topic must be a numeric array at line " + std::to_string(line_no));
      VectorXd topic(static_cast<Index>(it->size()));
      for (std::size_t i = 0; i < it->size(); ++i) topic[static_cast<Index>(i)] = (*it)[i].get<double>();
      doc.latent_topic = std::move(topic);
    }
    if (corpus.find(doc.id)) throw Error("duplicate document id " + doc.id + " at line " + std::to_string(line_no));
    corpus.add(std::move(doc));
  });
  return corpus;
}

QuerySet load_beir_queries(const std::string& path) {
  QuerySet queries;
  for_each_json_line(path, [&](const json& record, std::size_t line_no) {
    Query q;
    q.id = required_string(record, "_id", line_no);
    if (q.id.empty()) throw Error("missing id at line " + std::to_string(line_no));
    q.text = record.contains("text") ? required_string(record, "text", line_no) : std::string();
    if (auto it = record.find("source_doc_id"); it != record.end() && !it->is_null()) {
      q.source_doc_id = required_string(record, "source_doc_id", line_no);
    }
    if (queries.find(q.id)) throw Error("duplicate query id " + q.id + " at line " + std::to_string(line_no));
    queries.add(std::move(q));
  });
  return queries;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& doc : corpus) {
    json record{{"_id", doc.id}, {"title", ""}, {"text", doc.text}};
    if (doc.latent_topic) {
      record["latent_topic"] = std::vector<double>(doc.latent_topic->data(),
                                                   doc.latent_topic->data() + doc.latent_topic->size());
    }
    out << record.dump() << '\n';
  }
}

void save_queries(const QuerySet& queries, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& q : queries) {
    json record{{"_id", q.id}, {"text", q.text}};
    if (q.source_doc_id) record["source_doc_id"] = *q.source_doc_id;
    out << record.dump() << '\n';
  }
}

namespace {

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream in(line);
  std::string f;
  while (in >> f) fields.push_back(f);
  return fields;
}

std::optional<int> parse_int(const std::string& s) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace

Qrels load_qrels(const std::string& path, Diagnostics* diag) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open qrels " + path);
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    std::string qid, docid, grade_text;
    if (fields.size() == 4) {
      qid = fields[0];
      docid = fields[2];
      grade_text = fields[3];
    } else if (fields.size() == 3) {
      qid = fields[0];
      docid = fields[1];
      grade_text = fields[2];
      if (line_no == 1 && !parse_int(grade_text)) continue;  // BEIR header
    } else {
      throw Error("expected 4 columns at line " + std::to_string(line_no) + " of " + path);
    }
    const auto grade = parse_int(grade_text);
    if (!grade) throw Error("non-integer grade '" + grade_text + "' at line " + std::to_string(line_no));
    if (*grade < 0) throw Error("negative grade at line " + std::to_string(line_no));
    auto& judged = qrels[qid];
    if (auto it = judged.find(docid); it != judged.end()) {
      warn(diag, "duplicate qrels entry (" + qid + ", " + docid + ") at line " + std::to_string(line_no) +
                     "; keeping grade " + std::to_string(*grade));
      it->second = *grade;
    } else {
      judged.emplace(docid, *grade);
    }
  }
  return qrels;
}

void save_qrels(const Qrels& qrels, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& [qid, judged] : qrels) {
    for (const auto& [docid, grade] : judged) out << qid << "\t0\t" << docid << '\t' << grade << '\n';
  }
}

void SyntheticDomainSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error("invalid synthetic domain spec: " + msg); };
  if (vocab_size < 5) fail("vocab_size must be at least 5");
  if (num_docs == 0) fail("num_docs must be positive");
  if (num_topics == 0) fail("num_topics must be positive");
  if (num_topics > vocab_size) fail("num_topics exceeds vocab_size");
  if (doc_len_range.first < 4 || doc_len_range.second > 348 || doc_len_range.first > doc_len_range.second) {
    fail("doc_len_range must lie within [4, 348]");
  }
  if (!(topic_token_skew > 0.0 && topic_token_skew <= 1.0)) fail("topic_token_skew must be in (0, 1]");
  if (num_clusters == 0) fail("num_clusters must be positive");
  if (latent_dim == 0) fail("latent_dim must be positive");
  if (topic_spread < 0.0) fail("topic_spread must be non-negative");
  if (tokens_per_topic == 0) fail("tokens_per_topic must be positive");
  if (background_tokens == 0) fail("background_tokens must be positive");
  if (cluster_token_share < 0.0 || cluster_token_share > 1.0) fail("cluster_token_share must be in [0, 1]");
  const std::size_t clusters = std::min(num_clusters, num_topics);
  const std::size_t needed = background_tokens + clusters * tokens_per_cluster + num_topics * tokens_per_topic;
  if (needed > vocab_size - 4) {
    fail("token blocks need " + std::to_string(needed) + " words but the vocabulary has " +
         std::to_string(vocab_size - 4));
  }
}

namespace {

VectorXd random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd v(static_cast<Index>(dim));
  for (Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v.normalized();
}

std::vector<double> zipf_weights(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / static_cast<double>(r + 1);
  return w;
}

std::string format_id(const std::string& prefix, std::size_t i, int width) {
  std::ostringstream s;
  s << prefix << std::setw(width) << std::setfill('0') << i;
  return s.str();
}

}  // namespace

SyntheticDomain generate_synthetic_corpus(const SyntheticDomainSpec& spec, const Vocabulary& vocab) {
  spec.validate();
  if (vocab.size() != spec.vocab_size) {
    throw Error("vocabulary has " + std::to_string(vocab.size()) + " entries, spec says " +
                std::to_string(spec.vocab_size));
  }
  std::mt19937_64 rng(spec.seed);
  SyntheticDomain domain;
  domain.spec = spec;

  const std::size_t clusters = std::min(spec.num_clusters, spec.num_topics);
  std::vector<VectorXd> centers;
  for (std::size_t c = 0; c < clusters; ++c) centers.push_back(random_unit(rng, spec.latent_dim));
  domain.topic_vectors.resize(static_cast<Index>(spec.num_topics), static_cast<Index>(spec.latent_dim));
  for (std::size_t t = 0; t < spec.num_topics; ++t) {
    VectorXd v = centers[t % clusters];
    if (clusters < spec.num_topics) v += spec.topic_spread * random_unit(rng, spec.latent_dim);
    domain.topic_vectors.row(static_cast<Index>(t)) = v.normalized().transpose();
  }

  // Token blocks come from a domain-specific permutation of the words, so two
  // domains with different seeds associate the same words with different topics.
  std::vector<TokenId> words = vocab.word_ids();
  std::shuffle(words.begin(), words.end(), rng);
  auto take = [&words, cursor = std::size_t{0}](std::size_t n) mutable {
    std::vector<TokenId> block(words.begin() + static_cast<std::ptrdiff_t>(cursor),
                               words.begin() + static_cast<std::ptrdiff_t>(cursor + n));
    cursor += n;
    return block;
  };
  const auto background = take(spec.background_tokens);
  std::vector<std::vector<TokenId>> cluster_blocks, topic_blocks;
  for (std::size_t c = 0; c < clusters; ++c) cluster_blocks.push_back(take(spec.tokens_per_cluster));
  for (std::size_t t = 0; t < spec.num_topics; ++t) topic_blocks.push_back(take(spec.tokens_per_topic));

  auto background_w = zipf_weights(spec.background_tokens);
  auto cluster_w = zipf_weights(std::max<std::size_t>(spec.tokens_per_cluster, 1));
  auto topic_w = zipf_weights(spec.tokens_per_topic);
  std::discrete_distribution<std::size_t> background_rank(background_w.begin(), background_w.end());
  std::discrete_distribution<std::size_t> cluster_rank(cluster_w.begin(), cluster_w.end());
  std::discrete_distribution<std::size_t> topic_rank(topic_w.begin(), topic_w.end());
  std::uniform_int_distribution<std::size_t> pick_topic(0, spec.num_topics - 1);
  std::uniform_int_distribution<int> pick_len(spec.doc_len_range.first, spec.doc_len_range.second);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int id_width = std::max(5, static_cast<int>(std::to_string(spec.num_docs).size()));
  domain.doc_topic.reserve(spec.num_docs);
  for (std::size_t i = 0; i < spec.num_docs; ++i) {
    const std::size_t topic = pick_topic(rng);
    const int len = pick_len(rng);
    Document doc;
    doc.id = format_id("d", i, id_width);
    doc.tokens.ids.reserve(static_cast<std::size_t>(len) + 2);
    doc.tokens.ids.push_back(vocab.cls_id());
    for (int j = 0; j < len; ++j) {
      TokenId tok;
      if (unit(rng) < spec.topic_token_skew) {
        if (spec.tokens_per_cluster > 0 && unit(rng) < spec.cluster_token_share) {
          tok = cluster_blocks[topic % clusters][cluster_rank(rng)];
        } else {
          tok = topic_blocks[topic][topic_rank(rng)];
        }
      } else {
        tok = background[background_rank(rng)];
      }
      doc.tokens.ids.push_back(tok);
      if (j > 0) doc.text.push_back(' ');
      doc.text += vocab.token(tok);
    }
    doc.tokens.ids.push_back(vocab.sep_id());
    doc.tokenized = true;
    doc.latent_topic = domain.topic_vectors.row(static_cast<Index>(topic)).transpose();
    domain.doc_topic.push_back(topic);
    domain.corpus.add(std::move(doc));
  }
  return domain;
}

Qrels SyntheticDomain::qrels(const QuerySet& queries, RelevanceThresholds thresholds) const {
  return planted_qrels(corpus, queries, thresholds);
}

Qrels planted_qrels(const Corpus& corpus, const QuerySet& queries, RelevanceThresholds thresholds) {
  if (corpus.empty()) return {};
  const Index dim = corpus[0].latent_topic ? corpus[0].latent_topic->size() : 0;
  MatrixXd doc_topics(static_cast<Index>(corpus.size()), dim);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& t = corpus[i].latent_topic;
    if (!t || t->size() != dim) throw Error("document " + corpus[i].id + " lacks a latent topic");
    doc_topics.row(static_cast<Index>(i)) = t->normalized().transpose();
  }
  Qrels qrels;
  for (const auto& q : queries) {
    if (!q.latent_topic || q.latent_topic->size() != dim) throw Error("query " + q.id + " lacks a latent topic");
    const VectorXd cos = doc_topics * q.latent_topic->normalized();
    auto& judged = qrels[q.id];
    for (Index i = 0; i < cos.size(); ++i) {
      const int grade = cos[i] >= thresholds.grade2 ? 2 : (cos[i] >= thresholds.grade1 ? 1 : 0);
      if (grade > 0) judged.emplace(corpus[static_cast<std::size_t>(i)].id, grade);
    }
  }
  return qrels;
}

QuerySet generate_pseudo_queries(const Corpus& corpus, const Vocabulary& vocab, const PseudoQueryOptions& options) {
  if (corpus.empty()) throw Error("cannot generate queries for an empty corpus");
  if (options.queries_per_doc < 1) throw Error("queries_per_doc must be at least 1");
  if (!(options.noise >= 0.0 && options.noise <= 1.0)) throw Error("noise must be in [0, 1]");
  if (options.span_len_range.first < 1 || options.span_len_range.first > options.span_len_range.second) {
    throw Error("invalid span length range");
  }
  std::mt19937_64 rng(options.seed);

  std::vector<std::size_t> sources(corpus.size());
  std::iota(sources.begin(), sources.end(), std::size_t{0});
  if (options.num_source_docs > 0 && options.num_source_docs < corpus.size()) {
    for (std::size_t i = 0; i < options.num_source_docs; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, sources.size() - 1);
      std::swap(sources[i], sources[pick(rng)]);
    }
    sources.resize(options.num_source_docs);
    std::sort(sources.begin(), sources.end());
  }

  const auto& words = vocab.word_ids();
  std::uniform_int_distribution<std::size_t> pick_word(0, words.size() - 1);
  std::uniform_int_distribution<int> pick_len(options.span_len_range.first, options.span_len_range.second);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t total = sources.size() * options.queries_per_doc;
  const int id_width = std::max(5, static_cast<int>(std::to_string(total).size()));
  QuerySet queries;
  std::size_t counter = 0;
  for (std::size_t src : sources) {
    const Document& doc = corpus[src];
    if (!doc.tokenized) throw Error("document " + doc.id + " is not tokenized");
    std::vector<TokenId> content;
    for (std::size_t i = 0; i < doc.tokens.ids.size(); ++i) {
      const TokenId id = doc.tokens.ids[i];
      if (id != vocab.cls_id() && id != vocab.sep_id()) content.push_back(id);
    }
    for (std::size_t j = 0; j < options.queries_per_doc; ++j) {
      Query q;
      q.id = format_id(options.id_prefix, counter++, id_width);
      q.source_doc_id = doc.id;
      q.latent_topic = doc.latent_topic;
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(pick_len(rng)), content.size());
      std::uniform_int_distribution<std::size_t> pick_start(0, content.size() - len);
      const std::size_t start = content.empty() ? 0 : pick_start(rng);
      for (std::size_t k = 0; k < len; ++k) {
        TokenId tok = content[start + k];
        if (options.noise > 0.0 && unit(rng) < options.noise) tok = words[pick_word(rng)];
        if (!q.text.empty()) q.text.push_back(' ');
        q.text += vocab.token(tok);
      }
      q.tokens = tokenize(q.text, vocab);
      q.tokenized = true;
      queries.add(std::move(q));
    }
  }
  return queries;
}

}  // namespace rgpl
