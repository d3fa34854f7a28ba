#pragma once

#include "rgpl/data.hpp"
#include "rgpl/encoder.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <unistd.h>

namespace testing {

inline constexpr std::uint64_t kPropertySeeds[] = {1, 2, 3, 4, 5};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rgpl_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

/// A small planted domain: vocabulary plus tokenized corpus.
struct SmallDomain {
  rgpl::Vocabulary vocab;
  rgpl::SyntheticDomain domain;
};

inline rgpl::SyntheticDomainSpec small_spec(std::uint64_t seed, std::size_t docs = 300) {
  rgpl::SyntheticDomainSpec s;
  s.vocab_size = 800;
  s.num_docs = docs;
  s.num_topics = 12;
  s.num_clusters = 4;
  s.doc_len_range = {10, 30};
  s.latent_dim = 16;
  s.tokens_per_topic = 8;
  s.tokens_per_cluster = 12;
  s.background_tokens = 200;
  s.seed = seed;
  return s;
}

inline SmallDomain make_small_domain(std::uint64_t seed, std::size_t docs = 300) {
  const auto spec = small_spec(seed, docs);
  SmallDomain d{rgpl::make_synthetic_vocabulary(spec.vocab_size), {}};
  d.domain = rgpl::generate_synthetic_corpus(spec, d.vocab);
  return d;
}

/// Random token sequence with [CLS]/[SEP] framing over ids [first_word, vocab).
inline rgpl::TokenSeq random_seq(std::mt19937_64& rng, int vocab, int first_word, int min_len, int max_len,
                                 int cls = 2, int sep = 3) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> tok(first_word, vocab - 1);
  rgpl::TokenSeq s;
  s.ids.push_back(cls);
  const int n = len(rng);
  for (int i = 0; i < n; ++i) s.ids.push_back(tok(rng));
  s.ids.push_back(sep);
  return s;
}

}  // namespace testing
