#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "rgpl/dense_index.hpp"

#include <algorithm>
#include <set>

using namespace rgpl;

namespace {

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("doc" + std::to_string(i));
  return out;
}

/// Entries k/8 with small k: every dot product is exact in double, so
/// ties are real ties.
MatrixXd dyadic(std::mt19937_64& rng, Index rows, Index cols, int range) {
  std::uniform_int_distribution<int> k(-range, range);
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = k(rng) / 8.0;
  }
  return m;
}

std::vector<ScoredDoc> full_sort(const IndexSnapshot& index, const VectorXd& q) {
  std::vector<ScoredDoc> all;
  for (std::size_t i = 0; i < index.size(); ++i) {
    double s = 0.0;
    for (Index c = 0; c < q.size(); ++c) s += index.embeddings()(static_cast<Index>(i), c) * q[c];
    all.push_back({index.doc_ids()[i], s});
  }
  std::sort(all.begin(), all.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  });
  return all;
}

struct MiningFixture {
  testing::SmallDomain dom;
  QuerySet queries;
  EncoderParams params;
};

MiningFixture mining_fixture(std::uint64_t seed, std::size_t docs, std::size_t num_queries) {
  MiningFixture f{testing::make_small_domain(seed, docs), {}, {}};
  PseudoQueryOptions o;
  o.seed = seed;
  o.num_source_docs = num_queries;
  f.queries = generate_pseudo_queries(f.dom.domain.corpus, f.dom.vocab, o);
  f.params = init_params(static_cast<Index>(f.dom.vocab.size()), 8, 6, seed, f.dom.vocab.special_ids());
  return f;
}

}  // namespace

TEST_CASE("build_index") {
  const auto dom = testing::make_small_domain(3, 40);
  const auto p = init_params(static_cast<Index>(dom.vocab.size()), 6, 5, 1, dom.vocab.special_ids());
  SUBCASE("one document gives one row equal to its encoding") {
    Corpus one;
    one.add(dom.domain.corpus[7]);
    const IndexSnapshot s = build_index(p, one, 0);
    REQUIRE(s.size() == 1);
    CHECK(s.dim() == 5);
    CHECK(s.embeddings().row(0).transpose() == encode(p, one[0].tokens));
  }
  SUBCASE("rebuilding with identical params gives an identical snapshot") {
    CHECK(build_index(p, dom.domain.corpus, 3).content_hash() == build_index(p, dom.domain.corpus, 3).content_hash());
  }
  SUBCASE("a parameter update changes rows") {
    auto q = p;
    q.embedding.row(dom.domain.corpus[0].tokens.ids[1]) *= 1.5;
    const auto a = build_index(p, dom.domain.corpus, 0);
    const auto b = build_index(q, dom.domain.corpus, 1);
    std::size_t changed = 0;
    for (Index r = 0; r < a.embeddings().rows(); ++r) changed += a.embeddings().row(r) != b.embeddings().row(r);
    CHECK(changed >= 1);
    CHECK(a.content_hash() != b.content_hash());
    CHECK(b.built_at_step() == 1);
    CHECK(b.encoder_checkpoint_hash() == params_hash(q));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_index(p, Corpus{}, 0), Error);
    Corpus raw;
    raw.add(Document{"x", "text", {}, false, {}});
    CHECK_THROWS_AS(build_index(p, raw, 0), Error);
    auto small = init_params(5, 6, 5, 1);
    Corpus c;
    c.add(dom.domain.corpus[0]);
    CHECK_THROWS_WITH_AS(build_index(small, c, 0), doctest::Contains(dom.domain.corpus[0].id.c_str()), Error);
    CHECK_THROWS_AS(IndexSnapshot(ids(2), MatrixXd::Zero(3, 2), 0, ""), Error);
    CHECK_THROWS_AS(IndexSnapshot(ids(2), MatrixXd::Zero(2, 2), -1, ""), Error);
  }
  SUBCASE("worker count does not change the snapshot") {
    setenv("RGPL_WORKERS", "1", 1);
    const auto a = build_index(p, dom.domain.corpus, 0).content_hash();
    setenv("RGPL_WORKERS", "3", 1);
    const auto b = build_index(p, dom.domain.corpus, 0).content_hash();
    unsetenv("RGPL_WORKERS");
    CHECK(a == b);
  }
}

TEST_CASE("search") {
  SUBCASE("basis vectors") {
    const IndexSnapshot s(ids(3), MatrixXd::Identity(3, 3), 0, "");
    VectorXd q = VectorXd::Zero(3);
    q[2] = 1.0;
    const auto hits = search(s, q, 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].doc_id == "doc2");
  }
  SUBCASE("k beyond the corpus returns everything, sorted") {
    std::mt19937_64 rng(4);
    const IndexSnapshot s(ids(6), dyadic(rng, 6, 3, 8), 0, "");
    const VectorXd q = dyadic(rng, 1, 3, 8).row(0).transpose();
    const auto hits = search(s, q, 50);
    CHECK(hits.size() == 6);
    CHECK(hits == full_sort(s, q));
  }
  SUBCASE("ties break by ascending doc id, not row order") {
    const IndexSnapshot s({"b", "c", "a"}, MatrixXd::Ones(3, 2), 0, "");
    const auto hits = search(s, VectorXd::Ones(2), 3);
    CHECK(hits[0].doc_id == "a");
    CHECK(hits[1].doc_id == "b");
    CHECK(hits[2].doc_id == "c");
  }
  SUBCASE("errors") {
    const IndexSnapshot s(ids(3), MatrixXd::Identity(3, 3), 0, "");
    CHECK_THROWS_AS(search(s, VectorXd::Ones(2), 1), Error);
    CHECK_THROWS_AS(search(s, VectorXd::Ones(3), 0), Error);
  }
  SUBCASE("batched search agrees with single searches") {
    std::mt19937_64 rng(8);
    const IndexSnapshot s(ids(150), dyadic(rng, 150, 4, 3), 0, "");
    const MatrixXd qs = dyadic(rng, 70, 4, 3);
    const auto batch = search_batch(s, qs, 12);
    for (Index i = 0; i < qs.rows(); ++i) CHECK(batch[static_cast<std::size_t>(i)] == search(s, qs.row(i).transpose(), 12));
  }
}

TEST_CASE("snapshot persistence") {
  testing::TempDir tmp("snapshot");
  std::mt19937_64 rng(2);
  const IndexSnapshot s(ids(20), dyadic(rng, 20, 5, 9), 42, "abc123");
  s.save(tmp.file("s.idx"));
  const IndexSnapshot back = IndexSnapshot::load(tmp.file("s.idx"));
  CHECK(back.doc_ids() == s.doc_ids());
  CHECK(back.embeddings() == s.embeddings());
  CHECK(back.built_at_step() == 42);
  CHECK(back.encoder_checkpoint_hash() == "abc123");
  CHECK(back.content_hash() == s.content_hash());
  testing::write_file(tmp.file("bad.idx"), "garbage!");
  CHECK_THROWS_AS(IndexSnapshot::load(tmp.file("bad.idx")), Error);
}

TEST_CASE("mine_hard_negatives") {
  SUBCASE("three documents give pools of at most two") {
    auto f = mining_fixture(2, 3, 3);
    const auto index = build_index(f.params, f.dom.domain.corpus, 0);
    const NegativePool pool = mine_hard_negatives(index, f.queries, f.params, 50);
    REQUIRE(pool.size() == 3);
    for (const auto& [qid, docs] : pool) CHECK(docs.size() == 2);
  }
  SUBCASE("the positive is dropped and the next pool_size ranks kept") {
    auto f = mining_fixture(5, 120, 30);
    const auto index = build_index(f.params, f.dom.domain.corpus, 0);
    const NegativePool pool = mine_hard_negatives(index, f.queries, f.params, 10);
    for (const auto& q : f.queries) {
      const auto ranked = search(index, encode(f.params, q.tokens), 11);
      std::vector<ScoredDoc> expected;
      for (const auto& h : ranked) {
        if (h.doc_id != *q.source_doc_id) expected.push_back(h);
      }
      expected.resize(std::min<std::size_t>(expected.size(), 10));
      CHECK(pool.at(q.id) == expected);
    }
  }
  SUBCASE("positive ranked first: pool is ranks 2 to pool_size + 1") {
    const IndexSnapshot s(ids(5), MatrixXd::Identity(5, 5), 0, "");
    // Query equal to the row of doc0 under a projection-free encoder.
    EncoderParams p = init_params(10, 5, 5, 1, {0, 2, 3});
    p.projection.setIdentity();
    p.embedding.setZero();
    p.embedding(4, 0) = 1.0;
    p.embedding(4, 1) = 0.5;
    p.embedding(4, 2) = 0.25;
    QuerySet qs;
    Query q;
    q.id = "q";
    q.tokens = TokenSeq{{2, 4, 3}, true, true};
    q.tokenized = true;
    q.source_doc_id = "doc0";
    qs.add(q);
    const NegativePool pool = mine_hard_negatives(s, qs, p, 2);
    REQUIRE(pool.at("q").size() == 2);
    CHECK(pool.at("q")[0].doc_id == "doc1");
    CHECK(pool.at("q")[1].doc_id == "doc2");
  }
  SUBCASE("queries without a positive are rejected") {
    auto f = mining_fixture(1, 20, 2);
    QuerySet qs;
    Query q = f.queries[0];
    q.source_doc_id.reset();
    qs.add(q);
    const auto index = build_index(f.params, f.dom.domain.corpus, 0);
    CHECK_THROWS_AS(mine_hard_negatives(index, qs, f.params, 5), Error);
    CHECK_THROWS_AS(mine_hard_negatives(index, f.queries, f.params, 0), Error);
  }
  SUBCASE("pool scores are non-increasing over 100 queries") {
    auto f = mining_fixture(9, 300, 100);
    const auto index = build_index(f.params, f.dom.domain.corpus, 0);
    const NegativePool pool = mine_hard_negatives(index, f.queries, f.params, 50);
    CHECK(pool.size() == 100);
    for (const auto& [qid, docs] : pool) {
      CHECK(docs.size() == 50);
      for (std::size_t i = 1; i < docs.size(); ++i) CHECK(docs[i - 1].score >= docs[i].score);
    }
  }
}

TEST_CASE("sample_negative") {
  NegativePool pool{{"single", {{"d9", 1.0}}}, {"pair", {{"a", 2.0}, {"b", 1.0}}}, {"empty", {}}};
  std::mt19937_64 rng(1);
  CHECK(sample_negative(pool, "single", rng) == "d9");
  CHECK_THROWS_AS(sample_negative(pool, "empty", rng), Error);
  CHECK_THROWS_AS(sample_negative(pool, "missing", rng), Error);

  std::size_t a = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) a += sample_negative(pool, "pair", rng) == "a";
  CHECK(std::abs(static_cast<double>(a) / draws - 0.5) <= 0.02);

  std::mt19937_64 r1(77), r2(77);
  for (int i = 0; i < 100; ++i) CHECK(sample_negative(pool, "pair", r1) == sample_negative(pool, "pair", r2));
}

TEST_CASE("pool files round trip") {
  testing::TempDir tmp("pool");
  const NegativePool pool{{"q1", {{"d3", 2.5}, {"d1", -0.125}}}, {"q2", {{"d7", 1.0 / 3.0}}}};
  save_pool(pool, tmp.file("p.tsv"));
  CHECK(load_pool(tmp.file("p.tsv")) == pool);
  testing::write_file(tmp.file("bad.tsv"), "q1\t1\td3\n");
  CHECK_THROWS_AS(load_pool(tmp.file("bad.tsv")), Error);
}

TEST_SUITE("properties") {
  TEST_CASE("full-depth search is a permutation of all documents") {
    for (auto seed : testing::kPropertySeeds) {
      CAPTURE(seed);
      std::mt19937_64 rng(seed);
      const IndexSnapshot s(ids(80), dyadic(rng, 80, 3, 2), 0, "");
      const VectorXd q = dyadic(rng, 1, 3, 2).row(0).transpose();
      const auto hits = search(s, q, s.size());
      std::set<std::string> seen;
      for (const auto& h : hits) seen.insert(h.doc_id);
      CHECK(hits.size() == s.size());
      CHECK(seen == std::set<std::string>(s.doc_ids().begin(), s.doc_ids().end()));
    }
  }

  TEST_CASE("top-k equals the head of the full sort") {
    for (auto seed : testing::kPropertySeeds) {
      CAPTURE(seed);
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<int> kdist(1, 250), range(1, 12);
      for (int trial = 0; trial < 40; ++trial) {
        const int r = range(rng);
        // Shuffled ids so row order and id order disagree.
        auto names = ids(200);
        std::shuffle(names.begin(), names.end(), rng);
        const IndexSnapshot s(names, dyadic(rng, 200, 4, r), 0, "");
        const VectorXd q = dyadic(rng, 1, 4, r).row(0).transpose();
        const auto k = static_cast<std::size_t>(kdist(rng));
        auto oracle = full_sort(s, q);
        oracle.resize(std::min(k, oracle.size()));
        CHECK(search(s, q, k) == oracle);
      }
    }
  }

  TEST_CASE("pools never contain the positive") {
    for (auto seed : testing::kPropertySeeds) {
      CAPTURE(seed);
      auto f = mining_fixture(seed, 150, 60);
      const auto index = build_index(f.params, f.dom.domain.corpus, 0);
      const NegativePool pool = mine_hard_negatives(index, f.queries, f.params, 20);
      for (const auto& q : f.queries) {
        for (const auto& h : pool.at(q.id)) CHECK(h.doc_id != *q.source_doc_id);
      }
    }
  }

  TEST_CASE("search leaves the snapshot untouched") {
    for (auto seed : testing::kPropertySeeds) {
      std::mt19937_64 rng(seed);
      const IndexSnapshot s(ids(50), dyadic(rng, 50, 3, 5), 7, "h");
      const auto before = s.content_hash();
      const MatrixXd emb = s.embeddings();
      for (int i = 0; i < 10; ++i) (void)search(s, dyadic(rng, 1, 3, 5).row(0).transpose(), 5);
      (void)search_batch(s, dyadic(rng, 5, 3, 5), 5);
      CHECK(s.content_hash() == before);
      CHECK(s.embeddings() == emb);
      CHECK(s.built_at_step() == 7);
    }
  }
}
