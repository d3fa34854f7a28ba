#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "rgpl/experiment.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <sys/wait.h>

using namespace rgpl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(# tiny experiment
seed = 3
synthetic.vocab_size = 800
synthetic.num_docs = 300
synthetic.num_topics = 12
synthetic.num_clusters = 4
synthetic.doc_len_min = 10
synthetic.doc_len_max = 30
synthetic.latent_dim = 16
synthetic.tokens_per_topic = 8
synthetic.tokens_per_cluster = 12
synthetic.background_tokens = 200
synthetic.source_num_docs = 200
synthetic.source_num_queries = 100
queries.num_source_docs = 60
test.num_queries = 40
encoder.hidden_dim = 12
encoder.out_dim = 12
base.steps = 100
train.total_steps = 300
train.batch_size = 8
train.k = 100
train.pool_size = 10
)";

ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig c;
  std::istringstream in(kTinyConfig);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    c.set(line.substr(0, eq), line.substr(eq + 3));
  }
  c.out_dir = out;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

json read_json(const std::string& path) { return json::parse(slurp(path)); }

struct CliResult {
  int status = -1;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const testing::TempDir& tmp) {
  const std::string out = tmp.file("cli.out"), err = tmp.file("cli.err");
  const std::string cmd = std::string(RGPL_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace

TEST_CASE("config files") {
  testing::TempDir tmp("config");
  SUBCASE("keys, comments and blank lines") {
    testing::write_file(tmp.file("c.cfg"), "# comment\n\nseed = 9   # trailing\ntrain.k = inf\nsweep.k = 5, inf\n"
                                            "eval.metrics = success@5\nsource = synthetic\n");
    const auto c = ExperimentConfig::load(tmp.file("c.cfg"));
    CHECK(c.seed == 9);
    CHECK(c.train.refresh_interval_k == 0);
    CHECK(c.sweep_k == std::vector<std::int64_t>{5, 0});
    CHECK(c.metrics == std::vector<std::string>{"success@5"});
  }
  SUBCASE("unknown keys name the file and line") {
    testing::write_file(tmp.file("bad.cfg"), "seed = 1\nbogus = 2\n");
    CHECK_THROWS_WITH_AS(ExperimentConfig::load(tmp.file("bad.cfg")),
                         doctest::Contains((tmp.file("bad.cfg") + ":2: unknown field 'bogus'").c_str()), Error);
  }
  SUBCASE("bad values name the field") {
    testing::write_file(tmp.file("bad.cfg"), "train.batch_size = many\n");
    CHECK_THROWS_WITH_AS(ExperimentConfig::load(tmp.file("bad.cfg")), doctest::Contains("field 'train.batch_size'"),
                         Error);
    testing::write_file(tmp.file("bad2.cfg"), "train.optimizer = lbfgs\n");
    CHECK_THROWS_AS(ExperimentConfig::load(tmp.file("bad2.cfg")), Error);
    testing::write_file(tmp.file("bad3.cfg"), "seed\n");
    CHECK_THROWS_AS(ExperimentConfig::load(tmp.file("bad3.cfg")), Error);
    CHECK_THROWS_AS(ExperimentConfig::load(tmp.file("absent.cfg")), Error);
  }
  SUBCASE("dump reloads to the same configuration") {
    auto c = tiny_config(tmp.file("o"));
    c.train.learning_rate = 1.0 / 3.0;
    testing::write_file(tmp.file("dump.cfg"), c.dump());
    const auto back = ExperimentConfig::load(tmp.file("dump.cfg"));
    CHECK(back.dump() == c.dump());
    CHECK(back.hash() == c.hash());
  }
  SUBCASE("the hash ignores the output directory but not the settings") {
    auto a = tiny_config("x"), b = tiny_config("y");
    CHECK(a.hash() == b.hash());
    b.train.total_steps += 1;
    CHECK(a.hash() != b.hash());
  }
  SUBCASE("reseeding derives every component seed from the master") {
    ExperimentConfig a, b;
    a.reseed(11);
    b.reseed(11);
    CHECK(a.dump() == b.dump());
    b.reseed(12);
    CHECK(a.train.seed != b.train.seed);
    CHECK(a.target.seed != b.target.seed);
    CHECK(a.oracle.seed != b.oracle.seed);
  }
  SUBCASE("exactly one data source") {
    ExperimentConfig c;
    c.beir_corpus = "corpus.jsonl";
    CHECK_THROWS_AS(c.validate(), Error);
    c.source = ExperimentConfig::Source::kBeir;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("beir.qrels"), Error);
  }
}

TEST_CASE("prepare is reproducible") {
  testing::TempDir tmp("prepare");
  const auto a = tiny_config(tmp.file("a")), b = tiny_config(tmp.file("b"));
  cmd_prepare(a);
  cmd_prepare(b);
  for (const char* sub : {"data", "models", "eval_base"}) {
    CAPTURE(sub);
    const json ma = read_json(tmp.file(std::string("a/") + sub + "/manifest.json"));
    const json mb = read_json(tmp.file(std::string("b/") + sub + "/manifest.json"));
    CHECK(ma == mb);
    CHECK(ma.at("config_hash") == a.hash());
    CHECK(ma.at("seed") == 3);
    CHECK(ma.at("code_version") == kCodeVersion);
    CHECK_FALSE(ma.at("files").empty());
  }
  CHECK(slurp(tmp.file("a/eval_base/run.trec")) == slurp(tmp.file("b/eval_base/run.trec")));

  const json counts = read_json(tmp.file("a/data/manifest.json")).at("counts");
  CHECK(counts.at("corpus") == 300);
  CHECK(counts.at("train_queries") == 60);
  CHECK(counts.at("test_queries") == 40);
  CHECK(counts.at("source_corpus") == 200);

  SUBCASE("a different seed changes the data") {
    auto c = tiny_config(tmp.file("c"));
    c.reseed(4);
    cmd_prepare(c);
    CHECK(slurp(tmp.file("a/data/corpus.jsonl")) != slurp(tmp.file("c/data/corpus.jsonl")));
  }
  SUBCASE("missing prepared files fail before any compute") {
    fs::remove(tmp.file("a/data/qrels.tsv"));
    CHECK_THROWS_WITH_AS(load_prepared(a), doctest::Contains("qrels.tsv"), Error);
    CHECK_THROWS_WITH_AS(cmd_train(a, "gpl"), doctest::Contains("qrels.tsv"), Error);
    CHECK_FALSE(fs::exists(tmp.file("a/train_gpl")));
  }
}

TEST_CASE("train, eval, sweep and analyze") {
  testing::TempDir tmp("flow");
  const auto c = tiny_config(tmp.file("run"));
  cmd_prepare(c);
  const std::string root = tmp.file("run");

  cmd_train(c, "gpl");
  cmd_train(c, "rgpl");
  for (const char* sub : {"train_gpl", "train_rgpl_k100"}) {
    CAPTURE(sub);
    CHECK(fs::exists(root + "/" + sub + "/model.ckpt"));
    CHECK(fs::exists(root + "/" + sub + "/train_log.jsonl"));
    CHECK(fs::exists(root + "/" + sub + "/pools_0.tsv"));
  }
  const TrainLog rlog = load_train_log(root + "/train_rgpl_k100/train_log.jsonl");
  CHECK(rlog.refreshes.size() == 2);
  CHECK(rlog.steps.size() == 300);
  CHECK(fs::exists(root + "/train_rgpl_k100/pools_200.tsv"));
  const json tm = read_json(root + "/train_rgpl_k100/manifest.json");
  CHECK(tm.at("k") == 100);
  CHECK(tm.at("checkpoint_hash") == params_hash(load_checkpoint(root + "/train_rgpl_k100/model.ckpt")));

  SUBCASE("re-evaluating Base reproduces the prepare report exactly") {
    cmd_eval(c, "base", "", "eval_base_again");
    CHECK(slurp(root + "/eval_base_again/run.trec") == slurp(root + "/eval_base/run.trec"));
    CHECK(slurp(root + "/eval_base_again/ndcg@10.tsv") == slurp(root + "/eval_base/ndcg@10.tsv"));
  }
  SUBCASE("significance against another report") {
    cmd_eval(c, root + "/train_gpl/model.ckpt", "", "");
    CHECK(fs::exists(root + "/eval_train_gpl/success@5.tsv"));
    cmd_eval(c, root + "/train_rgpl_k100/model.ckpt", root + "/eval_train_gpl/ndcg@10.tsv", "");
    const json sig = read_json(root + "/eval_train_rgpl_k100/significance_ndcg@10.json");
    CHECK(sig.at("p_value").get<double>() > 0.0);
    CHECK(sig.at("p_value").get<double>() <= 1.0);
    cmd_eval(c, root + "/train_gpl/model.ckpt", root + "/eval_train_gpl/ndcg@10.tsv", "self");
    CHECK(read_json(root + "/self/significance_ndcg@10.json").at("p_value").get<double>() == 1.0);
  }
  SUBCASE("sweep with static negatives matches the gpl run") {
    cmd_sweep(c, {0, 150});
    const json summary = read_json(root + "/sweep/sweep_summary.json");
    CHECK(summary.at("inf").at("refreshes") == 0);
    CHECK(summary.at("150").at("refreshes") == 1);
    CHECK(summary.at("150").contains("p_vs_gpl_ndcg@10"));
    CHECK(params_hash(load_checkpoint(root + "/sweep/k_inf/model.ckpt")) ==
          params_hash(load_checkpoint(root + "/train_gpl/model.ckpt")));
  }
  SUBCASE("analysis exports") {
    cmd_analyze(c, "");
    for (const char* f : {"loss.csv", "loss_ema.csv", "teacher_margin.csv", "teacher_margin_ema.csv",
                          "refresh_steps.csv", "negative_relevancy.csv", "score_hist_base.csv",
                          "score_hist_adapted.csv", "projection.csv", "manifest.json"}) {
      CAPTURE(f);
      CHECK(fs::exists(root + "/train_rgpl_k100/analysis/" + f));
    }
    std::ifstream rel(root + "/train_rgpl_k100/analysis/negative_relevancy.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(rel, line)) ++rows;
    CHECK(rows == 1 + 3);
    CHECK_THROWS_AS(cmd_analyze(c, "train_missing"), Error);
  }
  SUBCASE("argument errors") {
    CHECK_THROWS_AS(cmd_train(c, "adam"), Error);
    CHECK_THROWS_AS(cmd_eval(c, root + "/nope.ckpt", "", ""), Error);
    CHECK_THROWS_AS(cmd_sweep(c, {}), Error);
    auto no_k = c;
    no_k.train.refresh_interval_k = 0;
    CHECK_THROWS_AS(cmd_train(no_k, "rgpl"), Error);
  }
}

TEST_CASE("BEIR-style inputs") {
  testing::TempDir tmp("beir");
  const auto syn = tiny_config(tmp.file("syn"));
  PreparedData d = prepare_synthetic(syn);
  write_prepared(d, tmp.file("files"));
  std::vector<std::pair<std::pair<std::string, std::string>, double>> rows;
  for (const auto& q : d.train_queries) {
    for (const auto& doc : d.corpus) rows.push_back({{q.id, doc.id}, d.teacher.score(q, doc)});
  }
  save_teacher_table(rows, tmp.file("files/teacher.tsv"));
  save_checkpoint(init_params(static_cast<Index>(d.vocab.size()), 12, 12, 1, d.vocab.special_ids()),
                  tmp.file("files/base.ckpt"));

  ExperimentConfig c = tiny_config(tmp.file("out"));
  c.set("source", "beir");
  c.set("beir.corpus", tmp.file("files/corpus.jsonl"));
  c.set("beir.train_queries", tmp.file("files/train_queries.jsonl"));
  c.set("beir.test_queries", tmp.file("files/test_queries.jsonl"));
  c.set("beir.qrels", tmp.file("files/qrels.tsv"));
  c.set("beir.vocab", tmp.file("files/vocab.txt"));
  c.set("teacher.table", tmp.file("files/teacher.tsv"));
  c.set("base.checkpoint", tmp.file("files/base.ckpt"));
  c.validate();

  cmd_prepare(c);
  const json counts = read_json(tmp.file("out/data/manifest.json")).at("counts");
  CHECK(counts.at("corpus") == d.corpus.size());
  CHECK(counts.at("train_queries") == d.train_queries.size());
  CHECK(counts.at("test_queries") == d.test_queries.size());
  CHECK(counts.at("qrels_queries") == d.qrels.size());
  CHECK(counts.at("teacher_pairs") == rows.size());

  cmd_train(c, "rgpl");
  CHECK(load_train_log(tmp.file("out/train_rgpl_k100/train_log.jsonl")).refreshes.size() == 2);
  cmd_eval(c, "base", "", "");
  CHECK(fs::exists(tmp.file("out/eval_files/ndcg@10.tsv")));

  SUBCASE("a teacher table missing a needed pair fails with the pair") {
    rows.erase(std::remove_if(rows.begin(), rows.end(),
                              [&](const auto& r) { return r.first.first == d.train_queries[0].id; }),
               rows.end());
    save_teacher_table(rows, tmp.file("files/teacher.tsv"));
    CHECK_THROWS_WITH_AS(cmd_train(c, "gpl"), doctest::Contains(d.train_queries[0].id.c_str()), Error);
  }
}

TEST_CASE("command line") {
  testing::TempDir tmp("cli");
  testing::write_file(tmp.file("tiny.cfg"), kTinyConfig);
  const std::string common = "--config " + tmp.file("tiny.cfg") + " --out " + tmp.file("o");

  SUBCASE("full flow") {
    auto r = run_cli("prepare " + common, tmp);
    REQUIRE(r.status == 0);
    CHECK(r.out.find("base ndcg@10") != std::string::npos);
    REQUIRE(run_cli("train " + common + " --mode gpl", tmp).status == 0);
    REQUIRE(run_cli("train " + common + " --k 150", tmp).status == 0);
    CHECK(fs::exists(tmp.file("o/train_rgpl_k150/model.ckpt")));
    r = run_cli("eval " + common + " --checkpoint " + tmp.file("o/train_rgpl_k150/model.ckpt") + " --compare " +
                    tmp.file("o/eval_base/ndcg@10.tsv"),
                tmp);
    REQUIRE(r.status == 0);
    CHECK(fs::exists(tmp.file("o/eval_train_rgpl_k150/significance_ndcg@10.json")));
    REQUIRE(run_cli("sweep " + common + " --k inf,150 --set train.total_steps=200", tmp).status == 0);
    CHECK(fs::exists(tmp.file("o/sweep/k_inf/model.ckpt")));
    REQUIRE(run_cli("analyze " + common + " --k 150", tmp).status == 0);
    CHECK(fs::exists(tmp.file("o/train_rgpl_k150/analysis/loss.csv")));
  }
  SUBCASE("errors are structured JSON on stderr") {
    testing::write_file(tmp.file("bad.cfg"), "seed = 1\nbogus = 2\n");
    auto r = run_cli("prepare --config " + tmp.file("bad.cfg"), tmp);
    CHECK(r.status == 2);
    const json err = json::parse(r.err);
    CHECK(err.at("error").at("command") == "prepare");
    CHECK(err.at("error").at("message").get<std::string>().find("unknown field 'bogus'") != std::string::npos);

    r = run_cli("train " + common, tmp);
    CHECK(r.status == 2);
    CHECK(json::parse(r.err).at("error").at("message").get<std::string>().find("base checkpoint") != std::string::npos);

    r = run_cli("sweep " + common + " --k 10,abc", tmp);
    CHECK(r.status == 2);
    CHECK(r.err.find("invalid k value 'abc'") != std::string::npos);

    r = run_cli("prepare " + common + " --set train.k", tmp);
    CHECK(r.status == 2);
  }
  SUBCASE("unknown subcommand is a usage error") {
    CHECK(run_cli("frobnicate", tmp).status != 0);
  }
}

TEST_SUITE("properties") {
  TEST_CASE("prepare outputs depend only on the configuration") {
    for (auto seed : testing::kPropertySeeds) {
      CAPTURE(seed);
      testing::TempDir tmp("prop_prepare");
      auto a = tiny_config(tmp.file("a")), b = tiny_config(tmp.file("b"));
      a.base_steps = b.base_steps = 20;
      a.reseed(seed);
      b.reseed(seed);
      cmd_prepare(a);
      cmd_prepare(b);
      for (const char* sub : {"data", "models", "eval_base"}) {
        CHECK(read_json(tmp.file(std::string("a/") + sub + "/manifest.json")) ==
              read_json(tmp.file(std::string("b/") + sub + "/manifest.json")));
      }
    }
  }
}
