#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "docrec/ranker.hpp"
#include "docrec/synth.hpp"

using namespace docrec;
using Catch::Approx;

namespace {

struct Fixture {
  SynthCorpus synth;
  SplitSpec split;
  Dataset ds;

  explicit Fixture(std::size_t doctors = 4, std::size_t per_doctor = 6, std::size_t pool = 4) {
    SynthConfig c;
    c.n_doctors = doctors;
    c.n_topics = 2;
    c.dialogues_per_doctor = per_doctor;
    c.turns_per_dialogue = 2;
    c.tokens_per_turn = 8;
    c.tokens_per_profile = 10;
    c.seed = 3;
    synth = generate(c);
    split = split_dataset(synth.corpus, 1);
    DatasetOptions o;
    o.hash_buckets = 64;
    o.pool_size = pool;
    ds = build_dataset(synth.corpus, split, o);
  }
};

ModelConfig small_config() {
  ModelConfig c;
  c.encoder = EncoderConfig{64, 16, 7};
  c.heads = 2;
  c.mlp_hidden = 8;
  c.neg_ratio = 3;
  c.pool_size = 4;
  c.batch = 16;
  c.max_epochs = 3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("weighted loss matches the closed form", "[ranker][loss]") {
  const double s[] = {0.9, 0.2, 0.4};
  const double y[] = {1.0, 0.0, 0.0};
  const double expect = -(5.0 * std::log(0.9) + std::log(0.8) + std::log(0.6));
  CHECK(loss(s, y, 5.0) == Approx(expect).epsilon(1e-12));
  const double clamp_s[] = {0.0};
  const double clamp_y[] = {1.0};
  CHECK(loss(clamp_s, clamp_y, 5.0) == Approx(-5.0 * std::log(1e-12)));
}

TEST_CASE("score is a sigmoid of the mlp", "[ranker]") {
  Mlp mlp("m", 4, 3, 1);
  mlp.w1().value.fill(0.0);
  mlp.b_out().value = Tensor::scalar(0.0);
  CHECK(score(Tensor::row({1, 2}), Tensor::row({3, 4}), mlp) == 0.5);
  mlp.b_out().value = Tensor::scalar(2.0);
  CHECK(score(Tensor::row({1, 2}), Tensor::row({3, 4}), mlp) == Approx(1.0 / (1.0 + std::exp(-2.0))));
}

TEST_CASE("negative sampling", "[ranker]") {
  const std::size_t pool[] = {0, 1, 2, 3, 4, 5};
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    auto n = sample_negatives(pool, 2, 5, rng);
    std::set<std::size_t> u(n.begin(), n.end());
    CHECK(u.size() == 5);
    CHECK_FALSE(u.contains(2));
  }
  CHECK_THROWS_WITH(sample_negatives(pool, 2, 6, rng), Catch::Matchers::ContainsSubstring("pool too small"));
}

TEST_CASE("ranking ties break by id", "[ranker]") {
  RankResult r = sort_ranking({{"b", 0.5}, {"a", 0.5}, {"c", 0.9}});
  CHECK(r.ids() == std::vector<std::string>{"c", "a", "b"});
}

TEST_CASE("model config validation and json", "[ranker]") {
  ModelConfig c = small_config();
  CHECK(to_json(model_config_from_json(to_json(c))) == to_json(c));
  c.heads = 3;
  CHECK_THROWS_WITH(c.validate(), Catch::Matchers::ContainsSubstring("not divisible"));
  c = small_config();
  c.lambda = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(model_config_from_json({{"dim", 3}}), Error);
}

TEST_CASE("full model gradient check on a small config", "[ranker][grad]") {
  Fixture f;
  ModelConfig cfg = small_config();
  RecommenderModel model(cfg);
  Embedder emb(model.encoder());
  Rng rng(2);
  const std::size_t order[] = {0};
  auto examples = make_examples(f.ds, f.ds.train_queries, order, cfg.neg_ratio, rng);
  REQUIRE(examples.size() == 4);
  auto params = model.parameters();
  auto fn = [&](Tape& tape) { return batch_loss(tape, model, f.ds, emb, f.ds.train_queries, examples); };
  GradCheckResult r = grad_check(fn, params, 1e-4);
  INFO(r.worst_param << "[" << r.worst_index << "]");
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("training lowers the training loss and is deterministic", "[ranker][train]") {
  Fixture f(4, 10);
  ModelConfig cfg = small_config();
  cfg.max_epochs = 6;
  cfg.patience = 0;
  RecommenderModel a(cfg), b(cfg);
  TrainHistory ha = train(a, f.ds);
  TrainHistory hb = train(b, f.ds);
  CHECK(ha.epochs.size() == 6);
  CHECK(ha.epochs.back().train_loss < ha.epochs.front().train_loss);
  CHECK(a.checkpoint() == b.checkpoint());
  CHECK(to_json(ha) == to_json(hb));
  CHECK(ha.best_val_loss <= ha.initial_val_loss);
}

TEST_CASE("early stopping keeps the best parameters", "[ranker][train]") {
  Fixture f(4, 10);
  ModelConfig cfg = small_config();
  cfg.max_epochs = 30;
  cfg.patience = 2;
  cfg.lr = 0.05;
  RecommenderModel m(cfg);
  TrainHistory h = train(m, f.ds);
  CHECK(h.epochs.size() <= 30);
  if (h.epochs.size() < 30) CHECK(h.epochs.size() == h.best_epoch + 2);
  CHECK(validation_loss(m, f.ds, Embedder(m.encoder())) == Approx(h.best_val_loss).epsilon(1e-12));
}

TEST_CASE("recommender scores agree with the scoring function", "[ranker]") {
  Fixture f;
  RecommenderModel m(small_config());
  Recommender rec(m, f.ds);
  const QueryDoc& q = f.ds.test_queries.front();
  RankResult r = rec.rank(q.doc);
  REQUIRE(r.entries.size() == f.ds.pool.size());
  Tensor qv = rec.encode_query(q.doc);
  for (const auto& [id, s] : r.entries) {
    const std::size_t slot = *rec.slot(f.synth.corpus.doctor_index(id));
    CHECK(s == Approx(score(rec.embedding(slot).vector, qv, m.mlp())).epsilon(1e-12));
  }
  for (std::size_t i = 1; i < r.entries.size(); ++i) CHECK(r.entries[i - 1].second >= r.entries[i].second);
}

TEST_CASE("evaluation skips queries outside the pool", "[ranker][eval]") {
  Fixture f(4, 6, 2);
  REQUIRE(f.ds.pool.size() == 2);
  std::size_t in_pool = 0;
  for (const auto& q : f.ds.test_queries) in_pool += f.ds.in_pool(q.gold) ? 1 : 0;
  auto rank_fn = [&](const QueryDoc&) {
    return sort_ranking({{f.ds.doctor_id(f.ds.pool[0]), 1.0}, {f.ds.doctor_id(f.ds.pool[1]), 0.0}});
  };
  MetricsReport r = evaluate_rankings(f.ds, f.ds.test_queries, rank_fn);
  CHECK(r.overall.count == in_pool);
}

TEST_CASE("bucketed evaluation recombines", "[ranker][eval]") {
  Fixture f(4, 10);
  RecommenderModel m(small_config());
  Recommender rec(m, f.ds);
  MetricsReport r = evaluate(rec, f.ds.test_queries, BucketSpec{BucketKey::department, {}});
  CHECK(r.bucket_key == "department");
  double weighted = 0.0;
  std::size_t n = 0;
  for (const auto& [k, s] : r.buckets) weighted += s.map * double(s.count), n += s.count;
  CHECK(n == r.overall.count);
  CHECK(weighted / double(n) == Approx(r.overall.map));
}

TEST_CASE("bucket labels", "[ranker][eval]") {
  const std::vector<double> edges = {0, 20, 40};
  CHECK(bucket_label(edges, 0) == "[0,20)");
  CHECK(bucket_label(edges, 20) == "[20,40)");
  CHECK(bucket_label(edges, 1000) == "[40,inf)");
  CHECK(parse_bucket_key("profile_len") == BucketKey::profile_len);
  CHECK_THROWS_AS(parse_bucket_key("nope"), Error);
}

TEST_CASE("explanations cover the doctor's dialogues", "[ranker][explain]") {
  Fixture f;
  RecommenderModel m(small_config());
  Recommender rec(m, f.ds);
  const QueryDoc& q = f.ds.test_queries.front();
  Explanation e = explain(rec, q, q.gold, 5);
  CHECK(e.heads.size() == 2);
  CHECK(e.dialogue_ids.size() == f.ds.doctor_dialogues[q.gold].size());
  for (const auto& h : e.heads) {
    CHECK(h.tokens.size() <= 5);
    double total = 0.0;
    for (double w : h.weights) total += w;
    CHECK(total == Approx(1.0));
  }
  auto j = to_json(e);
  CHECK(j["heads"][0]["head"] == 1);
}

TEST_CASE("doctors without training dialogues are rejected", "[ranker]") {
  Fixture f;
  f.ds.doctor_dialogues[f.ds.pool.front()].clear();
  RecommenderModel m(small_config());
  CHECK_THROWS_WITH(Recommender(m, f.ds), Catch::Matchers::ContainsSubstring("no training dialogues"));
  ModelConfig p = small_config();
  p.mode = DoctorMode::profile_only;
  RecommenderModel po(p);
  CHECK_NOTHROW(Recommender(po, f.ds));
}
