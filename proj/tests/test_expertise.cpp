#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "docrec/expertise.hpp"

using namespace docrec;
using Catch::Approx;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(r, c);
  for (double& x : t.data()) x = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("attention with a single key returns its value", "[expertise][attention]") {
  Tape tape(Tape::no_grad);
  Var q = tape.constant(random_matrix(1, 4, 1));
  Var k = tape.constant(random_matrix(1, 4, 2));
  Var v = tape.constant(random_matrix(1, 3, 3));
  AttentionOutput a = attention(q, k, v);
  CHECK(a.weights.value()[0] == 1.0);
  CHECK(a.h.value() == v.value());
}

TEST_CASE("identical keys give uniform weights", "[expertise][attention]") {
  Tape tape(Tape::no_grad);
  Tensor row = random_matrix(1, 6, 4);
  Tensor keys(5, 6);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) keys(i, j) = row[j];
  AttentionOutput a = attention(tape.constant(random_matrix(1, 6, 5)), tape.constant(keys),
                                tape.constant(random_matrix(5, 2, 6)));
  for (double w : a.weights.value().data()) CHECK(std::abs(w - 0.2) <= 1e-12);
}

TEST_CASE("attention weights form a distribution", "[expertise][attention]") {
  Tape tape(Tape::no_grad);
  AttentionOutput a = attention(tape.constant(random_matrix(1, 8, 7)), tape.constant(random_matrix(9, 8, 8)),
                                tape.constant(random_matrix(9, 8, 9)));
  const auto w = a.weights.value().data();
  CHECK(std::accumulate(w.begin(), w.end(), 0.0) == Approx(1.0).margin(1e-12));
  for (double x : w) CHECK(x > 0.0);
}

TEST_CASE("attention rejects empty and mismatched inputs", "[expertise][attention]") {
  Tape tape(Tape::no_grad);
  CHECK_THROWS_WITH(attention(tape.constant(Tensor(1, 4)), tape.constant(Tensor(0, 4)),
                              tape.constant(Tensor(0, 4))),
                    Catch::Matchers::ContainsSubstring("no keys"));
  CHECK_THROWS_AS(attention(tape.constant(Tensor(1, 4)), tape.constant(Tensor(2, 3)),
                            tape.constant(Tensor(2, 3))),
                  Error);
}

TEST_CASE("doctor embedding is invariant to dialogue order", "[expertise]") {
  DoctorEncoder enc(ExpertiseConfig{12, 3, DoctorMode::full, 11});
  Tensor profile = random_matrix(1, 12, 12);
  Tensor dialogues = random_matrix(7, 12, 13);
  std::vector<std::size_t> perm = {4, 0, 6, 2, 5, 1, 3};
  Tensor shuffled(7, 12);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 12; ++j) shuffled(i, j) = dialogues(perm[i], j);
  DoctorEmbedding a = enc.embed(profile, dialogues);
  DoctorEmbedding b = enc.embed(profile, shuffled);
  for (std::size_t j = 0; j < 12; ++j) CHECK(std::abs(a.vector[j] - b.vector[j]) <= 1e-9);
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t i = 0; i < 7; ++i)
      CHECK(a.attention_maps(h, perm[i]) == Approx(b.attention_maps(h, i)).margin(1e-12));
}

TEST_CASE("single-head identity projections reduce to plain attention", "[expertise]") {
  DoctorEncoder enc(ExpertiseConfig{4, 1, DoctorMode::full, 0});
  enc.wq(0).value = Tensor::identity(4);
  enc.wk(0).value = Tensor::identity(4);
  enc.wv(0).value = Tensor::identity(4);
  enc.wo().value = Tensor::identity(4);
  Tensor p = random_matrix(1, 4, 21), d = random_matrix(3, 4, 22);
  DoctorEmbedding e = enc.embed(p, d);
  Tape tape(Tape::no_grad);
  Tensor ref = attention(tape.constant(p), tape.constant(d), tape.constant(d)).h.value();
  for (std::size_t j = 0; j < 4; ++j) CHECK(e.vector[j] == Approx(ref[j]).margin(1e-15));
}

TEST_CASE("doctor encoder shapes per mode", "[expertise]") {
  Tensor p = random_matrix(1, 12, 31), d = random_matrix(4, 12, 32);
  for (auto m : {DoctorMode::full, DoctorMode::no_profile, DoctorMode::no_dialogue, DoctorMode::dot_att,
                 DoctorMode::cat_att, DoctorMode::profile_only, DoctorMode::dialogue_mean,
                 DoctorMode::profile_dialogue}) {
    DoctorEncoder enc(ExpertiseConfig{12, 4, m, 1});
    DoctorEmbedding e = enc.embed(p, d);
    CHECK(e.vector.rows() == 1);
    CHECK(e.vector.cols() == 12);
    if (is_multi_head(m)) CHECK(e.attention_maps.rows() == 4);
    CHECK(parse_doctor_mode(to_string(m)) == m);
  }
  DoctorEncoder po(ExpertiseConfig{12, 4, DoctorMode::profile_only, 1});
  CHECK(po.embed(p, Tensor(0, 12)).vector == p);
  CHECK(po.parameters().empty());
  DoctorEncoder dm(ExpertiseConfig{12, 4, DoctorMode::dialogue_mean, 1});
  for (std::size_t j = 0; j < 12; ++j)
    CHECK(dm.embed(p, d).vector[j] == Approx((d(0, j) + d(1, j) + d(2, j) + d(3, j)) / 4.0));
}

TEST_CASE("no_dialogue attends over the profile alone", "[expertise]") {
  DoctorEncoder enc(ExpertiseConfig{12, 3, DoctorMode::no_dialogue, 2});
  DoctorEmbedding e = enc.embed(random_matrix(1, 12, 1), Tensor(0, 12));
  CHECK(e.attention_maps.cols() == 1);
  for (std::size_t h = 0; h < 3; ++h) CHECK(e.attention_maps(h, 0) == 1.0);
}

TEST_CASE("heads must divide the dimension", "[expertise]") {
  CHECK_THROWS_WITH(DoctorEncoder(ExpertiseConfig{96, 5, DoctorMode::full, 0}),
                    Catch::Matchers::ContainsSubstring("not divisible"));
  CHECK_NOTHROW(DoctorEncoder(ExpertiseConfig{96, 6, DoctorMode::full, 0}));
  CHECK_THROWS_AS(DoctorEncoder(ExpertiseConfig{96, 0, DoctorMode::full, 0}), Error);
  DoctorEncoder enc(ExpertiseConfig{12, 3, DoctorMode::full, 0});
  CHECK_THROWS_WITH(enc.embed(random_matrix(1, 12, 1), Tensor(0, 12)),
                    Catch::Matchers::ContainsSubstring("no keys"));
}

TEST_CASE("doctor encoder gradients", "[expertise][grad]") {
  for (auto m : {DoctorMode::full, DoctorMode::no_profile, DoctorMode::cat_att}) {
    DoctorEncoder enc(ExpertiseConfig{6, 2, m, 3});
    Tensor p = random_matrix(1, 6, 41), d = random_matrix(3, 6, 42), w = random_matrix(6, 1, 43);
    auto params = enc.parameters();
    auto fn = [&](Tape& tape) {
      DoctorEncoding e = enc.encode(tape, tape.constant(p), tape.constant(d));
      return sum(matmul(e.vector, tape.constant(w)));
    };
    CHECK(grad_check(fn, params, 1e-5).max_rel_error < 1e-6);
  }
}

TEST_CASE("explanations rank tokens by attention mass", "[expertise][explain]") {
  Tensor maps(2, 3);
  maps(0, 0) = 0.7, maps(0, 1) = 0.2, maps(0, 2) = 0.1;
  maps(1, 0) = 0.1, maps(1, 1) = 0.1, maps(1, 2) = 0.8;
  std::vector<std::vector<std::string>> toks = {{"fever", "cough", "fever"}, {"cough"}, {"rash"}};
  auto e = explain_attention(maps, toks, 2);
  REQUIRE(e.size() == 2);
  CHECK(e[0].tokens[0].first == "cough");
  CHECK(e[0].tokens[0].second == Approx(0.9));
  CHECK(e[0].tokens[1].first == "fever");
  CHECK(e[1].tokens[0].first == "rash");
  CHECK(e[1].weights == std::vector<double>{0.1, 0.1, 0.8});

  auto lex = explain_attention(maps, toks, 5, {"fever"});
  CHECK(lex[0].tokens.size() == 1);
  CHECK_THROWS_AS(explain_attention(maps, {{"a"}}, 2), Error);
}
