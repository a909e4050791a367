#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "docrec/synth.hpp"

using namespace docrec;

namespace {

SynthConfig tiny() {
  SynthConfig c;
  c.n_doctors = 6;
  c.n_topics = 3;
  c.dialogues_per_doctor = 5;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("synthetic corpus shape", "[synth]") {
  SynthCorpus s = generate(tiny());
  CHECK(s.corpus.doctors().size() == 6);
  CHECK(s.corpus.dialogues().size() == 30);
  for (const Dialogue& g : s.corpus.dialogues()) {
    CHECK(g.turns.size() == 4);
    CHECK(g.turns.front().role == Role::patient);
    CHECK(tokenize(g.turns.front().text, {}, true).size() == 20);
  }
  for (const Doctor& d : s.corpus.doctors()) CHECK(tokenize(d.profile_text, {}, true).size() == 40);
  CHECK(s.truth.dialogue_topic.size() == 30);
}

TEST_CASE("synthetic corpus is seeded", "[synth]") {
  SynthCorpus a = generate(tiny()), b = generate(tiny());
  SynthConfig other = tiny();
  other.seed = 10;
  SynthCorpus c = generate(other);
  CHECK(a.corpus.dialogues()[3].turns[1].text == b.corpus.dialogues()[3].turns[1].text);
  CHECK(a.corpus.dialogues()[3].turns[1].text != c.corpus.dialogues()[3].turns[1].text);
  CHECK(to_json(a.truth) == to_json(b.truth));
}

TEST_CASE("mixtures follow the expertise concentration", "[synth]") {
  SynthCorpus s = generate(tiny());
  for (const auto& [doc, mix] : s.truth.doctor_mixture) {
    REQUIRE(mix.size() == 2);
    double total = 0.0;
    for (auto [t, w] : mix) total += w;
    CHECK(total == Catch::Approx(1.0));
    const std::size_t primary = std::stoul(s.corpus.doctor(doc).department);
    CHECK(mix.at(primary) == 0.9);
  }
  SynthConfig pure = tiny();
  pure.expertise_concentration = 1.0;
  for (const auto& [doc, mix] : generate(pure).truth.doctor_mixture) CHECK(mix.size() == 1);
}

TEST_CASE("noise-free dialogues use only their planted topic", "[synth]") {
  SynthConfig c = tiny();
  c.noise_fraction = 0.0;
  c.expertise_concentration = 1.0;
  SynthCorpus s = generate(c);
  for (const Dialogue& g : s.corpus.dialogues()) {
    const std::size_t topic = s.truth.dialogue_topic.at(g.dialogue_id);
    CHECK(topic == std::stoul(s.corpus.doctor(g.doctor_id).department));
    for (const Turn& t : g.turns)
      for (const auto& tok : tokenize(t.text, {}, true)) CHECK(SynthGroundTruth::topic_of(tok) == topic);
  }
}

TEST_CASE("noise fraction is respected on average", "[synth]") {
  SynthConfig c = tiny();
  c.n_doctors = 10;
  c.dialogues_per_doctor = 20;
  SynthCorpus s = generate(c);
  std::size_t noise = 0, total = 0;
  for (const Dialogue& g : s.corpus.dialogues())
    for (const Turn& t : g.turns)
      for (const auto& tok : tokenize(t.text, {}, true)) {
        ++total;
        if (!SynthGroundTruth::topic_of(tok)) ++noise;
      }
  CHECK(static_cast<double>(noise) / static_cast<double>(total) == Catch::Approx(0.3).margin(0.02));
}

TEST_CASE("profiles use a separate register", "[synth]") {
  SynthCorpus s = generate(tiny());
  for (const Doctor& d : s.corpus.doctors())
    for (const auto& tok : tokenize(d.profile_text, {}, true)) {
      CHECK(tok.rfind("p_t", 0) == 0);
      CHECK_FALSE(SynthGroundTruth::topic_of(tok));
    }
}

TEST_CASE("token helpers", "[synth]") {
  CHECK(SynthGroundTruth::topic_token(3, 12) == "t3_12");
  CHECK(SynthGroundTruth::profile_token(3, 12) == "p_t3_12");
  CHECK(SynthGroundTruth::topic_of("t3_12") == 3u);
  CHECK(SynthGroundTruth::topic_of("t12_0") == 12u);
  CHECK_FALSE(SynthGroundTruth::topic_of("n17"));
  CHECK_FALSE(SynthGroundTruth::topic_of("tx_1"));
  CHECK_FALSE(SynthGroundTruth::topic_of("the"));
}

TEST_CASE("synthetic config validation", "[synth]") {
  SynthConfig c = tiny();
  c.noise_fraction = 1.0;
  CHECK_THROWS_WITH(generate(c), Catch::Matchers::ContainsSubstring("noise_fraction"));
  c = tiny();
  c.expertise_concentration = 0.0;
  CHECK_THROWS_AS(generate(c), Error);
  c = tiny();
  c.n_doctors = 0;
  CHECK_THROWS_AS(generate(c), Error);
}

TEST_CASE("synthetic corpora survive a serialize round-trip", "[synth]") {
  SynthCorpus s = generate(tiny());
  std::ostringstream d, g;
  save_corpus(s.corpus, d, g);
  std::istringstream d2(d.str()), g2(g.str());
  Corpus back = load_corpus(d2, g2);
  CHECK(back.dialogues().size() == s.corpus.dialogues().size());
  std::ostringstream d3, g3;
  save_corpus(back, d3, g3);
  CHECK(d3.str() == d.str());
  CHECK(g3.str() == g.str());
}

TEST_CASE("dialogue topic frequencies match the mixture within three sigma", "[synth]") {
  SynthConfig c;
  c.seed = 21;
  SynthCorpus s = generate(c);
  for (const Doctor& d : s.corpus.doctors()) {
    const auto& mix = s.truth.doctor_mixture.at(d.doctor_id);
    for (auto [topic, w] : mix) {
      std::size_t hits = 0;
      for (const auto& id : d.dialogue_ids) hits += s.truth.dialogue_topic.at(id) == topic;
      const double n = static_cast<double>(d.dialogue_ids.size());
      const double sigma = std::sqrt(w * (1.0 - w) / n);
      CHECK(std::abs(static_cast<double>(hits) / n - w) <= 3.0 * sigma + 1e-12);
    }
  }
}
