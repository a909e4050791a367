#pragma once

// Synthetic forums with planted expertise. Topic t owns the dialogue-register
// tokens "t{t}_{i}"; profiles use the disjoint professional register
// "p_t{t}_{i}" (a 1:1 synonym map), so profiles only relate to dialogues
// through learned alignment. Within a topic each doctor has a sub-specialty
// band of the vocabulary that its dialogues favour with probability
// specialty_focus (profile_focus for the profile).

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "docrec/corpus.hpp"
#include "docrec/error.hpp"
#include "docrec/rng.hpp"

namespace docrec {

struct SynthConfig {
  std::size_t n_topics = 5;
  std::size_t n_doctors = 20;
  std::size_t dialogues_per_doctor = 40;
  std::size_t turns_per_dialogue = 4;
  std::size_t tokens_per_turn = 20;
  std::size_t tokens_per_profile = 40;
  std::size_t vocab_per_topic = 40;
  std::size_t shared_noise_vocab = 200;
  double noise_fraction = 0.3;
  double expertise_concentration = 0.9;
  double specialty_focus = 0.8;
  double profile_focus = 0.0;  // profiles name the broad topic unless raised
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::config, "synth: " + m); };
    if (n_topics < 1) bad("n_topics must be >= 1");
    if (n_doctors < 1) bad("n_doctors must be >= 1");
    if (dialogues_per_doctor < 1) bad("dialogues_per_doctor must be >= 1");
    if (turns_per_dialogue < 1) bad("turns_per_dialogue must be >= 1");
    if (tokens_per_turn < 1) bad("tokens_per_turn must be >= 1");
    if (tokens_per_profile < 1) bad("tokens_per_profile must be >= 1");
    if (vocab_per_topic < 1) bad("vocab_per_topic must be >= 1");
    if (!(noise_fraction >= 0.0 && noise_fraction < 1.0)) bad("noise_fraction must lie in [0, 1)");
    if (noise_fraction > 0.0 && shared_noise_vocab < 1) bad("noise needs a shared_noise_vocab");
    if (!(expertise_concentration > 0.0 && expertise_concentration <= 1.0))
      bad("expertise_concentration must lie in (0, 1]");
    if (!(specialty_focus >= 0.0 && specialty_focus <= 1.0)) bad("specialty_focus must lie in [0, 1]");
    if (!(profile_focus >= 0.0 && profile_focus <= 1.0)) bad("profile_focus must lie in [0, 1]");
  }
};

struct SynthGroundTruth {
  std::map<std::string, std::map<std::size_t, double>> doctor_mixture;
  std::map<std::string, std::size_t> dialogue_topic;

  static std::string topic_token(std::size_t topic, std::size_t i) {
    return "t" + std::to_string(topic) + "_" + std::to_string(i);
  }
  static std::string profile_token(std::size_t topic, std::size_t i) {
    return "p_" + topic_token(topic, i);
  }
  static std::string noise_token(std::size_t i) { return "n" + std::to_string(i); }

  // Planted topic of a dialogue-register token, if any.
  static std::optional<std::size_t> topic_of(const std::string& token) {
    if (token.size() < 4 || token[0] != 't') return std::nullopt;
    const auto us = token.find('_');
    if (us == std::string::npos || us == 1) return std::nullopt;
    try {
      return static_cast<std::size_t>(std::stoul(token.substr(1, us - 1)));
    } catch (...) {
      return std::nullopt;
    }
  }
};

struct SynthCorpus {
  Corpus corpus;
  SynthGroundTruth truth;
};

inline nlohmann::json to_json(const SynthGroundTruth& g) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [doc, mix] : g.doctor_mixture) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [t, w] : mix) m[std::to_string(t)] = w;
    j[doc] = m;
  }
  for (const auto& [dlg, t] : g.dialogue_topic) j[dlg] = t;
  return j;
}

namespace detail {

inline std::string pad3(std::size_t v) {
  std::string s = std::to_string(v);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

}  // namespace detail

inline SynthCorpus generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t slots = (cfg.n_doctors + cfg.n_topics - 1) / cfg.n_topics;
  const std::size_t band = std::max<std::size_t>(1, cfg.vocab_per_topic / slots);

  std::vector<Doctor> doctors;
  std::vector<Dialogue> dialogues;
  SynthGroundTruth truth;

  for (std::size_t k = 0; k < cfg.n_doctors; ++k) {
    const std::size_t primary = k % cfg.n_topics;
    const std::size_t slot = (k / cfg.n_topics) % slots;
    std::map<std::size_t, double> mix;
    if (cfg.n_topics == 1 || cfg.expertise_concentration >= 1.0) {
      mix[primary] = 1.0;
    } else {
      const std::size_t secondary =
          (primary + 1 + (k / cfg.n_topics) % (cfg.n_topics - 1)) % cfg.n_topics;
      mix[primary] = cfg.expertise_concentration;
      mix[secondary] = 1.0 - cfg.expertise_concentration;
    }

    auto draw_topic = [&] {
      double u = rng.uniform();
      for (const auto& [t, w] : mix) {
        if (u < w) return t;
        u -= w;
      }
      return mix.rbegin()->first;
    };
    auto draw_index = [&](double focus) {
      if (rng.uniform() < focus) {
        const std::size_t lo = std::min(slot * band, cfg.vocab_per_topic - 1);
        const std::size_t hi = std::min(lo + band, cfg.vocab_per_topic);
        return lo + static_cast<std::size_t>(rng.index(hi - lo));
      }
      return static_cast<std::size_t>(rng.index(cfg.vocab_per_topic));
    };
    auto dialogue_token = [&](std::size_t topic) {
      if (cfg.noise_fraction > 0.0 && rng.uniform() < cfg.noise_fraction)
        return SynthGroundTruth::noise_token(static_cast<std::size_t>(rng.index(cfg.shared_noise_vocab)));
      return SynthGroundTruth::topic_token(topic, draw_index(cfg.specialty_focus));
    };

    Doctor d;
    d.doctor_id = "doc" + detail::pad3(k);
    d.department = std::to_string(primary);
    std::vector<std::string> profile;
    for (std::size_t i = 0; i < cfg.tokens_per_profile; ++i)
      profile.push_back(SynthGroundTruth::profile_token(draw_topic(), draw_index(cfg.profile_focus)));
    d.profile_text = join_tokens(profile);
    truth.doctor_mixture[d.doctor_id] = mix;

    for (std::size_t j = 0; j < cfg.dialogues_per_doctor; ++j) {
      Dialogue g;
      g.dialogue_id = "dlg" + detail::pad3(k) + "_" + detail::pad3(j);
      g.doctor_id = d.doctor_id;
      const std::size_t topic = draw_topic();
      for (std::size_t t = 0; t < cfg.turns_per_dialogue; ++t) {
        std::vector<std::string> toks;
        for (std::size_t i = 0; i < cfg.tokens_per_turn; ++i) toks.push_back(dialogue_token(topic));
        g.turns.push_back({t % 2 == 0 ? Role::patient : Role::doctor, join_tokens(toks)});
      }
      truth.dialogue_topic[g.dialogue_id] = topic;
      dialogues.push_back(std::move(g));
    }
    doctors.push_back(std::move(d));
  }
  return {Corpus(std::move(doctors), std::move(dialogues)), std::move(truth)};
}

}  // namespace docrec
