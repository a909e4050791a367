#pragma once

// Doctor encoder: the profile embedding queries a multi-head attention over
// the doctor's dialogue embeddings,
//   h_j = softmax((e_p Wq_j)(D Wk_j)^T / sqrt(dim)) (D Wv_j)
//   e_D = [h_1 .. h_l] Wo
// plus the ablation and single-attention variants.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "docrec/corpus.hpp"
#include "docrec/error.hpp"
#include "docrec/rng.hpp"
#include "docrec/tensor.hpp"

namespace docrec {

enum class DoctorMode {
  full,             // profile-queried multi-head attention over dialogues
  no_profile,       // learned global query replaces the profile
  no_dialogue,      // profile attends to itself only
  dot_att,          // single dot-product attention, no projections
  cat_att,          // single additive (concat) attention
  profile_only,     // e_D = e_p
  dialogue_mean,    // e_D = mean of dialogue embeddings
  profile_dialogue  // e_D = (e_p + mean dialogues) / 2
};

inline const char* to_string(DoctorMode m) {
  switch (m) {
    case DoctorMode::full: return "full";
    case DoctorMode::no_profile: return "no_profile";
    case DoctorMode::no_dialogue: return "no_dialogue";
    case DoctorMode::dot_att: return "dot_att";
    case DoctorMode::cat_att: return "cat_att";
    case DoctorMode::profile_only: return "profile_only";
    case DoctorMode::dialogue_mean: return "dialogue_mean";
    case DoctorMode::profile_dialogue: return "profile_dialogue";
  }
  return "?";
}

inline DoctorMode parse_doctor_mode(const std::string& s) {
  for (auto m : {DoctorMode::full, DoctorMode::no_profile, DoctorMode::no_dialogue,
                 DoctorMode::dot_att, DoctorMode::cat_att, DoctorMode::profile_only,
                 DoctorMode::dialogue_mean, DoctorMode::profile_dialogue})
    if (s == to_string(m)) return m;
  fail(ErrorKind::config, "unknown doctor encoder mode \"" + s + "\"");
}

inline bool uses_dialogues(DoctorMode m) {
  return m != DoctorMode::no_dialogue && m != DoctorMode::profile_only;
}

inline bool is_multi_head(DoctorMode m) {
  return m == DoctorMode::full || m == DoctorMode::no_profile || m == DoctorMode::no_dialogue;
}

struct AttentionOutput {
  Var h;        // 1 x dim
  Var weights;  // 1 x n
};

// Scaled dot-product attention for a single query row.
inline AttentionOutput attention(Var q, Var k, Var v) {
  if (k.rows() == 0) fail(ErrorKind::validation, "attention: no keys (doctor without dialogues)");
  if (q.rows() != 1 || q.cols() != k.cols() || k.rows() != v.rows())
    fail(ErrorKind::shape, "attention: shape mismatch Q" + q.value().shape() + " K" +
                               k.value().shape() + " V" + v.value().shape());
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  Var w = row_softmax(scale(matmul_nt(q, k), inv_sqrt));
  return {matmul(w, v), w};
}

struct ExpertiseConfig {
  std::size_t dim = 96;
  std::size_t heads = 6;
  DoctorMode mode = DoctorMode::full;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return dim / heads; }

  void validate() const {
    if (heads < 1) fail(ErrorKind::config, "heads must be >= 1");
    if (is_multi_head(mode) && dim % heads != 0)
      fail(ErrorKind::config, "dim " + std::to_string(dim) + " is not divisible by " +
                                  std::to_string(heads) + " heads");
  }
};

struct DoctorEncoding {
  Var vector;                 // 1 x d
  std::vector<Var> attention; // per head, 1 x n (empty for bypass modes)
};

struct DoctorEmbedding {
  Tensor vector;          // 1 x d
  Tensor attention_maps;  // heads x n
};

class DoctorEncoder {
public:
  DoctorEncoder() = default;

  explicit DoctorEncoder(const ExpertiseConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg.seed);
    const std::size_t d = cfg.dim;
    auto make = [&](std::string name, std::size_t r, std::size_t c) {
      Param p(std::move(name), Tensor(r, c));
      xavier_uniform(p.value, rng);
      return p;
    };
    if (is_multi_head(cfg.mode)) {
      const std::size_t hd = cfg.head_dim();
      for (std::size_t j = 0; j < cfg.heads; ++j) {
        wq_.push_back(make("Wq." + std::to_string(j), d, hd));
        wk_.push_back(make("Wk." + std::to_string(j), d, hd));
        wv_.push_back(make("Wv." + std::to_string(j), d, hd));
      }
      wo_ = make("Wo", cfg.heads * hd, d);
      if (cfg.mode == DoctorMode::no_profile) learned_query_ = make("learned_query", 1, d);
    }
    if (cfg.mode == DoctorMode::cat_att) {
      w_cat_ = make("Wcat", 2 * d, d);
      v_cat_ = make("vcat", d, 1);
    }
  }

  const ExpertiseConfig& config() const noexcept { return cfg_; }
  DoctorMode mode() const noexcept { return cfg_.mode; }

  std::vector<Param*> parameters() { return collect<Param*>(*this); }
  std::vector<const Param*> parameters() const { return collect<const Param*>(*this); }

  // Direct access for tests that pin weights.
  Param& wq(std::size_t j) { return wq_.at(j); }
  Param& wk(std::size_t j) { return wk_.at(j); }
  Param& wv(std::size_t j) { return wv_.at(j); }
  Param& wo() { return wo_; }
  Param& learned_query() { return learned_query_; }

  // profile: 1 x d, dialogues: n x d (ignored by profile-only modes).
  DoctorEncoding encode(Tape& tape, Var profile, std::optional<Var> dialogues) const {
    const DoctorMode m = cfg_.mode;
    if (uses_dialogues(m) && (!dialogues || dialogues->rows() == 0))
      fail(ErrorKind::validation, "attention: no keys (doctor without dialogues)");
    switch (m) {
      case DoctorMode::full: return multi_head(tape, profile, *dialogues);
      case DoctorMode::no_profile: return multi_head(tape, tape.param(learned_query_), *dialogues);
      case DoctorMode::no_dialogue: return multi_head(tape, profile, profile);
      case DoctorMode::dot_att: {
        Var w = row_softmax(matmul_nt(profile, *dialogues));
        return {matmul(w, *dialogues), {w}};
      }
      case DoctorMode::cat_att: {
        // s_i = v^T tanh([e_p, e_di] W); the e_p half is shared across rows.
        const std::size_t d = cfg_.dim;
        Var w = tape.param(w_cat_);
        std::vector<std::size_t> top(d), bottom(d);
        for (std::size_t i = 0; i < d; ++i) top[i] = i, bottom[i] = d + i;
        Var wp = gather_rows(w, top);
        Var wd = gather_rows(w, bottom);
        Var hidden = docrec::tanh(add(matmul(*dialogues, wd), matmul(profile, wp)));
        Var scores = transpose(matmul(hidden, tape.param(v_cat_)));
        Var a = row_softmax(scores);
        return {matmul(a, *dialogues), {a}};
      }
      case DoctorMode::profile_only: return {profile, {}};
      case DoctorMode::dialogue_mean: return {mean_rows(*dialogues), {}};
      case DoctorMode::profile_dialogue:
        return {scale(add(profile, mean_rows(*dialogues)), 0.5), {}};
    }
    fail(ErrorKind::config, "unsupported doctor mode");
  }

  DoctorEmbedding embed(const Tensor& profile, const Tensor& dialogues) const {
    Tape tape(Tape::no_grad);
    std::optional<Var> dv;
    if (dialogues.rows() > 0) dv = tape.constant(dialogues);
    DoctorEncoding enc = encode(tape, tape.constant(profile), dv);
    return materialize(enc);
  }

  static DoctorEmbedding materialize(const DoctorEncoding& enc) {
    DoctorEmbedding out;
    out.vector = enc.vector.value();
    if (!enc.attention.empty()) {
      const std::size_t n = enc.attention.front().cols();
      out.attention_maps = Tensor(enc.attention.size(), n);
      for (std::size_t j = 0; j < enc.attention.size(); ++j)
        for (std::size_t i = 0; i < n; ++i) out.attention_maps(j, i) = enc.attention[j].value()[i];
    }
    return out;
  }

private:
  template <class Ptr, class Self>
  static std::vector<Ptr> collect(Self& self) {
    std::vector<Ptr> out;
    for (std::size_t j = 0; j < self.wq_.size(); ++j) {
      out.push_back(&self.wq_[j]);
      out.push_back(&self.wk_[j]);
      out.push_back(&self.wv_[j]);
    }
    for (auto* p : {&self.wo_, &self.learned_query_, &self.w_cat_, &self.v_cat_})
      if (!p->name.empty()) out.push_back(p);
    return out;
  }

  DoctorEncoding multi_head(Tape& tape, Var query, Var keys) const {
    DoctorEncoding out;
    std::vector<Var> heads;
    for (std::size_t j = 0; j < cfg_.heads; ++j) {
      Var q = matmul(query, tape.param(wq_[j]));
      Var k = matmul(keys, tape.param(wk_[j]));
      Var v = matmul(keys, tape.param(wv_[j]));
      AttentionOutput a = attention(q, k, v);
      heads.push_back(a.h);
      out.attention.push_back(a.weights);
    }
    out.vector = matmul(concat_cols(heads), tape.param(wo_));
    return out;
  }

  ExpertiseConfig cfg_;
  std::vector<Param> wq_, wk_, wv_;
  Param wo_;
  Param learned_query_;
  Param w_cat_;
  Param v_cat_;
};

// ---------------------------------------------------------------------------
// Attention keyword explanation

struct HeadExplanation {
  std::vector<double> weights;                        // over dialogues
  std::vector<std::pair<std::string, double>> tokens; // top-k, descending
};

// Ranks tokens per head by the summed attention weight of the dialogues that
// contain them. `lexicon`, when non-empty, restricts candidate tokens.
inline std::vector<HeadExplanation> explain_attention(
    const Tensor& attention_maps, const std::vector<std::vector<std::string>>& dialogue_tokens,
    std::size_t k, const TermSet& lexicon = {}) {
  if (attention_maps.cols() != dialogue_tokens.size())
    fail(ErrorKind::shape, "explain: " + std::to_string(dialogue_tokens.size()) +
                               " dialogues for attention map " + attention_maps.shape());
  std::vector<std::vector<std::string>> distinct;
  for (const auto& toks : dialogue_tokens) {
    std::vector<std::string> u;
    for (const auto& t : toks)
      if (lexicon.empty() || lexicon.contains(t)) u.push_back(t);
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    distinct.push_back(std::move(u));
  }
  std::vector<HeadExplanation> out;
  for (std::size_t h = 0; h < attention_maps.rows(); ++h) {
    HeadExplanation e;
    std::map<std::string, double> score;
    for (std::size_t i = 0; i < distinct.size(); ++i) {
      const double w = attention_maps(h, i);
      e.weights.push_back(w);
      for (const auto& t : distinct[i]) score[t] += w;
    }
    std::vector<std::pair<std::string, double>> ranked(score.begin(), score.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > k) ranked.resize(k);
    e.tokens = std::move(ranked);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace docrec
