#pragma once

// Stage 1: classify whether a profile and a dialogue belong to the same
// doctor, fine-tuning the shared document encoder before recommendation
// training. The classifier head is discarded afterwards.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "json.hpp"

#include "docrec/checkpoint.hpp"
#include "docrec/dataset.hpp"
#include "docrec/embed.hpp"
#include "docrec/mlp.hpp"
#include "docrec/tensor.hpp"

namespace docrec {

struct PairExample {
  std::size_t doctor = 0;    // whose profile
  std::size_t dialogue = 0;  // corpus dialogue index
  double label = 0.0;
};

struct PretrainConfig {
  std::size_t neg_ratio = 1;
  std::size_t epochs = 30;
  std::size_t batch = 256;
  double lr = 0.008;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  std::size_t hidden = 256;
  double heldout_fraction = 0.1;

  void validate() const {
    if (neg_ratio < 1) fail(ErrorKind::config, "pretrain neg_ratio must be >= 1");
    if (batch < 1) fail(ErrorKind::config, "pretrain batch must be >= 1");
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0))
      fail(ErrorKind::config, "heldout_fraction must lie in (0, 1)");
  }
};

// One positive per (doctor, training dialogue of that doctor); neg_ratio
// negatives pairing the profile with a uniformly drawn training dialogue of a
// different doctor.
inline std::vector<PairExample> make_pairs(const Dataset& ds, const PretrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> all;
  std::vector<std::size_t> owner(ds.dialogues.size(), 0);
  for (std::size_t d = 0; d < ds.doctor_count(); ++d)
    for (std::size_t g : ds.doctor_dialogues[d]) {
      all.push_back(g);
      owner[g] = d;
    }
  std::sort(all.begin(), all.end());
  std::size_t doctors_with_dialogues = 0;
  for (const auto& l : ds.doctor_dialogues) doctors_with_dialogues += l.empty() ? 0 : 1;
  if (doctors_with_dialogues < 2)
    fail(ErrorKind::validation, "self-learning needs at least two doctors with dialogues");

  Rng rng = Rng(cfg.seed).fork(0x7061697273ULL);
  std::vector<PairExample> out;
  for (std::size_t d = 0; d < ds.doctor_count(); ++d) {
    const auto& own = ds.doctor_dialogues[d];
    if (own.size() == all.size()) continue;
    for (std::size_t g : own) {
      out.push_back({d, g, 1.0});
      for (std::size_t k = 0; k < cfg.neg_ratio; ++k) {
        std::size_t neg;
        do { neg = all[rng.index(all.size())]; } while (owner[neg] == d);
        out.push_back({d, neg, 0.0});
      }
    }
  }
  return out;
}

struct PretrainReport {
  double initial_accuracy = 0.0;   // held-out, before training
  double heldout_accuracy = 0.0;   // held-out, best parameters
  std::vector<double> loss_curve;  // mean training loss per epoch
  std::vector<double> heldout_loss_curve;
  std::size_t best_epoch = 0;
  std::size_t train_pairs = 0;
  std::size_t heldout_pairs = 0;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const PretrainReport& r) {
  return {{"initial_accuracy", r.initial_accuracy},
          {"heldout_accuracy", r.heldout_accuracy},
          {"loss_curve", r.loss_curve},
          {"heldout_loss_curve", r.heldout_loss_curve},
          {"best_epoch", r.best_epoch},
          {"train_pairs", r.train_pairs},
          {"heldout_pairs", r.heldout_pairs}};
}

class PairClassifier {
public:
  PairClassifier(std::size_t dim, std::size_t hidden, std::uint64_t seed)
      : mlp_("pair", 3 * dim, hidden, seed) {}

  Mlp& mlp() noexcept { return mlp_; }
  const Mlp& mlp() const noexcept { return mlp_; }

  // Scores (B x 1) for a batch of pairs.
  Var forward(Tape& tape, const Embedder& embedder, const Dataset& ds,
              std::span<const PairExample> batch) const {
    std::map<std::size_t, std::size_t> prow, grow;
    std::vector<const Document*> pdocs, gdocs;
    for (const PairExample& e : batch) {
      if (prow.emplace(e.doctor, pdocs.size()).second) pdocs.push_back(&ds.profiles[e.doctor]);
      if (grow.emplace(e.dialogue, gdocs.size()).second) gdocs.push_back(&ds.dialogues[e.dialogue]);
    }
    Var pm = embedder.encode(tape, pdocs);
    Var gm = embedder.encode(tape, gdocs);
    std::vector<std::size_t> pi, gi;
    for (const PairExample& e : batch) {
      pi.push_back(prow[e.doctor]);
      gi.push_back(grow[e.dialogue]);
    }
    Var p = gather_rows(pm, std::move(pi));
    Var g = gather_rows(gm, std::move(gi));
    const Var parts[] = {p, g, elementwise_mul(p, g)};
    return mlp_.forward(tape, concat_cols(parts));
  }

private:
  Mlp mlp_;
};

namespace detail {

struct PairEval {
  double loss = 0.0;  // mean
  double accuracy = 0.0;
};

inline PairEval evaluate_pairs(const PairClassifier& clf, const Embedder& embedder,
                               const Dataset& ds, std::span<const PairExample> pairs,
                               std::size_t batch) {
  PairEval ev;
  if (pairs.empty()) return ev;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < pairs.size(); b += batch) {
    auto chunk = pairs.subspan(b, std::min(batch, pairs.size() - b));
    Tape tape(Tape::no_grad);
    Var s = clf.forward(tape, embedder, ds, chunk);
    std::vector<double> labels;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      labels.push_back(chunk[i].label);
      correct += ((s.value()[i] >= 0.5) == (chunk[i].label > 0.5)) ? 1 : 0;
    }
    ev.loss += weighted_bce(s, std::move(labels), 1.0).value()[0];
  }
  ev.loss /= static_cast<double>(pairs.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
  return ev;
}

}  // namespace detail

// Trains encoder + pair classifier on unweighted BCE; a seeded held-out slice
// picks the best epoch. The encoder is left at the best parameters.
inline PretrainReport pretrain(HashEncoder& encoder, const Dataset& ds,
                               std::vector<PairExample> pairs, const PretrainConfig& cfg,
                               PairClassifier* classifier_out = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  bool has_pos = false, has_neg = false;
  for (const auto& p : pairs) (p.label > 0.5 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    fail(ErrorKind::validation, "pretrain needs both positive and negative pairs");

  Rng rng = Rng(cfg.seed).fork(0x73656c66ULL);
  rng.shuffle(pairs);
  const auto n_held = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg.heldout_fraction * double(pairs.size()))));
  std::vector<PairExample> held(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_held));
  std::vector<PairExample> train(pairs.begin() + static_cast<std::ptrdiff_t>(n_held), pairs.end());
  if (train.empty()) fail(ErrorKind::validation, "pretrain: no training pairs after hold-out");

  PairClassifier clf(encoder.dim(), cfg.hidden, Rng(cfg.seed).fork(0x68656164ULL)());
  Embedder embedder(encoder);
  std::vector<Param*> params = encoder.parameters();
  for (Param* p : clf.mlp().parameters()) params.push_back(p);
  Adam adam(params, AdamConfig{cfg.lr});

  PretrainReport rep;
  rep.train_pairs = train.size();
  rep.heldout_pairs = held.size();
  auto ev0 = detail::evaluate_pairs(clf, embedder, ds, held, cfg.batch);
  rep.initial_accuracy = ev0.accuracy;
  double best_loss = ev0.loss;
  double best_acc = ev0.accuracy;
  std::vector<Tensor> best;
  for (const Param* p : params) best.push_back(p->value);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(train);
    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < train.size(); b += cfg.batch, ++batch_index) {
      auto chunk = std::span<const PairExample>(train).subspan(b, std::min(cfg.batch, train.size() - b));
      Tape tape;
      std::vector<double> labels;
      for (const auto& e : chunk) labels.push_back(e.label);
      Var loss = weighted_bce(clf.forward(tape, embedder, ds, chunk), std::move(labels), 1.0);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        fail(ErrorKind::training, "self-learning diverged at epoch " + std::to_string(epoch) +
                                      " batch " + std::to_string(batch_index));
      tape.backward(loss, params);
      adam.step();
      total += lv;
    }
    rep.loss_curve.push_back(total / static_cast<double>(train.size()));
    auto ev = detail::evaluate_pairs(clf, embedder, ds, held, cfg.batch);
    rep.heldout_loss_curve.push_back(ev.loss);
    if (ev.loss < best_loss) {
      best_loss = ev.loss;
      best_acc = ev.accuracy;
      rep.best_epoch = epoch;
      for (std::size_t k = 0; k < params.size(); ++k) best[k] = params[k]->value;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->value = best[k];
    params[k]->zero_grad();
  }
  rep.heldout_accuracy = best_acc;
  if (classifier_out) *classifier_out = clf;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return -1.0;
  return ab / std::sqrt(aa * bb);
}

struct AlignmentStats {
  double positive_cosine = 0.0;
  double negative_cosine = 0.0;
};

// Mean cosine between profile and dialogue embeddings over labelled pairs.
inline AlignmentStats alignment(const HashEncoder& encoder, const Dataset& ds,
                                std::span<const PairExample> pairs) {
  AlignmentStats s;
  std::size_t np = 0, nn = 0;
  for (const PairExample& e : pairs) {
    const double c = cosine(encoder.encode(ds.profiles[e.doctor].tokens).data(),
                            encoder.encode(ds.dialogues[e.dialogue].tokens).data());
    if (e.label > 0.5) s.positive_cosine += c, ++np;
    else s.negative_cosine += c, ++nn;
  }
  if (np) s.positive_cosine /= double(np);
  if (nn) s.negative_cosine /= double(nn);
  return s;
}

inline void save_encoder(std::ostream& out, const HashEncoder& enc) {
  const auto& c = enc.config();
  write_checkpoint(out, enc.parameters(),
                   {{"stage", "selflearn"},
                    {"encoder", {{"hash_buckets", c.hash_buckets}, {"dim", c.dim}, {"seed", c.seed}}}});
}

inline HashEncoder load_encoder(const Checkpoint& ck) {
  nlohmann::json e;
  if (ck.header.contains("encoder")) e = ck.header.at("encoder");
  else if (ck.header.contains("config")) {
    const auto& c = ck.header.at("config");
    e = {{"hash_buckets", c.at("hash_buckets")}, {"dim", c.at("dim")}, {"seed", c.at("encoder_seed")}};
  } else {
    fail(ErrorKind::parse, "checkpoint carries no encoder configuration");
  }
  EncoderConfig cfg{e.at("hash_buckets").get<std::size_t>(), e.at("dim").get<std::size_t>(),
                    e.at("seed").get<std::uint64_t>()};
  HashEncoder enc(cfg);
  auto params = enc.parameters();
  ck.restore(params);
  return enc;
}

}  // namespace docrec
