#pragma once

// Two-stage fit shared by the CLI and the acceptance harness: optional
// self-learning of the hash encoder, then ranker training.

#include <optional>

#include "docrec/ranker.hpp"
#include "docrec/selflearn.hpp"

namespace docrec {

struct FitResult {
  RecommenderModel model;
  std::optional<PretrainReport> pretrain;
  TrainHistory history;
};

// Seeds every stage from one value so a run is reproducible from it alone.
inline void reseed(ModelConfig& mc, PretrainConfig& pc, std::uint64_t seed) {
  mc.seed = seed;
  mc.encoder.seed = seed;
  pc.seed = seed;
}

// Self-learning runs when enabled and no external vectors replace the encoder.
inline FitResult fit(const Dataset& ds, const ModelConfig& mc, const PretrainConfig& pc,
                     const VectorStore* store = nullptr, const EpochCallback& on_epoch = {}) {
  HashEncoder encoder(mc.encoder);
  FitResult out;
  if (mc.self_learning && !store) out.pretrain = pretrain(encoder, ds, make_pairs(ds, pc), pc);
  out.model = RecommenderModel(mc, std::move(encoder));
  out.history = train(out.model, ds, store, on_epoch);
  return out;
}

inline DatasetOptions dataset_options(const ModelConfig& mc, TermSet stoplist = {}) {
  DatasetOptions o;
  o.hash_buckets = mc.encoder.hash_buckets;
  o.pool_size = mc.pool_size;
  o.max_dialogues = mc.max_dialogues;
  o.stoplist = std::move(stoplist);
  return o;
}

}  // namespace docrec
