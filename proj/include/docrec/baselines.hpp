#pragma once

// Comparison rankers. All return a full permutation of the pool with
// deterministic tie-breaking.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "docrec/dataset.hpp"
#include "docrec/embed.hpp"
#include "docrec/ranker.hpp"
#include "docrec/rng.hpp"

namespace docrec {

enum class BaselineKind { random, frequency, knn, cos_profile, cos_dialogue, mlp_p, mlp_d, mlp_pd };

inline const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::random: return "random";
    case BaselineKind::frequency: return "frequency";
    case BaselineKind::knn: return "knn";
    case BaselineKind::cos_profile: return "cos_profile";
    case BaselineKind::cos_dialogue: return "cos_dialogue";
    case BaselineKind::mlp_p: return "mlp_p";
    case BaselineKind::mlp_d: return "mlp_d";
    case BaselineKind::mlp_pd: return "mlp_pd";
  }
  return "?";
}

inline BaselineKind parse_baseline_kind(const std::string& s) {
  for (auto k : {BaselineKind::random, BaselineKind::frequency, BaselineKind::knn,
                 BaselineKind::cos_profile, BaselineKind::cos_dialogue, BaselineKind::mlp_p,
                 BaselineKind::mlp_d, BaselineKind::mlp_pd})
    if (s == to_string(k)) return k;
  fail(ErrorKind::config, "unknown baseline kind \"" + s + "\"");
}

inline bool is_neural(BaselineKind k) {
  return k == BaselineKind::mlp_p || k == BaselineKind::mlp_d || k == BaselineKind::mlp_pd;
}

struct BaselineConfig {
  BaselineKind kind = BaselineKind::random;
  std::size_t k_neighbors = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (k_neighbors < 1) fail(ErrorKind::config, "k_neighbors must be >= 1");
  }
};

namespace detail {

inline std::vector<std::string> pool_ids(const Dataset& ds) {
  std::vector<std::string> out;
  for (std::size_t d : ds.pool) out.push_back(ds.doctor_id(d));
  return out;
}

}  // namespace detail

// Seeded permutation keyed by (seed, query id); score (n - r) / (n + 1) at rank r.
inline RankResult rank_random(const std::string& query_id, const std::vector<std::string>& pool,
                              std::uint64_t seed) {
  std::vector<std::string> order = pool;
  std::sort(order.begin(), order.end());
  Rng rng = Rng(seed).fork(fnv1a64(query_id));
  rng.shuffle(order);
  const double n = static_cast<double>(order.size());
  RankResult r;
  for (std::size_t i = 0; i < order.size(); ++i)
    r.entries.emplace_back(order[i], (n - static_cast<double>(i)) / (n + 1.0));
  return r;
}

inline RankResult rank_frequency(const std::vector<std::string>& pool,
                                 const std::map<std::string, std::size_t>& train_counts) {
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& id : pool) {
    auto it = train_counts.find(id);
    scored.emplace_back(id, it == train_counts.end() ? 0.0 : static_cast<double>(it->second));
  }
  return sort_ranking(std::move(scored));
}

// Cosine similarity; a zero operand gives -1.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::shape, "cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return -1.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Embeddings of a dataset under a frozen encoder (or an external vector store).
class FrozenEmbeddings {
public:
  FrozenEmbeddings(const HashEncoder& encoder, const Dataset& ds, const VectorStore* store = nullptr)
      : encoder_(&encoder), store_(store), ds_(&ds) {}

  Tensor embed(const Document& doc) const {
    Tape tape(Tape::no_grad);
    return Embedder(*encoder_, store_).encode(tape, doc).value();
  }

  Tensor embed(std::span<const Document* const> docs) const {
    Tape tape(Tape::no_grad);
    return Embedder(*encoder_, store_).encode(tape, docs).value();
  }

  const Dataset& dataset() const { return *ds_; }

private:
  const HashEncoder* encoder_;
  const VectorStore* store_;
  const Dataset* ds_;
};

// Votes from the k nearest training queries (cosine), ties by training
// frequency then id.
class KnnRanker {
public:
  KnnRanker(const FrozenEmbeddings& emb, std::size_t k) : emb_(&emb), k_(k) {
    if (k < 1) fail(ErrorKind::config, "k_neighbors must be >= 1");
    const Dataset& ds = emb.dataset();
    std::vector<const Document*> docs;
    for (const auto& q : ds.train_queries) docs.push_back(&q.doc);
    if (!docs.empty()) train_ = emb.embed(docs);
  }

  RankResult rank(const Document& query) const {
    const Dataset& ds = emb_->dataset();
    const Tensor q = emb_->embed(query);
    std::vector<std::pair<double, std::size_t>> sims;
    for (std::size_t i = 0; i < ds.train_queries.size(); ++i)
      sims.emplace_back(cosine_similarity(q.data(), train_.row_span(i)), i);
    const std::size_t k = std::min(k_, sims.size());
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    std::map<std::size_t, std::size_t> votes;
    for (std::size_t i = 0; i < k; ++i) ++votes[ds.train_queries[sims[i].second].gold];

    struct Entry {
      std::string id;
      std::size_t votes, freq;
    };
    std::vector<Entry> entries;
    for (std::size_t d : ds.pool) {
      auto it = votes.find(d);
      entries.push_back({ds.doctor_id(d), it == votes.end() ? 0 : it->second, ds.train_counts[d]});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.votes != b.votes) return a.votes > b.votes;
      if (a.freq != b.freq) return a.freq > b.freq;
      return a.id < b.id;
    });
    RankResult r;
    for (const auto& e : entries) r.entries.emplace_back(e.id, static_cast<double>(e.votes));
    return r;
  }

private:
  const FrozenEmbeddings* emb_;
  std::size_t k_;
  Tensor train_;
};

enum class CosineSource { profile, dialogue_mean };

class CosineRanker {
public:
  CosineRanker(const FrozenEmbeddings& emb, CosineSource source) : emb_(&emb) {
    const Dataset& ds = emb.dataset();
    for (std::size_t d : ds.pool) {
      if (source == CosineSource::profile) {
        doctors_.push_back(emb.embed(ds.profiles[d]));
        continue;
      }
      const auto& list = ds.doctor_dialogues[d];
      if (list.empty()) {
        doctors_.push_back(Tensor(1, emb.embed(ds.profiles[d]).cols()));  // zero vector
        continue;
      }
      std::vector<const Document*> docs;
      for (std::size_t g : list) docs.push_back(&ds.dialogues[g]);
      Tape tape(Tape::no_grad);
      doctors_.push_back(mean_rows(tape.constant(emb.embed(docs))).value());
    }
  }

  RankResult rank(const Document& query) const {
    const Dataset& ds = emb_->dataset();
    const Tensor q = emb_->embed(query);
    std::vector<std::pair<std::string, double>> scored;
    for (std::size_t k = 0; k < ds.pool.size(); ++k)
      scored.emplace_back(ds.doctor_id(ds.pool[k]), cosine_similarity(q.data(), doctors_[k].data()));
    return sort_ranking(std::move(scored));
  }

  const Tensor& doctor_vector(std::size_t slot) const { return doctors_.at(slot); }

private:
  const FrozenEmbeddings* emb_;
  std::vector<Tensor> doctors_;
};

inline DoctorMode mlp_mode(BaselineKind k) {
  switch (k) {
    case BaselineKind::mlp_p: return DoctorMode::profile_only;
    case BaselineKind::mlp_d: return DoctorMode::dialogue_mean;
    case BaselineKind::mlp_pd: return DoctorMode::profile_dialogue;
    default: break;
  }
  fail(ErrorKind::config, std::string("baseline \"") + to_string(k) + "\" is not an MLP variant");
}

// Same scorer, loss and training loop as the full ranker with the doctor
// encoder bypassed.
inline RecommenderModel train_mlp_baseline(const Dataset& ds, BaselineKind kind, ModelConfig cfg,
                                           const HashEncoder& encoder,
                                           const VectorStore* store = nullptr,
                                           TrainHistory* history = nullptr) {
  cfg.mode = mlp_mode(kind);
  RecommenderModel model(cfg, encoder);
  TrainHistory h = train(model, ds, store);
  if (history) *history = std::move(h);
  return model;
}

inline std::map<std::string, std::size_t> train_count_map(const Dataset& ds) {
  std::map<std::string, std::size_t> out;
  for (std::size_t d = 0; d < ds.doctor_count(); ++d) out[ds.doctor_id(d)] = ds.train_counts[d];
  return out;
}

// Builds a RankFn for the non-neural baselines. The returned callable keeps
// the ranker it needs alive.
inline RankFn make_baseline_ranker(const BaselineConfig& cfg, const FrozenEmbeddings& emb) {
  cfg.validate();
  const Dataset& ds = emb.dataset();
  switch (cfg.kind) {
    case BaselineKind::random: {
      auto pool = detail::pool_ids(ds);
      const auto seed = cfg.seed;
      return [pool, seed](const QueryDoc& q) { return rank_random(q.query_id, pool, seed); };
    }
    case BaselineKind::frequency: {
      auto fixed = rank_frequency(detail::pool_ids(ds), train_count_map(ds));
      return [fixed](const QueryDoc&) { return fixed; };
    }
    case BaselineKind::knn: {
      auto r = std::make_shared<KnnRanker>(emb, cfg.k_neighbors);
      return [r](const QueryDoc& q) { return r->rank(q.doc); };
    }
    case BaselineKind::cos_profile:
    case BaselineKind::cos_dialogue: {
      auto r = std::make_shared<CosineRanker>(
          emb, cfg.kind == BaselineKind::cos_profile ? CosineSource::profile : CosineSource::dialogue_mean);
      return [r](const QueryDoc& q) { return r->rank(q.doc); };
    }
    default: break;
  }
  fail(ErrorKind::config, std::string("baseline \"") + to_string(cfg.kind) + "\" needs training");
}

}  // namespace docrec
