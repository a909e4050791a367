#pragma once

// Stage-2 recommendation model: query encoder + doctor encoder + MLP scorer,
// trained with weighted binary cross-entropy over sampled negatives.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "docrec/checkpoint.hpp"
#include "docrec/dataset.hpp"
#include "docrec/embed.hpp"
#include "docrec/expertise.hpp"
#include "docrec/metrics.hpp"
#include "docrec/mlp.hpp"
#include "docrec/tensor.hpp"

namespace docrec {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t heads = 6;
  DoctorMode mode = DoctorMode::full;
  std::size_t mlp_hidden = 256;
  double lambda = 5.0;
  std::size_t neg_ratio = 10;
  double lr = 0.008;
  std::size_t batch = 256;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;  // 0 disables early stopping
  std::uint64_t seed = 0;
  std::size_t pool_size = default_pool_size;
  std::size_t max_dialogues = 0;
  bool self_learning = true;

  void validate() const {
    encoder.validate();
    if (!(lambda > 1.0)) fail(ErrorKind::config, "lambda must be > 1");
    if (neg_ratio < 1) fail(ErrorKind::config, "neg_ratio must be >= 1");
    if (batch < 1) fail(ErrorKind::config, "batch must be >= 1");
    if (mlp_hidden < 1) fail(ErrorKind::config, "mlp_hidden must be >= 1");
    if (!(lr > 0.0)) fail(ErrorKind::config, "lr must be positive");
    ExpertiseConfig{encoder.dim, heads, mode, 0}.validate();
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"hash_buckets", c.encoder.hash_buckets},
          {"dim", c.encoder.dim},
          {"encoder_seed", c.encoder.seed},
          {"heads", c.heads},
          {"mode", to_string(c.mode)},
          {"mlp_hidden", c.mlp_hidden},
          {"lambda", c.lambda},
          {"neg_ratio", c.neg_ratio},
          {"lr", c.lr},
          {"batch", c.batch},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"pool_size", c.pool_size},
          {"max_dialogues", c.max_dialogues},
          {"self_learning", c.self_learning}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.encoder.hash_buckets = j.at("hash_buckets").get<std::size_t>();
    c.encoder.dim = j.at("dim").get<std::size_t>();
    c.encoder.seed = j.at("encoder_seed").get<std::uint64_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.mode = parse_doctor_mode(j.at("mode").get<std::string>());
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.neg_ratio = j.at("neg_ratio").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.batch = j.at("batch").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.pool_size = j.at("pool_size").get<std::size_t>();
    c.max_dialogues = j.at("max_dialogues").get<std::size_t>();
    c.self_learning = j.at("self_learning").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("model config: ") + e.what());
  }
  return c;
}

class RecommenderModel {
public:
  RecommenderModel() = default;

  RecommenderModel(const ModelConfig& cfg, HashEncoder encoder)
      : cfg_(cfg),
        encoder_(std::move(encoder)),
        doctor_(ExpertiseConfig{cfg.encoder.dim, cfg.heads, cfg.mode, Rng(cfg.seed).fork(1)()}),
        mlp_("mlp", 2 * cfg.encoder.dim, cfg.mlp_hidden, Rng(cfg.seed).fork(2)()) {
    cfg_.validate();
    if (encoder_.dim() != cfg.encoder.dim)
      fail(ErrorKind::config, "encoder dim does not match model dim");
  }

  explicit RecommenderModel(const ModelConfig& cfg)
      : RecommenderModel(cfg, HashEncoder(cfg.encoder)) {}

  const ModelConfig& config() const noexcept { return cfg_; }
  const HashEncoder& encoder() const noexcept { return encoder_; }
  HashEncoder& encoder() noexcept { return encoder_; }
  const DoctorEncoder& doctor_encoder() const noexcept { return doctor_; }
  DoctorEncoder& doctor_encoder() noexcept { return doctor_; }
  const Mlp& mlp() const noexcept { return mlp_; }
  Mlp& mlp() noexcept { return mlp_; }

  std::vector<Param*> parameters() {
    std::vector<Param*> out = encoder_.parameters();
    for (Param* p : doctor_.parameters()) out.push_back(p);
    for (Param* p : mlp_.parameters()) out.push_back(p);
    return out;
  }
  std::vector<const Param*> parameters() const {
    std::vector<const Param*> out = encoder_.parameters();
    for (const Param* p : doctor_.parameters()) out.push_back(p);
    for (const Param* p : mlp_.parameters()) out.push_back(p);
    return out;
  }

  void save(std::ostream& out) const {
    write_checkpoint(out, parameters(), {{"stage", "recommend"}, {"config", to_json(cfg_)}});
  }

  std::string checkpoint() const {
    std::ostringstream os;
    save(os);
    return os.str();
  }

  static RecommenderModel load(const Checkpoint& ck) {
    if (!ck.header.contains("config"))
      fail(ErrorKind::parse, "checkpoint has no model config (not a recommend-stage checkpoint)");
    RecommenderModel m(model_config_from_json(ck.header.at("config")));
    auto params = m.parameters();
    ck.restore(params);
    return m;
  }

private:
  ModelConfig cfg_;
  HashEncoder encoder_;
  DoctorEncoder doctor_;
  Mlp mlp_;
};

// ---------------------------------------------------------------------------
// Scoring and loss

inline double score(const Tensor& doctor_vec, const Tensor& query_vec, const Mlp& mlp) {
  Tape tape(Tape::no_grad);
  Var x = concat_cols(tape.constant(doctor_vec), tape.constant(query_vec));
  return mlp.forward(tape, x).value()[0];
}

inline double loss(std::span<const double> scores, std::span<const double> labels, double lambda) {
  Tape tape(Tape::no_grad);
  Var s = tape.constant(Tensor(scores.size(), 1, std::vector<double>(scores.begin(), scores.end())));
  return weighted_bce(s, std::vector<double>(labels.begin(), labels.end()), lambda).value()[0];
}

// neg_ratio distinct doctors from pool \ {gold}, uniformly without replacement.
inline std::vector<std::size_t> sample_negatives(std::span<const std::size_t> pool, std::size_t gold,
                                                 std::size_t neg_ratio, Rng& rng) {
  std::vector<std::size_t> cand;
  cand.reserve(pool.size());
  for (std::size_t p : pool)
    if (p != gold) cand.push_back(p);
  if (cand.size() < neg_ratio)
    fail(ErrorKind::config, "candidate pool too small: " + std::to_string(cand.size()) +
                                " non-gold doctors for " + std::to_string(neg_ratio) +
                                " negatives");
  for (std::size_t i = 0; i < neg_ratio; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(cand.size() - i));
    std::swap(cand[i], cand[j]);
  }
  cand.resize(neg_ratio);
  return cand;
}

// ---------------------------------------------------------------------------
// Forward over a set of doctors

struct DoctorBlock {
  Var matrix;                             // m x d, row k = doctors[k]
  std::vector<DoctorEncoding> encodings;  // per doctor
};

inline DoctorBlock encode_doctors(Tape& tape, const RecommenderModel& model, const Dataset& ds,
                                  const Embedder& embedder, std::span<const std::size_t> doctors) {
  const DoctorMode mode = model.config().mode;
  std::vector<const Document*> profiles;
  for (std::size_t d : doctors) profiles.push_back(&ds.profiles[d]);
  Var profile_rows = embedder.encode(tape, profiles);
  DoctorBlock block;
  std::vector<Var> rows;
  for (std::size_t k = 0; k < doctors.size(); ++k) {
    const std::size_t d = doctors[k];
    Var profile = doctors.size() == 1 ? profile_rows : gather_rows(profile_rows, {k});
    std::optional<Var> dialogues;
    if (uses_dialogues(mode)) {
      const auto& list = ds.doctor_dialogues[d];
      if (list.empty())
        fail(ErrorKind::validation, "doctor \"" + ds.doctor_id(d) +
                                        "\" has no training dialogues; filter it from the pool");
      std::vector<const Document*> docs;
      for (std::size_t g : list) docs.push_back(&ds.dialogues[g]);
      dialogues = embedder.encode(tape, docs);
    }
    DoctorEncoding enc = model.doctor_encoder().encode(tape, profile, dialogues);
    rows.push_back(enc.vector);
    block.encodings.push_back(std::move(enc));
  }
  block.matrix = rows.size() == 1 ? rows.front() : concat_rows(rows);
  return block;
}

struct Example {
  std::size_t query = 0;   // index into the query list being trained on
  std::size_t doctor = 0;  // doctor index
  double label = 0.0;
};

// Loss of a batch of examples drawn from `queries`.
inline Var batch_loss(Tape& tape, const RecommenderModel& model, const Dataset& ds,
                      const Embedder& embedder, const std::vector<QueryDoc>& queries,
                      std::span<const Example> batch) {
  std::vector<std::size_t> doctors, query_ids;
  std::map<std::size_t, std::size_t> doctor_row, query_row;
  for (const Example& e : batch) {
    if (doctor_row.emplace(e.doctor, doctors.size()).second) doctors.push_back(e.doctor);
    if (query_row.emplace(e.query, query_ids.size()).second) query_ids.push_back(e.query);
  }
  DoctorBlock block = encode_doctors(tape, model, ds, embedder, doctors);
  std::vector<const Document*> qdocs;
  for (std::size_t q : query_ids) qdocs.push_back(&queries[q].doc);
  Var qmat = embedder.encode(tape, qdocs);

  std::vector<std::size_t> drows, qrows;
  std::vector<double> labels;
  for (const Example& e : batch) {
    drows.push_back(doctor_row[e.doctor]);
    qrows.push_back(query_row[e.query]);
    labels.push_back(e.label);
  }
  Var x = concat_cols(gather_rows(block.matrix, std::move(drows)), gather_rows(qmat, std::move(qrows)));
  Var s = model.mlp().forward(tape, x);
  return weighted_bce(s, std::move(labels), model.config().lambda);
}

// One positive plus neg_ratio sampled negatives per query.
inline std::vector<Example> make_examples(const Dataset& ds, const std::vector<QueryDoc>& queries,
                                          std::span<const std::size_t> order, std::size_t neg_ratio,
                                          Rng& rng) {
  std::vector<Example> out;
  out.reserve(order.size() * (neg_ratio + 1));
  for (std::size_t q : order) {
    out.push_back({q, queries[q].gold, 1.0});
    for (std::size_t n : sample_negatives(ds.pool, queries[q].gold, neg_ratio, rng))
      out.push_back({q, n, 0.0});
  }
  return out;
}

inline constexpr std::uint64_t validation_seed_tag = 0x76616c6964ULL;

// Mean per-example loss on the validation queries with negatives drawn from a
// fixed stream, so every call compares the same examples.
inline double validation_loss(const RecommenderModel& model, const Dataset& ds,
                              const Embedder& embedder) {
  if (ds.val_queries.empty()) return std::numeric_limits<double>::quiet_NaN();
  Rng rng = Rng(model.config().seed).fork(validation_seed_tag);
  std::vector<std::size_t> order(ds.val_queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto examples = make_examples(ds, ds.val_queries, order, model.config().neg_ratio, rng);
  double total = 0.0;
  const std::size_t step = std::max<std::size_t>(model.config().batch, 1);
  for (std::size_t b = 0; b < examples.size(); b += step) {
    Tape tape(Tape::no_grad);
    auto span = std::span<const Example>(examples).subspan(b, std::min(step, examples.size() - b));
    total += batch_loss(tape, model, ds, embedder, ds.val_queries, span).value()[0];
  }
  return total / static_cast<double>(examples.size());
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  double best_val_loss = 0.0;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json e = nlohmann::json::array();
  for (const auto& r : h.epochs)
    e.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}});
  return {{"initial_val_loss", h.initial_val_loss},
          {"best_epoch", h.best_epoch},
          {"best_val_loss", h.best_val_loss},
          {"epochs", std::move(e)}};
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline void require_pool_usable(const RecommenderModel& model, const Dataset& ds) {
  if (!uses_dialogues(model.config().mode)) return;
  for (std::size_t d : ds.pool)
    if (ds.doctor_dialogues[d].empty())
      fail(ErrorKind::validation, "doctor \"" + ds.doctor_id(d) +
                                      "\" in the candidate pool has no training dialogues");
}

// Minibatch Adam on the weighted BCE. The returned model holds the parameters
// with the lowest validation loss seen (the initial ones included).
inline TrainHistory train(RecommenderModel& model, const Dataset& ds,
                          const VectorStore* store = nullptr, const EpochCallback& on_epoch = {}) {
  const ModelConfig& cfg = model.config();
  if (ds.train_queries.empty()) fail(ErrorKind::training, "empty training set");
  require_pool_usable(model, ds);
  const auto t0 = std::chrono::steady_clock::now();
  Embedder embedder(model.encoder(), store);
  auto params = model.parameters();
  Adam adam(params, AdamConfig{cfg.lr});
  Rng rng = Rng(cfg.seed).fork(0x747261696eULL);

  auto snapshot = [&] {
    std::vector<Tensor> v;
    for (const Param* p : params) v.push_back(p->value);
    return v;
  };

  TrainHistory hist;
  hist.initial_val_loss = validation_loss(model, ds, embedder);
  hist.best_val_loss = hist.initial_val_loss;
  std::vector<Tensor> best = snapshot();
  std::size_t since_best = 0;

  const std::size_t group = cfg.neg_ratio + 1;
  const std::size_t queries_per_batch = std::max<std::size_t>(1, cfg.batch / group);
  std::vector<std::size_t> order(ds.train_queries.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double total = 0.0;
    std::size_t n_examples = 0, batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += queries_per_batch, ++batch_index) {
      auto chunk = std::span<const std::size_t>(order).subspan(
          b, std::min(queries_per_batch, order.size() - b));
      auto examples = make_examples(ds, ds.train_queries, chunk, cfg.neg_ratio, rng);
      Tape tape;
      Var loss = batch_loss(tape, model, ds, embedder, ds.train_queries, examples);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        fail(ErrorKind::training, "non-finite loss at epoch " + std::to_string(epoch) +
                                      " batch " + std::to_string(batch_index));
      tape.backward(loss, params);
      adam.step();
      total += lv;
      n_examples += examples.size();
    }
    EpochRecord rec{epoch, total / static_cast<double>(n_examples),
                    validation_loss(model, ds, embedder)};
    hist.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < hist.best_val_loss || std::isnan(hist.best_val_loss)) {
      hist.best_val_loss = rec.val_loss;
      hist.best_epoch = epoch;
      best = snapshot();
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->value = best[k];
    params[k]->zero_grad();
  }
  hist.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return hist;
}

// ---------------------------------------------------------------------------
// Inference

struct RankResult {
  std::vector<std::pair<std::string, double>> entries;  // descending score, ties by id

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& e : entries) out.push_back(e.first);
    return out;
  }
};

inline RankResult sort_ranking(std::vector<std::pair<std::string, double>> scored) {
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return RankResult{std::move(scored)};
}

// Immutable inference snapshot: doctor embeddings for the pool are computed
// once; ranking a query only encodes the query. Safe to share across threads.
class Recommender {
public:
  Recommender(const RecommenderModel& model, const Dataset& ds, const VectorStore* store = nullptr)
      : model_(&model), ds_(&ds), store_(store) {
    require_pool_usable(model, ds);
    Tape tape(Tape::no_grad);
    Embedder embedder(model.encoder(), store);
    for (std::size_t d : ds.pool) {
      const std::size_t one[] = {d};
      DoctorBlock block = encode_doctors(tape, model, ds, embedder, one);
      DoctorEmbedding e = DoctorEncoder::materialize(block.encodings.front());
      doctors_.push_back(d);
      embeddings_.push_back(std::move(e));
    }
    matrix_ = Tensor(doctors_.size(), model.config().encoder.dim);
    for (std::size_t k = 0; k < doctors_.size(); ++k)
      std::copy(embeddings_[k].vector.data().begin(), embeddings_[k].vector.data().end(),
                matrix_.row_span(k).begin());
  }

  const RecommenderModel& model() const { return *model_; }
  const Dataset& dataset() const { return *ds_; }
  const std::vector<std::size_t>& pool() const { return doctors_; }

  Tensor encode_query(const Document& q) const {
    Tape tape(Tape::no_grad);
    Embedder embedder(model_->encoder(), store_);
    return embedder.encode(tape, q).value();
  }

  std::vector<double> scores(const Tensor& query_vec) const {
    if (doctors_.empty()) fail(ErrorKind::validation, "rank: empty candidate pool");
    Tape tape(Tape::no_grad);
    Var q = tape.constant(query_vec);
    Var qrep = gather_rows(q, std::vector<std::size_t>(doctors_.size(), 0));
    Var x = concat_cols(tape.constant(matrix_), qrep);
    const Tensor& s = model_->mlp().forward(tape, x).value();
    return std::vector<double>(s.data().begin(), s.data().end());
  }

  RankResult rank(const Document& q) const {
    auto s = scores(encode_query(q));
    std::vector<std::pair<std::string, double>> scored;
    for (std::size_t k = 0; k < doctors_.size(); ++k) scored.emplace_back(ds_->doctor_id(doctors_[k]), s[k]);
    return sort_ranking(std::move(scored));
  }

  RankResult rank(const std::vector<std::string>& query_tokens) const {
    return rank(make_document("", query_tokens, model_->config().encoder.hash_buckets));
  }

  // Pool position of a doctor, if present.
  std::optional<std::size_t> slot(std::size_t doctor) const {
    for (std::size_t k = 0; k < doctors_.size(); ++k)
      if (doctors_[k] == doctor) return k;
    return std::nullopt;
  }

  const DoctorEmbedding& embedding(std::size_t slot) const { return embeddings_.at(slot); }

private:
  const RecommenderModel* model_;
  const Dataset* ds_;
  const VectorStore* store_;
  std::vector<std::size_t> doctors_;
  std::vector<DoctorEmbedding> embeddings_;
  Tensor matrix_;
};

// ---------------------------------------------------------------------------
// Evaluation

enum class BucketKey { query_len, dialogue_len, profile_len, department };

inline const char* to_string(BucketKey k) {
  switch (k) {
    case BucketKey::query_len: return "query_len";
    case BucketKey::dialogue_len: return "dialogue_len";
    case BucketKey::profile_len: return "profile_len";
    case BucketKey::department: return "department";
  }
  return "?";
}

inline BucketKey parse_bucket_key(const std::string& s) {
  for (auto k : {BucketKey::query_len, BucketKey::dialogue_len, BucketKey::profile_len,
                 BucketKey::department})
    if (s == to_string(k)) return k;
  fail(ErrorKind::config, "unknown bucket key \"" + s + "\"");
}

struct BucketSpec {
  BucketKey key = BucketKey::query_len;
  std::vector<double> edges = {0, 20, 40, 80, 160, 320, 640};  // lower bounds
};

inline std::string bucket_label(const std::vector<double>& edges, double v) {
  std::size_t i = 0;
  while (i + 1 < edges.size() && v >= edges[i + 1]) ++i;
  auto fmt = [](double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  };
  if (i + 1 < edges.size()) return "[" + fmt(edges[i]) + "," + fmt(edges[i + 1]) + ")";
  return "[" + fmt(edges[i]) + ",inf)";
}

inline std::string bucket_of(const Dataset& ds, const QueryDoc& q, const BucketSpec& spec) {
  switch (spec.key) {
    case BucketKey::department: return ds.doctor(q.gold).department;
    case BucketKey::query_len:
      return bucket_label(spec.edges, static_cast<double>(q.doc.tokens.size()));
    case BucketKey::dialogue_len:
      return bucket_label(spec.edges, mean_dialogue_length(ds, q.gold));
    case BucketKey::profile_len:
      return bucket_label(spec.edges, static_cast<double>(ds.profiles[q.gold].tokens.size()));
  }
  return "";
}

// Any ranking function over query documents.
using RankFn = std::function<RankResult(const QueryDoc&)>;

// Per-query metrics averaged overall and per bucket. Queries whose gold doctor
// lies outside the candidate pool are skipped.
inline MetricsReport evaluate_rankings(const Dataset& ds, const std::vector<QueryDoc>& queries,
                                       const RankFn& rank_fn,
                                       const std::optional<BucketSpec>& buckets = std::nullopt) {
  std::vector<QueryMetrics> all;
  std::map<std::string, std::vector<QueryMetrics>> by_bucket;
  for (const QueryDoc& q : queries) {
    if (!ds.in_pool(q.gold)) continue;
    JudgedRanking jr{rank_fn(q).ids(), {ds.doctor_id(q.gold)}};
    QueryMetrics m = score_ranking(jr);
    all.push_back(m);
    if (buckets) by_bucket[bucket_of(ds, q, *buckets)].push_back(m);
  }
  MetricsReport r;
  r.overall = aggregate(all);
  if (buckets) {
    r.bucket_key = to_string(buckets->key);
    for (auto& [k, v] : by_bucket) r.buckets[k] = aggregate(v);
  }
  return r;
}

inline MetricsReport evaluate(const Recommender& rec, const std::vector<QueryDoc>& queries,
                              const std::optional<BucketSpec>& buckets = std::nullopt) {
  return evaluate_rankings(
      rec.dataset(), queries, [&](const QueryDoc& q) { return rec.rank(q.doc); }, buckets);
}

// ---------------------------------------------------------------------------
// Explanation

struct Explanation {
  std::string query_id;
  std::string doctor_id;
  std::vector<std::string> dialogue_ids;
  std::vector<HeadExplanation> heads;
};

inline Explanation explain(const Recommender& rec, const QueryDoc& query, std::size_t doctor,
                           std::size_t k, const TermSet& lexicon = {}) {
  const Dataset& ds = rec.dataset();
  auto slot = rec.slot(doctor);
  if (!slot) fail(ErrorKind::validation, "doctor \"" + ds.doctor_id(doctor) + "\" is not in the pool");
  const DoctorEmbedding& e = rec.embedding(*slot);
  Explanation out{query.query_id, ds.doctor_id(doctor), {}, {}};
  if (e.attention_maps.empty()) return out;
  std::vector<std::vector<std::string>> tokens;
  for (std::size_t g : ds.doctor_dialogues[doctor]) {
    tokens.push_back(ds.dialogues[g].tokens);
    out.dialogue_ids.push_back(ds.corpus->dialogues()[g].dialogue_id);
  }
  if (e.attention_maps.cols() != tokens.size()) {
    // no_dialogue mode attends over the profile alone
    tokens.assign(1, ds.profiles[doctor].tokens);
    out.dialogue_ids.assign(1, ds.profiles[doctor].id);
  }
  out.heads = explain_attention(e.attention_maps, tokens, k, lexicon);
  return out;
}

inline nlohmann::json to_json(const Explanation& e) {
  nlohmann::json heads = nlohmann::json::array();
  for (std::size_t h = 0; h < e.heads.size(); ++h) {
    nlohmann::json toks = nlohmann::json::array();
    for (const auto& [t, w] : e.heads[h].tokens) toks.push_back({{"token", t}, {"weight", w}});
    heads.push_back({{"head", h + 1}, {"weights", e.heads[h].weights}, {"top_tokens", toks}});
  }
  return {{"query_id", e.query_id},
          {"doctor_id", e.doctor_id},
          {"dialogue_ids", e.dialogue_ids},
          {"heads", heads}};
}

}  // namespace docrec
