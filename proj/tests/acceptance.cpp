// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "docrec/baselines.hpp"
#include "docrec/pipeline.hpp"
#include "docrec/synth.hpp"

using namespace docrec;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(bool pass, const char* name, const std::string& detail) {
  std::printf("%s  %s: %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// Gradient check

void gradient_check() {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.n_topics = 2;
  sc.n_doctors = 4;
  sc.dialogues_per_doctor = 6;
  sc.turns_per_dialogue = 2;
  sc.tokens_per_turn = 8;
  sc.tokens_per_profile = 10;
  sc.seed = 11;
  SynthCorpus syn = generate(sc);
  SplitSpec split = split_dataset(syn.corpus, 11);
  ModelConfig mc;
  mc.encoder = EncoderConfig{64, 16, 11};
  mc.heads = 2;
  mc.mlp_hidden = 8;
  mc.pool_size = 4;
  mc.neg_ratio = 3;
  mc.max_dialogues = 5;
  mc.seed = 11;
  Dataset ds = build_dataset(syn.corpus, split, dataset_options(mc));
  bool shape_ok = true;
  for (std::size_t d : ds.pool) shape_ok = shape_ok && ds.doctor_dialogues[d].size() == 5;
  RecommenderModel model(mc);
  Embedder emb(model.encoder());
  Rng rng(11);
  const std::size_t order[] = {0, 1};
  auto examples = make_examples(ds, ds.train_queries, order, mc.neg_ratio, rng);
  auto params = model.parameters();
  GradCheckResult r = grad_check(
      [&](Tape& tape) { return batch_loss(tape, model, ds, emb, ds.train_queries, examples); }, params, 1e-4);
  const double secs = seconds_since(t0);
  report(shape_ok && r.max_rel_error < 1e-3 && secs < 30.0, "gradient check",
         fmt("max relative error %.3e", r.max_rel_error) + " over " + std::to_string(r.coordinates) +
             " coordinates, " + fmt("%.2f s", secs) + (shape_ok ? "" : ", pool doctors lack 5 dialogues"));
}

// ---------------------------------------------------------------------------
// Metric oracles

double oracle_precision(const std::vector<std::string>& ranked, const std::set<std::string>& rel, std::size_t n) {
  std::set<std::string> top(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min(n, ranked.size())));
  std::size_t hits = 0;
  for (const auto& t : top) hits += rel.count(t);
  return static_cast<double>(hits) / static_cast<double>(n);
}

double oracle_ap(const std::vector<std::string>& ranked, const std::set<std::string>& rel) {
  double total = 0.0;
  for (const auto& item : rel) {
    auto it = std::find(ranked.begin(), ranked.end(), item);
    if (it == ranked.end()) continue;
    const std::size_t k = static_cast<std::size_t>(it - ranked.begin()) + 1;
    total += oracle_precision(ranked, rel, k);
  }
  return total / static_cast<double>(rel.size());
}

// Expected reciprocal stopping rank, enumerating every satisfied/unsatisfied
// outcome of the examined relevant items.
double oracle_err(const std::vector<std::string>& ranked, const std::set<std::string>& rel, std::size_t n) {
  const std::size_t m = std::min(n, ranked.size());
  std::vector<std::size_t> rel_ranks;
  for (std::size_t i = 0; i < m; ++i)
    if (rel.contains(ranked[i])) rel_ranks.push_back(i + 1);
  double expect = 0.0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << rel_ranks.size()); ++mask) {
    const double prob = std::pow(0.5, static_cast<double>(rel_ranks.size()));
    for (std::size_t b = 0; b < rel_ranks.size(); ++b)
      if (mask & (std::size_t{1} << b)) {
        expect += prob / static_cast<double>(rel_ranks[b]);
        break;
      }
  }
  return expect;
}

void metric_oracles() {
  Rng rng(2024);
  double worst = 0.0;
  std::size_t compared = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t len = 1 + rng.index(7);
    std::vector<std::string> items;
    for (std::size_t i = 0; i < len; ++i) items.push_back("d" + std::to_string(i));
    std::set<std::string> rel;
    for (const auto& it : items)
      if (rng.uniform(0.0, 1.0) < 0.35) rel.insert(it);
    if (rel.empty()) rel.insert(items[rng.index(len)]);
    if (rng.uniform(0.0, 1.0) < 0.2) rel.insert("unretrieved");
    std::sort(items.begin(), items.end());
    do {
      JudgedRanking jr{items, rel};
      for (std::size_t n = 1; n <= 7; ++n) {
        worst = std::max(worst, std::abs(precision_at_n(jr, n) - oracle_precision(items, rel, n)));
        worst = std::max(worst, std::abs(err_at_n(jr, n) - oracle_err(items, rel, n)));
      }
      worst = std::max(worst, std::abs(average_precision(jr) - oracle_ap(items, rel)));
      ++compared;
    } while (std::next_permutation(items.begin(), items.end()));
  }
  report(worst <= 1e-12, "metric oracles",
         "500 random rankings, " + std::to_string(compared) + " orderings, " + fmt("max deviation %.3e", worst));
}

// ---------------------------------------------------------------------------
// Attention identities

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(r, c);
  for (double& x : t.data()) x = rng.uniform(-1.0, 1.0);
  return t;
}

void attention_identities() {
  Rng rng(5);
  Tape tape(Tape::no_grad);

  bool n1 = true;
  for (int t = 0; t < 10; ++t) {
    const Tensor v = random_matrix(1, 16, rng);
    AttentionOutput one = attention(tape.constant(random_matrix(1, 16, rng)),
                                    tape.constant(random_matrix(1, 16, rng)), tape.constant(v));
    n1 = n1 && one.h.value() == v;
  }

  const Tensor row = random_matrix(1, 16, rng);
  Tensor keys(9, 16);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 16; ++j) keys(i, j) = row[j];
  AttentionOutput same = attention(tape.constant(random_matrix(1, 16, rng)), tape.constant(keys),
                                   tape.constant(random_matrix(9, 4, rng)));
  double uniform_dev = 0.0;
  for (double w : same.weights.value().data()) uniform_dev = std::max(uniform_dev, std::abs(w - 1.0 / 9.0));

  DoctorEncoder enc(ExpertiseConfig{96, 6, DoctorMode::full, 3});
  const Tensor profile = random_matrix(1, 96, rng);
  const Tensor dialogues = random_matrix(12, 96, rng);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  double perm_dev = 0.0;
  const DoctorEmbedding base = enc.embed(profile, dialogues);
  for (int t = 0; t < 20; ++t) {
    rng.shuffle(perm);
    Tensor shuffled(12, 96);
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 96; ++j) shuffled(i, j) = dialogues(perm[i], j);
    const DoctorEmbedding e = enc.embed(profile, shuffled);
    for (std::size_t j = 0; j < 96; ++j) perm_dev = std::max(perm_dev, std::abs(e.vector[j] - base.vector[j]));
  }
  report(n1 && uniform_dev <= 1e-12 && perm_dev <= 1e-9, "attention identities",
         std::string("n=1 returns V ") + (n1 ? "exactly" : "inexactly") + fmt(", uniform deviation %.3e", uniform_dev) +
             fmt(", permutation deviation %.3e", perm_dev));
}

// ---------------------------------------------------------------------------
// Synthetic corpus runs

struct SynthSetup {
  SynthCorpus syn;
  SplitSpec split;
  Dataset ds;

  SynthSetup(const SynthConfig& sc, const ModelConfig& mc) {
    syn = generate(sc);
    split = split_dataset(syn.corpus, 1);
    ds = build_dataset(syn.corpus, split, dataset_options(mc));
  }
};

SynthConfig reference_synth() {
  SynthConfig sc;
  sc.n_doctors = 20;
  sc.n_topics = 5;
  sc.dialogues_per_doctor = 40;
  sc.noise_fraction = 0.3;
  sc.expertise_concentration = 0.9;
  sc.seed = 1;
  return sc;
}

ModelConfig reference_model(std::uint64_t seed) {
  ModelConfig mc;
  mc.pool_size = 20;
  PretrainConfig unused;
  reseed(mc, unused, seed);
  return mc;
}

PretrainConfig reference_pretrain(std::uint64_t seed) {
  ModelConfig unused;
  PretrainConfig pc;
  reseed(unused, pc, seed);
  return pc;
}

double p_at_1(const RecommenderModel& m, const Dataset& ds) {
  Recommender rec(m, ds);
  return evaluate(rec, ds.test_queries).overall.p_at_1;
}

void end_to_end_and_explain(const SynthSetup& c) {
  const auto t0 = Clock::now();
  FitResult fit_result = fit(c.ds, reference_model(1), reference_pretrain(1));
  Recommender rec(fit_result.model, c.ds);
  const MetricsReport full = evaluate(rec, c.ds.test_queries);
  const double secs = seconds_since(t0);

  FrozenEmbeddings emb(fit_result.model.encoder(), c.ds);
  const double rnd =
      evaluate_rankings(c.ds, c.ds.test_queries, make_baseline_ranker({BaselineKind::random, 20, 1}, emb))
          .overall.p_at_1;
  const double freq =
      evaluate_rankings(c.ds, c.ds.test_queries, make_baseline_ranker({BaselineKind::frequency, 20, 1}, emb))
          .overall.p_at_1;
  const bool pass = full.overall.p_at_1 >= 0.60 && std::abs(rnd - 0.05) <= 0.05 && std::abs(freq - 0.05) <= 0.05 &&
                    secs < 300.0;
  report(pass, "synthetic end-to-end",
         fmt("full P@1 %.4f", full.overall.p_at_1) + fmt(", random %.4f", rnd) + fmt(", frequency %.4f", freq) +
             fmt(", pretrain+train+eval %.1f s", secs) + ", " + std::to_string(full.overall.count) + " test queries");

  std::size_t correct = 0, faithful = 0;
  for (const QueryDoc& q : c.ds.test_queries) {
    if (!c.ds.in_pool(q.gold)) continue;
    if (rec.rank(q.doc).ids().front() != c.ds.doctor_id(q.gold)) continue;
    ++correct;
    const std::size_t topic = c.syn.truth.dialogue_topic.at(q.source_dialogue_id);
    bool hit = false;
    for (const HeadExplanation& h : explain(rec, q, q.gold, 5).heads)
      for (const auto& [tok, w] : h.tokens) hit = hit || SynthGroundTruth::topic_of(tok) == topic;
    faithful += hit;
  }
  const double frac = correct ? static_cast<double>(faithful) / static_cast<double>(correct) : 0.0;
  report(correct > 0 && frac >= 0.8, "explain fidelity",
         std::to_string(faithful) + " of " + std::to_string(correct) +
             " correctly ranked queries have a planted-topic token in some head's top 5" + fmt(" (%.3f)", frac));
}

void ablation(const SynthSetup& c) {
  double full = 0.0, no_sl = 0.0, no_d = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const PretrainConfig pc = reference_pretrain(seed);
    ModelConfig mc = reference_model(seed);
    const double f = p_at_1(fit(c.ds, mc, pc).model, c.ds);
    ModelConfig sl_off = mc;
    sl_off.self_learning = false;
    const double s = p_at_1(fit(c.ds, sl_off, pc).model, c.ds);
    ModelConfig d_off = mc;
    d_off.mode = DoctorMode::no_dialogue;
    const double d = p_at_1(fit(c.ds, d_off, pc).model, c.ds);
    full += f / 3.0;
    no_sl += s / 3.0;
    no_d += d / 3.0;
    per_seed += " [seed " + std::to_string(seed) + fmt(": %.4f", f) + fmt("/%.4f", s) + fmt("/%.4f]", d);
  }
  report(full >= no_sl && full >= no_d, "ablation direction",
         fmt("mean P@1 full %.4f", full) + fmt(", w/o SL %.4f", no_sl) + fmt(", w/o D %.4f", no_d) +
             "; full/w/o SL/w/o D" + per_seed);
}

void self_learning() {
  SynthConfig sc = reference_synth();
  sc.noise_fraction = 0.0;
  sc.expertise_concentration = 1.0;
  SynthSetup c(sc, reference_model(1));
  const PretrainConfig pc = reference_pretrain(1);
  HashEncoder enc(reference_model(1).encoder);
  const PretrainReport r = pretrain(enc, c.ds, make_pairs(c.ds, pc), pc);
  report(r.heldout_accuracy >= 0.8, "self-learning quality",
         fmt("held-out pair accuracy %.4f", r.heldout_accuracy) + " on " + std::to_string(r.heldout_pairs) +
             " pairs" + fmt(" (untrained %.4f)", r.initial_accuracy));
}

void determinism() {
  SynthConfig sc;
  sc.n_doctors = 8;
  sc.n_topics = 4;
  sc.dialogues_per_doctor = 15;
  sc.seed = 9;
  auto run = [&] {
    ModelConfig mc;
    mc.encoder = EncoderConfig{1024, 32, 0};
    mc.heads = 4;
    mc.mlp_hidden = 32;
    mc.max_epochs = 5;
    mc.pool_size = 8;
    mc.neg_ratio = 4;
    PretrainConfig pc;
    pc.epochs = 3;
    pc.hidden = 32;
    reseed(mc, pc, 4);
    SynthSetup c(sc, mc);
    FitResult f = fit(c.ds, mc, pc);
    Recommender rec(f.model, c.ds);
    const BucketSpec spec{BucketKey::department, {}};
    return std::pair(f.model.checkpoint(), report_to_json(evaluate(rec, c.ds.test_queries, spec)).dump());
  };
  const auto a = run();
  const auto b = run();
  report(a.first == b.first && a.second == b.second, "determinism",
         std::string("checkpoints ") + (a.first == b.first ? "identical" : "differ") + " (" +
             std::to_string(a.first.size()) + " bytes), metric reports " + (a.second == b.second ? "identical" : "differ"));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  auto guarded = [](const char* name, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(false, name, std::string("threw: ") + e.what());
    }
  };
  guarded("gradient check", gradient_check);
  guarded("metric oracles", metric_oracles);
  guarded("attention identities", attention_identities);
  guarded("self-learning quality", self_learning);
  guarded("determinism", determinism);
  SynthSetup reference(reference_synth(), reference_model(1));
  guarded("synthetic end-to-end", [&] { end_to_end_and_explain(reference); });
  guarded("ablation direction", [&] { ablation(reference); });
  std::printf("%d failing criteria, %.1f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
