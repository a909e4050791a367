// docrec: command-line driver for the doctor recommendation pipeline.
//
// Every subcommand reads an optional key=value config file (--config), lets
// flags override it, performs one pipeline operation, prints a table and
// appends an entry to <out>/manifest.json.

#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "docrec/baselines.hpp"
#include "docrec/corpus.hpp"
#include "docrec/pipeline.hpp"
#include "docrec/server.hpp"
#include "docrec/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace docrec;

namespace {

// Exit codes by error category.
int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::parse: return 3;
    case ErrorKind::validation: return 4;
    case ErrorKind::shape: return 5;
    case ErrorKind::config: return 6;
    case ErrorKind::training: return 7;
    case ErrorKind::io: return 8;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Settings: config file entries overridden by flags.

using Settings = std::map<std::string, std::string>;

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "seed", "split_seed", "hash_buckets", "dim", "heads", "mode", "mlp_hidden", "lambda",
      "neg_ratio", "lr", "batch", "max_epochs", "patience", "pool_size", "max_dialogues",
      "self_learning", "pretrain_epochs", "pretrain_neg_ratio", "pretrain_lr", "pretrain_batch",
      "pretrain_patience", "pretrain_hidden", "heldout_fraction", "k_neighbors", "top_k",
      "n_topics", "n_doctors", "dialogues_per_doctor", "turns_per_dialogue", "tokens_per_turn",
      "tokens_per_profile", "vocab_per_topic", "shared_noise_vocab", "noise_fraction",
      "expertise_concentration", "specialty_focus", "profile_focus"};
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void set_key(Settings& s, const std::string& key, const std::string& value, const std::string& where) {
  if (std::find(known_keys().begin(), known_keys().end(), key) == known_keys().end())
    fail(ErrorKind::config, where + ": unknown key \"" + key + "\"");
  s[key] = value;
}

// TOML-style subset: `key = value`, `#` comments, optional quotes, [sections]
// ignored.
Settings read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config \"" + path + "\"");
  Settings s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    const std::string where = path + ":" + std::to_string(lineno);
    if (eq == std::string::npos) fail(ErrorKind::config, where + ": expected key = value");
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    set_key(s, trim(line.substr(0, eq)), value, where);
  }
  return s;
}

template <class T>
T get(const Settings& s, const std::string& key, T fallback) {
  auto it = s.find(key);
  if (it == s.end()) return fallback;
  const std::string& v = it->second;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1") return true;
      if (v == "false" || v == "0") return false;
      throw std::invalid_argument(v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_floating_point_v<T>) {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<T>(d);
    } else {
      if (!v.empty() && v.front() == '-') throw std::invalid_argument(v);
      std::size_t pos = 0;
      const auto u = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<T>(u);
    }
  } catch (const std::logic_error&) {
    fail(ErrorKind::config, "bad value for \"" + key + "\": \"" + v + "\"");
  }
}

std::uint64_t base_seed(const Settings& s) { return get<std::uint64_t>(s, "seed", 0); }

ModelConfig model_config(const Settings& s) {
  ModelConfig c;
  c.encoder.hash_buckets = get(s, "hash_buckets", c.encoder.hash_buckets);
  c.encoder.dim = get(s, "dim", c.encoder.dim);
  c.heads = get(s, "heads", c.heads);
  c.mode = parse_doctor_mode(get<std::string>(s, "mode", to_string(c.mode)));
  c.mlp_hidden = get(s, "mlp_hidden", c.mlp_hidden);
  c.lambda = get(s, "lambda", c.lambda);
  c.neg_ratio = get(s, "neg_ratio", c.neg_ratio);
  c.lr = get(s, "lr", c.lr);
  c.batch = get(s, "batch", c.batch);
  c.max_epochs = get(s, "max_epochs", c.max_epochs);
  c.patience = get(s, "patience", c.patience);
  c.pool_size = get(s, "pool_size", c.pool_size);
  c.max_dialogues = get(s, "max_dialogues", c.max_dialogues);
  c.self_learning = get(s, "self_learning", c.self_learning);
  c.seed = c.encoder.seed = base_seed(s);
  c.validate();
  return c;
}

PretrainConfig pretrain_config(const Settings& s) {
  PretrainConfig c;
  c.epochs = get(s, "pretrain_epochs", c.epochs);
  c.neg_ratio = get(s, "pretrain_neg_ratio", c.neg_ratio);
  c.lr = get(s, "pretrain_lr", c.lr);
  c.batch = get(s, "pretrain_batch", c.batch);
  c.patience = get(s, "pretrain_patience", c.patience);
  c.hidden = get(s, "pretrain_hidden", c.hidden);
  c.heldout_fraction = get(s, "heldout_fraction", c.heldout_fraction);
  c.seed = base_seed(s);
  c.validate();
  return c;
}

SynthConfig synth_config(const Settings& s) {
  SynthConfig c;
  c.n_topics = get(s, "n_topics", c.n_topics);
  c.n_doctors = get(s, "n_doctors", c.n_doctors);
  c.dialogues_per_doctor = get(s, "dialogues_per_doctor", c.dialogues_per_doctor);
  c.turns_per_dialogue = get(s, "turns_per_dialogue", c.turns_per_dialogue);
  c.tokens_per_turn = get(s, "tokens_per_turn", c.tokens_per_turn);
  c.tokens_per_profile = get(s, "tokens_per_profile", c.tokens_per_profile);
  c.vocab_per_topic = get(s, "vocab_per_topic", c.vocab_per_topic);
  c.shared_noise_vocab = get(s, "shared_noise_vocab", c.shared_noise_vocab);
  c.noise_fraction = get(s, "noise_fraction", c.noise_fraction);
  c.expertise_concentration = get(s, "expertise_concentration", c.expertise_concentration);
  c.specialty_focus = get(s, "specialty_focus", c.specialty_focus);
  c.profile_focus = get(s, "profile_focus", c.profile_focus);
  c.seed = base_seed(s);
  c.validate();
  return c;
}

std::vector<std::uint64_t> parse_list(const std::string& text, const std::string& what) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      fail(ErrorKind::config, "bad " + what + " list \"" + text + "\"");
    out.push_back(std::stoull(item));
  }
  if (out.empty()) fail(ErrorKind::config, "empty " + what + " list");
  return out;
}

// ---------------------------------------------------------------------------
// Files and manifest

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open \"" + path + "\"");
  std::ostringstream os;
  os << in.rdbuf();
  return model_id_of(os.str());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write \"" + path.string() + "\"");
  out << text;
  if (!out) fail(ErrorKind::io, "write failed for \"" + path.string() + "\"");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open \"" + path + "\"");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, path + ": " + e.what());
  }
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  json entry = json::object();

  void artifact(const std::string& kind, const std::string& path) { entry["artifacts"][kind] = path; }
};

void append_manifest(const fs::path& dir, const json& entry) {
  const fs::path path = dir / "manifest.json";
  json runs = json::array();
  if (fs::exists(path)) {
    json old = read_json(path.string());
    if (old.contains("runs") && old["runs"].is_array()) runs = old["runs"];
  }
  runs.push_back(entry);
  write_json(path, {{"runs", runs}});
}

// ---------------------------------------------------------------------------
// Shared options

struct Options {
  std::string doctors, dialogues, split, config, checkpoint, encoder, vectors, out = ".";
  std::string lexicon, stoplist, query, query_id, doctor, bucket, kind, seeds, heads_list = "2,4,6,8";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> heads, pool_size, top;
  std::vector<std::string> set;
  int port = 8080;
  std::string host = "127.0.0.1";
  bool json_out = false;
};

Settings settings_of(const Options& o) {
  Settings s = o.config.empty() ? Settings{} : read_config(o.config);
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::config, "--set expects key=value, got \"" + kv + "\"");
    set_key(s, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)), "--set");
  }
  if (o.seed) s["seed"] = std::to_string(*o.seed);
  if (o.heads) s["heads"] = std::to_string(*o.heads);
  if (o.pool_size) s["pool_size"] = std::to_string(*o.pool_size);
  return s;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) fail(ErrorKind::config, std::string("missing required flag ") + flag);
}

// Corpus + split + optional vectors; owns what a Dataset points into.
struct Workspace {
  Corpus corpus;
  SplitSpec split;
  std::optional<VectorStore> vectors;
  TermSet stoplist;
  json inputs = json::object();

  const VectorStore* store() const { return vectors ? &*vectors : nullptr; }
};

std::unique_ptr<Workspace> open_workspace(const Options& o, const Settings& s, bool need_split = true) {
  require(o.doctors, "--doctors");
  require(o.dialogues, "--dialogues");
  auto w = std::make_unique<Workspace>();
  w->corpus = load_corpus(o.doctors, o.dialogues);
  w->inputs["doctors"] = {{"path", o.doctors}, {"digest", file_digest(o.doctors)}};
  w->inputs["dialogues"] = {{"path", o.dialogues}, {"digest", file_digest(o.dialogues)}};
  if (need_split) {
    if (!o.split.empty()) {
      w->split = split_from_json(read_json(o.split), w->corpus);
      w->inputs["split"] = {{"path", o.split}, {"digest", file_digest(o.split)}};
    } else {
      const auto seed = get<std::uint64_t>(s, "split_seed", 0);
      w->split = split_dataset(w->corpus, seed);
      w->inputs["split"] = {{"seed", seed}};
    }
  }
  if (!o.vectors.empty()) {
    w->vectors = load_vectors(o.vectors);
    w->inputs["vectors"] = {{"path", o.vectors}, {"digest", file_digest(o.vectors)}};
  }
  if (!o.stoplist.empty()) w->stoplist = load_term_list(o.stoplist);
  return w;
}

std::optional<BucketSpec> bucket_spec(const Options& o) {
  if (o.bucket.empty()) return std::nullopt;
  return BucketSpec{parse_bucket_key(o.bucket), {}};
}

// ---------------------------------------------------------------------------
// Tables

std::string fixed(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

void print_metrics(std::ostream& out, const std::string& title, const MetricsReport& r) {
  out << title << "\n";
  out << std::left << std::setw(22) << "  bucket" << std::right << std::setw(8) << "n" << std::setw(10)
      << "P@1" << std::setw(10) << "MAP" << std::setw(10) << "ERR@5" << "\n";
  auto row = [&](const std::string& name, const MetricSummary& m) {
    out << std::left << std::setw(22) << ("  " + name) << std::right << std::setw(8) << m.count
        << std::setw(10) << fixed(m.p_at_1) << std::setw(10) << fixed(m.map) << std::setw(10)
        << fixed(m.err_at_5) << "\n";
  };
  row("overall", r.overall);
  for (const auto& [k, m] : r.buckets) row(r.bucket_key + "=" + k, m);
}

void print_history(std::ostream& out, const TrainHistory& h) {
  out << "  epoch  train_loss  val_loss\n";
  out << "      0           -  " << fixed(h.initial_val_loss, 6) << "\n";
  for (const auto& e : h.epochs)
    out << std::setw(7) << e.epoch << "  " << std::setw(10) << fixed(e.train_loss, 6) << "  "
        << fixed(e.val_loss, 6) << (e.epoch == h.best_epoch ? "  *" : "") << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns the manifest entry fields it produced.

json cmd_ingest(const Options& o, Manifest& m) {
  require(o.doctors, "--doctors");
  require(o.dialogues, "--dialogues");
  Corpus c = load_corpus(o.doctors, o.dialogues);
  std::ostringstream d, g;
  save_corpus(c, d, g);
  const fs::path out(o.out);
  write_text(out / "doctors.jsonl", d.str());
  write_text(out / "dialogues.jsonl", g.str());
  m.artifact("doctors", (out / "doctors.jsonl").string());
  m.artifact("dialogues", (out / "dialogues.jsonl").string());
  json r = {{"doctors", c.doctors().size()}, {"dialogues", c.dialogues().size()}};
  std::cout << "ingested " << c.doctors().size() << " doctors, " << c.dialogues().size() << " dialogues\n";
  return r;
}

json cmd_stats(const Options& o, Manifest& m) {
  require(o.doctors, "--doctors");
  require(o.dialogues, "--dialogues");
  Corpus c = load_corpus(o.doctors, o.dialogues);
  TermSet lex = o.lexicon.empty() ? TermSet{} : load_term_list(o.lexicon);
  StatsOptions so;
  if (!o.stoplist.empty()) so.stoplist = load_term_list(o.stoplist);
  StatsReport r = corpus_stats(c, lex, so);
  json j = stats_to_json(r);
  write_json(fs::path(o.out) / "stats.json", j);
  m.artifact("stats", (fs::path(o.out) / "stats.json").string());
  std::cout << std::left;
  auto line = [](const std::string& k, const std::string& v) {
    std::cout << "  " << std::setw(36) << k << v << "\n";
  };
  line("doctors", std::to_string(r.doctor_count));
  line("departments", std::to_string(r.department_count));
  line("dialogues", std::to_string(r.dialogue_count));
  line("vocabulary", std::to_string(r.vocabulary_size));
  line("dialogues per doctor", fixed(r.avg_dialogues_per_doctor, 2));
  line("doctors per department", fixed(r.avg_doctors_per_department, 2));
  line("tokens per query", fixed(r.avg_tokens_query, 2));
  line("tokens per dialogue", fixed(r.avg_tokens_dialogue, 2));
  line("tokens per profile", fixed(r.avg_tokens_profile, 2));
  if (!lex.empty()) {
    line("medical fraction (profile)", fixed(r.medical_term_fraction_profile));
    line("medical fraction (patient turns)", fixed(r.medical_term_fraction_patient_turns));
    line("medical fraction (doctor turns)", fixed(r.medical_term_fraction_doctor_turns));
  }
  return j;
}

json cmd_split(const Options& o, const Settings& s, Manifest& m) {
  auto w = open_workspace(o, s, false);
  const auto seed = get<std::uint64_t>(s, "split_seed", base_seed(s));
  SplitSpec sp = split_dataset(w->corpus, seed);
  const fs::path path = fs::path(o.out) / "split.json";
  write_json(path, split_to_json(sp));
  m.artifact("split", path.string());
  m.entry["inputs"] = w->inputs;
  std::cout << "split seed " << seed << ": " << sp.train_dialogues.size() << " train dialogues, "
            << sp.queries_in(QuerySplit::val).size() << " val queries, "
            << sp.queries_in(QuerySplit::test).size() << " test queries -> " << path.string() << "\n";
  return {{"train", sp.train_dialogues.size()},
          {"val", sp.queries_in(QuerySplit::val).size()},
          {"test", sp.queries_in(QuerySplit::test).size()}};
}

json cmd_gen_synth(const Options& o, const Settings& s, Manifest& m) {
  SynthConfig cfg = synth_config(s);
  SynthCorpus sc = generate(cfg);
  std::ostringstream d, g;
  save_corpus(sc.corpus, d, g);
  const fs::path out(o.out);
  write_text(out / "doctors.jsonl", d.str());
  write_text(out / "dialogues.jsonl", g.str());
  write_json(out / "ground_truth.json", to_json(sc.truth));
  m.artifact("doctors", (out / "doctors.jsonl").string());
  m.artifact("dialogues", (out / "dialogues.jsonl").string());
  m.artifact("ground_truth", (out / "ground_truth.json").string());
  std::cout << "generated " << sc.corpus.doctors().size() << " doctors, " << sc.corpus.dialogues().size()
            << " dialogues over " << cfg.n_topics << " topics -> " << out.string() << "\n";
  return {{"doctors", sc.corpus.doctors().size()}, {"dialogues", sc.corpus.dialogues().size()}};
}

json cmd_pretrain(const Options& o, const Settings& s, Manifest& m) {
  auto w = open_workspace(o, s);
  ModelConfig mc = model_config(s);
  PretrainConfig pc = pretrain_config(s);
  Dataset ds = build_dataset(w->corpus, w->split, dataset_options(mc, w->stoplist));
  HashEncoder enc(mc.encoder);
  PretrainReport rep = pretrain(enc, ds, make_pairs(ds, pc), pc);
  const fs::path out(o.out);
  std::ostringstream ck;
  save_encoder(ck, enc);
  write_text(out / "encoder.ckpt", ck.str());
  json j = to_json(rep);
  j["alignment"] = [&] {
    auto pairs = make_pairs(ds, pc);
    AlignmentStats a = alignment(enc, ds, pairs);
    return json{{"positive_cosine", a.positive_cosine}, {"negative_cosine", a.negative_cosine}};
  }();
  write_json(out / "pretrain_report.json", j);
  m.entry["inputs"] = w->inputs;
  m.artifact("encoder", (out / "encoder.ckpt").string());
  m.artifact("report", (out / "pretrain_report.json").string());
  std::cout << "self-learning: " << rep.train_pairs << " train pairs, " << rep.heldout_pairs
            << " held-out pairs\n  held-out accuracy " << fixed(rep.initial_accuracy) << " -> "
            << fixed(rep.heldout_accuracy) << " (best epoch " << rep.best_epoch << ")\n";
  return j;
}

HashEncoder initial_encoder(const Options& o, const ModelConfig& mc, Manifest& m) {
  if (o.encoder.empty()) return HashEncoder(mc.encoder);
  HashEncoder enc = load_encoder(load_checkpoint(o.encoder));
  if (enc.config().dim != mc.encoder.dim || enc.config().hash_buckets != mc.encoder.hash_buckets)
    fail(ErrorKind::config, "encoder checkpoint shape does not match dim/hash_buckets");
  m.entry["inputs"]["encoder"] = {{"path", o.encoder}, {"digest", file_digest(o.encoder)}};
  return enc;
}

json cmd_train(const Options& o, const Settings& s, Manifest& m) {
  auto w = open_workspace(o, s);
  ModelConfig mc = model_config(s);
  mc.self_learning = !o.encoder.empty();
  Dataset ds = build_dataset(w->corpus, w->split, dataset_options(mc, w->stoplist));
  m.entry["inputs"] = w->inputs;
  RecommenderModel model(mc, initial_encoder(o, mc, m));
  TrainHistory h = train(model, ds, w->store(), [](const EpochRecord& e) {
    std::cerr << "epoch " << e.epoch << " train " << fixed(e.train_loss, 6) << " val " << fixed(e.val_loss, 6) << "\n";
  });
  const fs::path out(o.out);
  write_text(out / "model.ckpt", model.checkpoint());
  write_json(out / "history.json", to_json(h));
  if (o.split.empty()) {
    write_json(out / "split.json", split_to_json(w->split));
    m.artifact("split", (out / "split.json").string());
  }
  m.artifact("checkpoint", (out / "model.ckpt").string());
  m.artifact("history", (out / "history.json").string());
  m.entry["model_id"] = model_id_of(model.checkpoint());
  print_history(std::cout, h);
  return to_json(h);
}

RecommenderModel load_model(const Options& o, Manifest& m) {
  require(o.checkpoint, "--checkpoint");
  m.entry["inputs"]["checkpoint"] = {{"path", o.checkpoint}, {"digest", file_digest(o.checkpoint)}};
  return RecommenderModel::load(load_checkpoint(o.checkpoint));
}

json cmd_eval(const Options& o, const Settings& s, Manifest& m) {
  auto w = open_workspace(o, s);
  m.entry["inputs"] = w->inputs;
  const auto buckets = bucket_spec(o);
  const fs::path out(o.out);
  if (o.seeds.empty()) {
    RecommenderModel model = load_model(o, m);
    Dataset ds = build_dataset(w->corpus, w->split, dataset_options(model.config(), w->stoplist));
    Recommender rec(model, ds, w->store());
    MetricsReport r = evaluate(rec, ds.test_queries, buckets);
    json j = report_to_json(r);
    write_json(out / "metrics.json", j);
    m.artifact("metrics", (out / "metrics.json").string());
    print_metrics(std::cout, "test metrics", r);
    return j;
  }
  // Train and evaluate once per seed, then average.
  const auto seeds = parse_list(o.seeds, "seed");
  m.entry["seeds"] = seeds;
  ModelConfig mc = model_config(s);
  PretrainConfig pc = pretrain_config(s);
  Dataset ds = build_dataset(w->corpus, w->split, dataset_options(mc, w->stoplist));
  json runs = json::array();
  std::vector<MetricsReport> reports;
  for (auto seed : seeds) {
    reseed(mc, pc, seed);
    FitResult f = fit(ds, mc, pc, w->store());
    Recommender rec(f.model, ds, w->store());
    reports.push_back(evaluate(rec, ds.test_queries, buckets));
    runs.push_back({{"seed", seed}, {"best_epoch", f.history.best_epoch}, {"metrics", report_to_json(reports.back())}});
    print_metrics(std::cout, "seed " + std::to_string(seed), reports.back());
  }
  auto mean = [&](auto field) {
    double t = 0.0;
    for (const auto& r : reports) t += field(r.overall);
    return t / static_cast<double>(reports.size());
  };
  json avg = {{"p_at_1", mean([](const MetricSummary& x) { return x.p_at_1; })},
              {"map", mean([](const MetricSummary& x) { return x.map; })},
              {"err_at_5", mean([](const MetricSummary& x) { return x.err_at_5; })}};
  json j = {{"runs", runs}, {"mean", avg}};
  write_json(out / "metrics.json", j);
  m.artifact("metrics", (out / "metrics.json").string());
  std::cout << "mean over " << seeds.size() << " seeds: P@1 " << fixed(avg["p_at_1"]) << "  MAP "
            << fixed(avg["map"]) << "  ERR@5 " << fixed(avg["err_at_5"]) << "\n";
  return j;
}

json cmd_baseline(const Options& o, const Settings& s, Manifest& m) {
  require(o.kind, "--kind");
  const BaselineKind kind = parse_baseline_kind(o.kind);
  auto w = open_workspace(o, s);
  m.entry["inputs"] = w->inputs;
  ModelConfig mc = model_config(s);
  Dataset ds = build_dataset(w->corpus, w->split, dataset_options(mc, w->stoplist));
  HashEncoder enc = initial_encoder(o, mc, m);
  MetricsReport r;
  json extra = json::object();
  if (is_neural(kind)) {
    TrainHistory h;
    RecommenderModel model = train_mlp_baseline(ds, kind, mc, enc, w->store(), &h);
    Recommender rec(model, ds, w->store());
    r = evaluate(rec, ds.test_queries, bucket_spec(o));
    extra = to_json(h);
  } else {
    FrozenEmbeddings emb(enc, ds, w->store());
    BaselineConfig bc{kind, get<std::size_t>(s, "k_neighbors", 20), base_seed(s)};
    r = evaluate_rankings(ds, ds.test_queries, make_baseline_ranker(bc, emb), bucket_spec(o));
  }
  json j = report_to_json(r);
  j["kind"] = to_string(kind);
  if (!extra.empty()) j["history"] = extra;
  const fs::path path = fs::path(o.out) / ("baseline_" + std::string(to_string(kind)) + ".json");
  write_json(path, j);
  m.artifact("metrics", path.string());
  print_metrics(std::cout, std::string("baseline ") + to_string(kind), r);
  return j;
}

json cmd_sweep_heads(const Options& o, const Settings& s, Manifest& m) {
  auto w = open_workspace(o, s);
  m.entry["inputs"] = w->inputs;
  const auto heads = parse_list(o.heads_list, "heads");
  PretrainConfig pc = pretrain_config(s);
  ModelConfig base = model_config(s);
  Dataset ds = build_dataset(w->corpus, w->split, dataset_options(base, w->stoplist));
  json reports = json::array();
  // The encoder stage does not depend on the head count; fit it once.
  HashEncoder encoder(base.encoder);
  if (base.self_learning && !w->store()) pretrain(encoder, ds, make_pairs(ds, pc), pc);
  for (auto l : heads) {
    ModelConfig mc = base;
    mc.heads = l;
    mc.validate();
    RecommenderModel model(mc, encoder);
    TrainHistory h = train(model, ds, w->store());
    Recommender rec(model, ds, w->store());
    MetricsReport r = evaluate(rec, ds.test_queries, bucket_spec(o));
    reports.push_back({{"heads", l}, {"best_epoch", h.best_epoch}, {"metrics", report_to_json(r)}});
    print_metrics(std::cout, "heads " + std::to_string(l), r);
  }
  const fs::path path = fs::path(o.out) / "sweep_heads.json";
  write_json(path, reports);
  m.artifact("metrics", path.string());
  return reports;
}

// Resolves a query either from a split query id or from free text.
QueryDoc resolve_query(const Options& o, const Dataset& ds, const ModelConfig& mc) {
  if (!o.query_id.empty()) {
    for (const auto* list : {&ds.test_queries, &ds.val_queries})
      for (const QueryDoc& q : *list)
        if (q.query_id == o.query_id) return q;
    fail(ErrorKind::validation, "unknown query id \"" + o.query_id + "\"");
  }
  require(o.query, "--query or --query-id");
  static const TermSet none;
  auto toks = truncate_tokens(tokenize(o.query, none, true));
  if (toks.empty()) fail(ErrorKind::validation, "query is empty after tokenization");
  QueryDoc q;
  q.doc = make_document("", std::move(toks), mc.encoder.hash_buckets);
  q.query_id = "adhoc";
  return q;
}

json cmd_explain(const Options& o, const Settings& s, Manifest& m) {
  auto w = open_workspace(o, s);
  RecommenderModel model = load_model(o, m);
  m.entry["inputs"].update(w->inputs);
  Dataset ds = build_dataset(w->corpus, w->split, dataset_options(model.config(), w->stoplist));
  Recommender rec(model, ds, w->store());
  QueryDoc q = resolve_query(o, ds, model.config());
  const std::size_t doctor =
      o.doctor.empty() ? w->corpus.doctor_index(rec.rank(q.doc).entries.front().first)
                       : w->corpus.doctor_index(o.doctor);
  TermSet lex = o.lexicon.empty() ? TermSet{} : load_term_list(o.lexicon);
  Explanation e = explain(rec, q, doctor, o.top.value_or(5), lex);
  json j = to_json(e);
  const fs::path path = fs::path(o.out) / "explain.json";
  write_json(path, j);
  m.artifact("explanation", path.string());
  std::cout << "doctor " << e.doctor_id << " for query " << e.query_id << "\n";
  for (std::size_t h = 0; h < e.heads.size(); ++h) {
    std::cout << "  head " << h + 1 << ":";
    for (const auto& [t, wt] : e.heads[h].tokens) std::cout << " " << t << "(" << fixed(wt, 3) << ")";
    std::cout << "\n";
  }
  return j;
}

json cmd_recommend(const Options& o, const Settings& s, Manifest& m) {
  auto w = open_workspace(o, s);
  RecommenderModel model = load_model(o, m);
  m.entry["inputs"].update(w->inputs);
  Dataset ds = build_dataset(w->corpus, w->split, dataset_options(model.config(), w->stoplist));
  Recommender rec(model, ds, w->store());
  QueryDoc q = resolve_query(o, ds, model.config());
  RankResult r = rec.rank(q.doc);
  const std::size_t top = o.top.value_or(get<std::size_t>(s, "top_k", 5));
  if (top == 0) fail(ErrorKind::config, "--top must be positive");
  json results = json::array();
  for (std::size_t i = 0; i < std::min(top, r.entries.size()); ++i) {
    const auto& [id, score] = r.entries[i];
    results.push_back({{"doctor_id", id}, {"score", score}, {"department", w->corpus.doctor(id).department}});
    if (!o.json_out) std::cout << id << "\t" << fixed(score, 6) << "\n";
  }
  return {{"results", results}};
}

json cmd_grad_check(const Options& o, const Settings&, Manifest& m) {
  if (!o.config.empty() && o.config != "small")
    fail(ErrorKind::config, "grad-check supports --config small");
  // d=16, 2 heads, 5 dialogues per doctor, pool of 4, hidden 8.
  SynthConfig sc;
  sc.n_topics = 2;
  sc.n_doctors = 4;
  sc.dialogues_per_doctor = 6;
  sc.turns_per_dialogue = 2;
  sc.tokens_per_turn = 8;
  sc.tokens_per_profile = 10;
  sc.seed = o.seed.value_or(0);
  SynthCorpus syn = generate(sc);
  SplitSpec sp = split_dataset(syn.corpus, sc.seed);
  ModelConfig mc;
  mc.encoder = EncoderConfig{64, 16, sc.seed};
  mc.heads = 2;
  mc.mlp_hidden = 8;
  mc.pool_size = 4;
  mc.neg_ratio = 3;
  mc.max_dialogues = 5;
  mc.seed = sc.seed;
  Dataset ds = build_dataset(syn.corpus, sp, dataset_options(mc));
  RecommenderModel model(mc);
  Embedder emb(model.encoder());
  Rng rng(sc.seed);
  const std::size_t order[] = {0};
  auto examples = make_examples(ds, ds.train_queries, order, mc.neg_ratio, rng);
  auto params = model.parameters();
  const double eps = 1e-4;
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckResult r = grad_check(
      [&](Tape& tape) { return batch_loss(tape, model, ds, emb, ds.train_queries, examples); }, params, eps);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = r.max_rel_error < 1e-3;
  std::cout << "max relative error " << std::scientific << std::setprecision(3) << r.max_rel_error
            << " over " << r.coordinates << " coordinates (worst " << r.worst_param << "[" << r.worst_index
            << "]) in " << std::fixed << std::setprecision(2) << secs << " s: " << (pass ? "PASS" : "FAIL")
            << "\n";
  m.entry["seeds"] = {sc.seed};
  json j = {{"max_rel_error", r.max_rel_error}, {"coordinates", r.coordinates}, {"worst_param", r.worst_param},
            {"eps", eps}, {"seconds", secs}, {"pass", pass}};
  if (!pass) m.entry["failed"] = true;
  return j;
}

std::atomic<httplib::Server*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

json cmd_serve(const Options& o, const Settings& s, Manifest& m) {
  require(o.checkpoint, "--checkpoint");
  require(o.doctors, "--doctors");
  require(o.dialogues, "--dialogues");
  RecommendService service;
  httplib::Server server;
  install_routes(server, service);
  if (!server.bind_to_port(o.host, o.port))
    fail(ErrorKind::io, "cannot bind " + o.host + ":" + std::to_string(o.port));
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread listener([&] { server.listen_after_bind(); });
  std::cerr << "listening on " << o.host << ":" << o.port << " (loading model)\n";
  try {
    auto w = open_workspace(o, s);
    const std::string text = [&] {
      std::ifstream in(o.checkpoint, std::ios::binary);
      if (!in) fail(ErrorKind::io, "cannot open \"" + o.checkpoint + "\"");
      std::ostringstream os;
      os << in.rdbuf();
      return os.str();
    }();
    std::istringstream in(text);
    RecommenderModel model = RecommenderModel::load(read_checkpoint(in, o.checkpoint));
    if (w->store()) fail(ErrorKind::config, "serve does not take --vectors");
    const DatasetOptions opts = dataset_options(model.config(), w->stoplist);
    m.entry["inputs"] = w->inputs;
    service.publish(make_snapshot(std::move(w->corpus), std::move(w->split), std::move(model),
                                  model_id_of(text), opts));
    std::cerr << "model " << service.snapshot()->model_id << " ready\n";
  } catch (...) {
    server.stop();
    listener.join();
    g_server = nullptr;
    throw;
  }
  listener.join();
  g_server = nullptr;
  return {{"model_id", service.snapshot()->model_id}, {"port", o.port}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doctor recommendation from profiles and consultation dialogues"};
  app.require_subcommand(1);
  Options o;

  auto corpus_flags = [&](CLI::App* c) {
    c->add_option("--doctors", o.doctors, "doctors JSONL file");
    c->add_option("--dialogues", o.dialogues, "dialogues JSONL file");
  };
  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key=value config file");
    c->add_option("--set", o.set, "override a config key (key=value), repeatable");
    c->add_option("--seed", o.seed, "base seed");
    c->add_option("--out", o.out, "output directory")->capture_default_str();
    c->add_flag("--json", o.json_out, "print the JSON result instead of a table");
  };
  auto model_flags = [&](CLI::App* c) {
    corpus_flags(c);
    c->add_option("--split", o.split, "split JSON (default: derived from split_seed)");
    c->add_option("--heads", o.heads, "attention heads");
    c->add_option("--pool-size", o.pool_size, "candidate pool size");
    c->add_option("--vectors", o.vectors, "precomputed embeddings (vector file)");
    c->add_option("--stoplist", o.stoplist, "stopword list for non-query turns");
  };

  std::map<std::string, CLI::App*> sub;
  auto add = [&](const char* name, const char* desc) { return sub[name] = app.add_subcommand(name, desc); };

  auto* ingest = add("ingest", "validate a corpus and write normalized copies");
  corpus_flags(ingest);
  common(ingest);
  auto* stats = add("stats", "corpus statistics");
  corpus_flags(stats);
  common(stats);
  stats->add_option("--lexicon", o.lexicon, "medical term list");
  stats->add_option("--stoplist", o.stoplist, "stopword list excluded from the vocabulary");
  auto* split = add("split", "per-doctor 80/10/10 split");
  corpus_flags(split);
  common(split);
  auto* gen = add("gen-synth", "generate a synthetic corpus with planted topics");
  common(gen);
  auto* pre = add("pretrain", "self-learning stage for the text encoder");
  model_flags(pre);
  common(pre);
  auto* tr = add("train", "train the ranker");
  model_flags(tr);
  common(tr);
  tr->add_option("--encoder", o.encoder, "self-learned encoder checkpoint");
  auto* ev = add("eval", "evaluate a checkpoint, or train+evaluate per seed");
  model_flags(ev);
  common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  ev->add_option("--seeds", o.seeds, "comma-separated seeds to train and average");
  ev->add_option("--bucket", o.bucket, "query_len|dialogue_len|profile_len|department");
  auto* bl = add("baseline", "run a baseline ranker");
  model_flags(bl);
  common(bl);
  bl->add_option("--kind", o.kind, "random|frequency|knn|cos_profile|cos_dialogue|mlp_p|mlp_d|mlp_pd");
  bl->add_option("--encoder", o.encoder, "encoder checkpoint");
  bl->add_option("--bucket", o.bucket, "bucket key");
  auto* sw = add("sweep-heads", "train and evaluate per head count");
  model_flags(sw);
  common(sw);
  sw->add_option("--heads-list", o.heads_list, "head counts")->capture_default_str();
  sw->add_option("--bucket", o.bucket, "bucket key");
  auto* ex = add("explain", "per-head attention keywords");
  model_flags(ex);
  common(ex);
  ex->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  ex->add_option("--query", o.query, "query text");
  ex->add_option("--query-id", o.query_id, "query id from the split");
  ex->add_option("--doctor", o.doctor, "doctor id (default: top-ranked)");
  ex->add_option("--top", o.top, "tokens per head");
  ex->add_option("--lexicon", o.lexicon, "restrict tokens to this term list");
  auto* rc = add("recommend", "rank doctors for a query");
  model_flags(rc);
  common(rc);
  rc->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  rc->add_option("--query", o.query, "query text");
  rc->add_option("--query-id", o.query_id, "query id from the split");
  rc->add_option("--top", o.top, "results to print");
  auto* gc = add("grad-check", "finite-difference gradient check");
  gc->add_option("--config", o.config, "preset (small)");
  gc->add_option("--seed", o.seed, "seed");
  gc->add_option("--out", o.out, "output directory")->capture_default_str();
  gc->add_flag("--json", o.json_out, "print the JSON result");
  auto* sv = add("serve", "HTTP ranking service");
  corpus_flags(sv);
  sv->add_option("--split", o.split, "split JSON");
  sv->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  sv->add_option("--config", o.config, "key=value config file");
  sv->add_option("--port", o.port, "port")->capture_default_str();
  sv->add_option("--host", o.host, "bind address")->capture_default_str();
  sv->add_option("--stoplist", o.stoplist, "stopword list");
  sv->add_option("--out", o.out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  std::string name;
  for (const auto& [n, c] : sub)
    if (c->parsed()) name = n;

  Manifest m;
  m.entry["command"] = name;
  m.entry["argv"] = std::vector<std::string>(argv + 1, argv + argc);
  m.entry["started_at"] = utc_now();
  try {
    const Settings s = name == "grad-check" ? Settings{} : settings_of(o);
    m.entry["config"] = s;
    if (!s.empty() || o.seed) m.entry["seeds"] = {base_seed(s)};
    json result;
    if (name == "ingest") result = cmd_ingest(o, m);
    else if (name == "stats") result = cmd_stats(o, m);
    else if (name == "split") result = cmd_split(o, s, m);
    else if (name == "gen-synth") result = cmd_gen_synth(o, s, m);
    else if (name == "pretrain") result = cmd_pretrain(o, s, m);
    else if (name == "train") result = cmd_train(o, s, m);
    else if (name == "eval") result = cmd_eval(o, s, m);
    else if (name == "baseline") result = cmd_baseline(o, s, m);
    else if (name == "sweep-heads") result = cmd_sweep_heads(o, s, m);
    else if (name == "explain") result = cmd_explain(o, s, m);
    else if (name == "recommend") result = cmd_recommend(o, s, m);
    else if (name == "grad-check") result = cmd_grad_check(o, s, m);
    else if (name == "serve") result = cmd_serve(o, s, m);
    if (o.json_out) std::cout << result.dump(2) << "\n";
    m.entry["finished_at"] = utc_now();
    m.entry["result"] = result;
    append_manifest(o.out, m.entry);
    if (m.entry.value("failed", false)) return 1;
    return 0;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error [io]: " << e.what() << "\n";
    return exit_code(ErrorKind::io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
