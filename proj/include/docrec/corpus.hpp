#pragma once

// Forum corpus: experts (doctors) with profiles, their history dialogues, and
// the queries derived from held-out dialogues.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "docrec/error.hpp"
#include "docrec/rng.hpp"

namespace docrec {

using TermSet = std::unordered_set<std::string>;

enum class Role { patient, doctor };

struct Turn {
  Role role = Role::patient;
  std::string text;
};

struct Dialogue {
  std::string dialogue_id;
  std::string doctor_id;
  std::vector<Turn> turns;

  // The first turn is the patient's query.
  const std::string& query_text() const { return turns.front().text; }
};

struct Doctor {
  std::string doctor_id;
  std::string department;
  std::string profile_text;
  std::vector<std::string> dialogue_ids;
};

// Cross-referenced corpus. Construction validates every invariant, so a
// Corpus value is always consistent.
class Corpus {
public:
  Corpus() = default;

  Corpus(std::vector<Doctor> doctors, std::vector<Dialogue> dialogues)
      : doctors_(std::move(doctors)), dialogues_(std::move(dialogues)) {
    for (std::size_t i = 0; i < doctors_.size(); ++i) {
      Doctor& d = doctors_[i];
      d.dialogue_ids.clear();
      if (!doctor_index_.emplace(d.doctor_id, i).second)
        fail(ErrorKind::validation, "duplicate doctor_id \"" + d.doctor_id + "\"");
    }
    for (std::size_t i = 0; i < dialogues_.size(); ++i) {
      const Dialogue& g = dialogues_[i];
      if (!dialogue_index_.emplace(g.dialogue_id, i).second)
        fail(ErrorKind::validation, "duplicate dialogue_id \"" + g.dialogue_id + "\"");
      auto it = doctor_index_.find(g.doctor_id);
      if (it == doctor_index_.end())
        fail(ErrorKind::validation, "dialogue \"" + g.dialogue_id +
                                        "\" references unknown doctor \"" + g.doctor_id + "\"");
      validate_dialogue(g);
      doctors_[it->second].dialogue_ids.push_back(g.dialogue_id);
    }
  }

  const std::vector<Doctor>& doctors() const noexcept { return doctors_; }
  const std::vector<Dialogue>& dialogues() const noexcept { return dialogues_; }

  std::size_t doctor_index(const std::string& id) const {
    auto it = doctor_index_.find(id);
    if (it == doctor_index_.end()) fail(ErrorKind::validation, "unknown doctor \"" + id + "\"");
    return it->second;
  }
  std::size_t dialogue_index(const std::string& id) const {
    auto it = dialogue_index_.find(id);
    if (it == dialogue_index_.end()) fail(ErrorKind::validation, "unknown dialogue \"" + id + "\"");
    return it->second;
  }
  bool has_doctor(const std::string& id) const { return doctor_index_.contains(id); }

  const Doctor& doctor(const std::string& id) const { return doctors_[doctor_index(id)]; }
  const Dialogue& dialogue(const std::string& id) const { return dialogues_[dialogue_index(id)]; }

private:
  static void validate_dialogue(const Dialogue& g) {
    if (g.turns.empty())
      fail(ErrorKind::validation, "dialogue \"" + g.dialogue_id + "\" has no turns");
    if (g.turns.front().role != Role::patient)
      fail(ErrorKind::validation,
           "dialogue \"" + g.dialogue_id + "\" does not start with a patient turn");
    for (std::size_t i = 0; i < g.turns.size(); ++i) {
      const std::string& t = g.turns[i].text;
      if (std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); }))
        fail(ErrorKind::validation,
             "dialogue \"" + g.dialogue_id + "\" turn " + std::to_string(i) + " has empty text");
    }
  }

  std::vector<Doctor> doctors_;
  std::vector<Dialogue> dialogues_;
  std::unordered_map<std::string, std::size_t> doctor_index_;
  std::unordered_map<std::string, std::size_t> dialogue_index_;
};

// ---------------------------------------------------------------------------
// JSONL I/O

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj, const char* key,
                                           const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorKind::parse, where + ": missing field \"" + key + "\"");
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key,
                                  const std::string& where) {
  const auto& v = require_field(obj, key, where);
  if (!v.is_string()) fail(ErrorKind::parse, where + ": field \"" + key + "\" must be a string");
  return v.get<std::string>();
}

// Calls fn(json, "name:line") for every non-blank line.
template <class Fn>
void for_each_json_line(std::istream& in, const std::string& name, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::parse, where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) fail(ErrorKind::parse, where + ": record must be a JSON object");
    fn(j, where);
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open \"" + path + "\"");
  return in;
}

}  // namespace detail

inline Role parse_role(const std::string& s, const std::string& where) {
  if (s == "patient") return Role::patient;
  if (s == "doctor") return Role::doctor;
  fail(ErrorKind::parse, where + ": unknown role \"" + s + "\"");
}

inline const char* to_string(Role r) { return r == Role::patient ? "patient" : "doctor"; }

inline std::vector<Doctor> read_doctors(std::istream& in, const std::string& name = "doctors") {
  std::vector<Doctor> out;
  detail::for_each_json_line(in, name, [&](const nlohmann::json& j, const std::string& where) {
    Doctor d;
    d.doctor_id = detail::require_string(j, "doctor_id", where);
    d.department = detail::require_string(j, "department", where);
    d.profile_text = detail::require_string(j, "profile", where);
    out.push_back(std::move(d));
  });
  return out;
}

inline std::vector<Dialogue> read_dialogues(std::istream& in,
                                            const std::string& name = "dialogues") {
  std::vector<Dialogue> out;
  detail::for_each_json_line(in, name, [&](const nlohmann::json& j, const std::string& where) {
    Dialogue g;
    g.dialogue_id = detail::require_string(j, "dialogue_id", where);
    g.doctor_id = detail::require_string(j, "doctor_id", where);
    const auto& turns = detail::require_field(j, "turns", where);
    if (!turns.is_array()) fail(ErrorKind::parse, where + ": field \"turns\" must be an array");
    for (const auto& t : turns) {
      if (!t.is_object()) fail(ErrorKind::parse, where + ": turn must be an object");
      Turn turn;
      turn.role = parse_role(detail::require_string(t, "role", where), where);
      turn.text = detail::require_string(t, "text", where);
      g.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(g));
  });
  return out;
}

inline Corpus load_corpus(std::istream& doctors, std::istream& dialogues) {
  return Corpus(read_doctors(doctors), read_dialogues(dialogues));
}

inline Corpus load_corpus(const std::string& doctors_path, const std::string& dialogues_path) {
  auto din = detail::open_input(doctors_path);
  auto gin = detail::open_input(dialogues_path);
  return Corpus(read_doctors(din, doctors_path), read_dialogues(gin, dialogues_path));
}

inline void save_corpus(const Corpus& corpus, std::ostream& doctors, std::ostream& dialogues) {
  for (const Doctor& d : corpus.doctors()) {
    nlohmann::json j = {
        {"doctor_id", d.doctor_id}, {"department", d.department}, {"profile", d.profile_text}};
    doctors << j.dump() << '\n';
  }
  for (const Dialogue& g : corpus.dialogues()) {
    nlohmann::json turns = nlohmann::json::array();
    for (const Turn& t : g.turns) turns.push_back({{"role", to_string(t.role)}, {"text", t.text}});
    nlohmann::json j = {
        {"dialogue_id", g.dialogue_id}, {"doctor_id", g.doctor_id}, {"turns", std::move(turns)}};
    dialogues << j.dump() << '\n';
  }
}

// One term per line; blank lines and surrounding whitespace ignored. Terms are
// case-folded like tokens.
inline TermSet read_term_list(std::istream& in);

inline TermSet load_term_list(const std::string& path) {
  auto in = detail::open_input(path);
  return read_term_list(in);
}

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

// Decodes one UTF-8 code point starting at s[i]; advances i. Invalid bytes
// decode to U+FFFD.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) { len = 2; cp = b0 & 0x1F; }
  else if ((b0 & 0xF0) == 0xE0) { len = 3; cp = b0 & 0x0F; }
  else if ((b0 & 0xF8) == 0xF0) { len = 4; cp = b0 & 0x07; }
  else {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline bool in_range(char32_t c, char32_t lo, char32_t hi) { return c >= lo && c <= hi; }

// Whitespace, punctuation and symbols split tokens; '_' is a word character.
inline bool is_delimiter(char32_t c) {
  if (c < 0x80) {
    if (c == '_') return false;
    return !((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'));
  }
  if (c == 0x85 || c == 0xFFFD) return true;
  if (in_range(c, 0xA0, 0xBF))
    return !(c == 0xAA || c == 0xB2 || c == 0xB3 || c == 0xB5 || c == 0xB9 || c == 0xBA);
  if (c == 0xD7 || c == 0xF7) return true;
  if (c == 0x1680 || in_range(c, 0x2000, 0x206F)) return true;  // spaces + general punctuation
  if (in_range(c, 0x2190, 0x2BFF)) return true;                  // arrows, math, shapes
  if (in_range(c, 0x3000, 0x3003) || in_range(c, 0x3008, 0x3011) || in_range(c, 0x3014, 0x301F))
    return true;                                                  // CJK punctuation
  if (in_range(c, 0xFE10, 0xFE19) || in_range(c, 0xFE30, 0xFE4F)) return true;
  if (in_range(c, 0xFF01, 0xFF0F) || in_range(c, 0xFF1A, 0xFF20) ||
      in_range(c, 0xFF3B, 0xFF3E) || c == 0xFF40 || in_range(c, 0xFF5B, 0xFF65))
    return true;                                                  // fullwidth punctuation
  return false;
}

inline char32_t fold_case(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if (c < 0x80) return c;
  if (in_range(c, 0xC0, 0xDE) && c != 0xD7) return c + 32;
  if (in_range(c, 0x100, 0x17F) && c != 0x130 && c != 0x131 && c != 0x138 && c != 0x149) {
    // Latin Extended-A pairs: even upper / odd lower, shifted by one in 0x139-0x148, 0x179-0x17E.
    const bool shifted = in_range(c, 0x139, 0x148) || in_range(c, 0x179, 0x17E);
    if (shifted) return (c % 2 == 1) ? c + 1 : c;
    return (c % 2 == 0) ? c + 1 : c;
  }
  if (in_range(c, 0x391, 0x3A9) && c != 0x3A2) return c + 32;  // Greek
  if (in_range(c, 0x410, 0x42F)) return c + 32;                 // Cyrillic
  if (in_range(c, 0x400, 0x40F)) return c + 80;
  if (in_range(c, 0xFF21, 0xFF3A)) return c + 32;               // fullwidth Latin
  return c;
}

}  // namespace detail

// Case-folded split on Unicode whitespace and punctuation. Stoplist members
// are dropped unless keep_stopwords is set; the stoplist is matched against
// case-folded tokens.
inline std::vector<std::string> tokenize(std::string_view text, const TermSet& stoplist,
                                         bool keep_stopwords) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (keep_stopwords || !stoplist.contains(cur)) out.push_back(cur);
    cur.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t c = detail::next_code_point(text, i);
    if (detail::is_delimiter(c) || c <= 0x20) {
      flush();
    } else {
      detail::append_utf8(cur, detail::fold_case(c));
    }
  }
  flush();
  return out;
}

inline TermSet read_term_list(std::istream& in) {
  TermSet out;
  std::string line;
  static const TermSet none;
  while (std::getline(in, line))
    for (auto& t : tokenize(line, none, true)) out.insert(std::move(t));
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

// Documents longer than this are truncated at the tail.
inline constexpr std::size_t max_document_tokens = 512;

inline std::vector<std::string> truncate_tokens(std::vector<std::string> tokens,
                                                std::size_t cap = max_document_tokens) {
  if (tokens.size() > cap) tokens.resize(cap);
  return tokens;
}

// Query tokens: the first patient turn, stopwords kept.
inline std::vector<std::string> query_tokens(const Dialogue& g) {
  static const TermSet none;
  return tokenize(g.query_text(), none, true);
}

// Dialogue document: turns in order; the query turn keeps stopwords, the
// remaining turns drop them.
inline std::vector<std::string> dialogue_tokens(const Dialogue& g, const TermSet& stoplist) {
  std::vector<std::string> out = query_tokens(g);
  for (std::size_t i = 1; i < g.turns.size(); ++i) {
    auto t = tokenize(g.turns[i].text, stoplist, false);
    out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  return out;
}

inline std::vector<std::string> profile_tokens(const Doctor& d) {
  static const TermSet none;
  return tokenize(d.profile_text, none, true);
}

// ---------------------------------------------------------------------------
// Split

enum class QuerySplit { val, test };

inline const char* to_string(QuerySplit s) { return s == QuerySplit::val ? "val" : "test"; }

struct Query {
  std::string query_id;
  std::vector<std::string> tokens;
  std::string gold_doctor_id;
  std::string source_dialogue_id;
  QuerySplit split = QuerySplit::val;
};

struct SplitSpec {
  std::set<std::string> train_dialogues;
  std::vector<Query> queries;
  std::uint64_t seed = 0;

  std::vector<const Query*> queries_in(QuerySplit s) const {
    std::vector<const Query*> out;
    for (const Query& q : queries)
      if (q.split == s) out.push_back(&q);
    return out;
  }
};

// round(0.8 n), half up, in integer arithmetic.
inline std::size_t train_share(std::size_t n) { return (8 * n + 5) / 10; }

inline Query make_query(const Dialogue& g, QuerySplit split) {
  return Query{g.dialogue_id, query_tokens(g), g.doctor_id, g.dialogue_id, split};
}

// Per-doctor seeded 80/20 split; held-out first turns become queries, shuffled
// on the same stream and halved into val/test (val takes the odd one).
inline SplitSpec split_dataset(const Corpus& corpus, std::uint64_t seed) {
  Rng rng(seed);
  SplitSpec spec;
  spec.seed = seed;
  std::vector<const Dialogue*> held;
  for (const Doctor& d : corpus.doctors()) {
    std::vector<std::string> ids = d.dialogue_ids;
    rng.shuffle(ids);
    const std::size_t n_train = train_share(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i < n_train) spec.train_dialogues.insert(ids[i]);
      else held.push_back(&corpus.dialogue(ids[i]));
    }
  }
  rng.shuffle(held);
  const std::size_t n_val = (held.size() + 1) / 2;
  for (std::size_t i = 0; i < held.size(); ++i)
    spec.queries.push_back(make_query(*held[i], i < n_val ? QuerySplit::val : QuerySplit::test));
  return spec;
}

inline nlohmann::json split_to_json(const SplitSpec& s) {
  nlohmann::json q = nlohmann::json::array();
  for (const Query& query : s.queries)
    q.push_back({{"query_id", query.query_id},
                 {"dialogue_id", query.source_dialogue_id},
                 {"doctor_id", query.gold_doctor_id},
                 {"split", to_string(query.split)}});
  return {{"seed", s.seed}, {"train", s.train_dialogues}, {"queries", std::move(q)}};
}

// Query tokens are re-derived from the corpus.
inline SplitSpec split_from_json(const nlohmann::json& j, const Corpus& corpus) {
  SplitSpec s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& id : j.at("train")) {
      corpus.dialogue_index(id.get<std::string>());
      s.train_dialogues.insert(id.get<std::string>());
    }
    for (const auto& q : j.at("queries")) {
      const Dialogue& g = corpus.dialogue(q.at("dialogue_id").get<std::string>());
      const std::string split = q.at("split").get<std::string>();
      if (split != "val" && split != "test")
        fail(ErrorKind::parse, "split file: unknown split \"" + split + "\"");
      Query query = make_query(g, split == "val" ? QuerySplit::val : QuerySplit::test);
      query.query_id = q.at("query_id").get<std::string>();
      s.queries.push_back(std::move(query));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("split file: ") + e.what());
  }
  return s;
}

// Training-dialogue count per doctor (every doctor present, possibly 0).
inline std::map<std::string, std::size_t> train_counts(const Corpus& corpus,
                                                       const SplitSpec& split) {
  std::map<std::string, std::size_t> counts;
  for (const Doctor& d : corpus.doctors()) {
    std::size_t c = 0;
    for (const auto& id : d.dialogue_ids) c += split.train_dialogues.contains(id) ? 1 : 0;
    counts[d.doctor_id] = c;
  }
  return counts;
}

inline constexpr std::size_t default_pool_size = 100;

// Doctors by descending training-dialogue count, ties by ascending id.
inline std::vector<std::string> rank_by_count(const std::map<std::string, std::size_t>& counts) {
  std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(v.size());
  for (auto& [id, c] : v) out.push_back(id);
  return out;
}

inline std::vector<std::string> candidate_pool(const Corpus& corpus, const SplitSpec& split,
                                               std::size_t size = default_pool_size) {
  if (size < 1) fail(ErrorKind::config, "candidate pool size must be >= 1");
  auto ids = rank_by_count(train_counts(corpus, split));
  if (ids.size() > size) ids.resize(size);
  return ids;
}

// ---------------------------------------------------------------------------
// Statistics

struct Histogram {
  std::size_t bin_width = 1;
  std::vector<std::size_t> counts;  // counts[i] covers [i*w, (i+1)*w)

  void add(std::size_t value) {
    const std::size_t b = value / bin_width;
    if (counts.size() <= b) counts.resize(b + 1, 0);
    ++counts[b];
  }
  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

struct StatsReport {
  std::size_t dialogue_count = 0;
  std::size_t doctor_count = 0;
  std::size_t department_count = 0;
  std::size_t vocabulary_size = 0;
  double avg_dialogues_per_doctor = 0.0;
  double avg_doctors_per_department = 0.0;
  double avg_tokens_query = 0.0;
  double avg_tokens_dialogue = 0.0;
  double avg_tokens_profile = 0.0;
  Histogram dialogues_per_doctor_histogram;
  Histogram dialogue_length_histogram;
  double medical_term_fraction_profile = 0.0;
  double medical_term_fraction_patient_turns = 0.0;
  double medical_term_fraction_doctor_turns = 0.0;
};

struct StatsOptions {
  std::size_t doctors_bin_width = 50;
  std::size_t length_bin_width = 100;
  TermSet stoplist;  // vocabulary size excludes these
};

inline StatsReport corpus_stats(const Corpus& corpus, const TermSet& medical_lexicon,
                                const StatsOptions& opts = {}) {
  static const TermSet none;
  StatsReport r;
  r.dialogue_count = corpus.dialogues().size();
  r.doctor_count = corpus.doctors().size();
  r.dialogues_per_doctor_histogram.bin_width = std::max<std::size_t>(1, opts.doctors_bin_width);
  r.dialogue_length_histogram.bin_width = std::max<std::size_t>(1, opts.length_bin_width);

  std::set<std::string> departments;
  std::unordered_set<std::string> vocab;
  struct Count {
    std::size_t tokens = 0, medical = 0;
    double fraction() const { return tokens ? double(medical) / double(tokens) : 0.0; }
  } profile, patient, doctor;
  auto count_into = [&](Count& c, const std::vector<std::string>& toks) {
    c.tokens += toks.size();
    for (const auto& t : toks) {
      c.medical += medical_lexicon.contains(t) ? 1 : 0;
      if (!opts.stoplist.contains(t)) vocab.insert(t);
    }
  };

  std::size_t query_tokens_total = 0, dialogue_tokens_total = 0;
  for (const Doctor& d : corpus.doctors()) {
    departments.insert(d.department);
    r.dialogues_per_doctor_histogram.add(d.dialogue_ids.size());
    count_into(profile, tokenize(d.profile_text, none, true));
  }
  for (const Dialogue& g : corpus.dialogues()) {
    std::size_t len = 0;
    for (std::size_t i = 0; i < g.turns.size(); ++i) {
      auto toks = tokenize(g.turns[i].text, none, true);
      if (i == 0) query_tokens_total += toks.size();
      len += toks.size();
      count_into(g.turns[i].role == Role::patient ? patient : doctor, toks);
    }
    dialogue_tokens_total += len;
    r.dialogue_length_histogram.add(len);
  }

  r.department_count = departments.size();
  r.vocabulary_size = vocab.size();
  auto avg = [](double total, std::size_t n) { return n ? total / double(n) : 0.0; };
  r.avg_dialogues_per_doctor = avg(double(r.dialogue_count), r.doctor_count);
  r.avg_doctors_per_department = avg(double(r.doctor_count), r.department_count);
  r.avg_tokens_query = avg(double(query_tokens_total), r.dialogue_count);
  r.avg_tokens_dialogue = avg(double(dialogue_tokens_total), r.dialogue_count);
  r.avg_tokens_profile = avg(double(profile.tokens), r.doctor_count);
  r.medical_term_fraction_profile = profile.fraction();
  r.medical_term_fraction_patient_turns = patient.fraction();
  r.medical_term_fraction_doctor_turns = doctor.fraction();
  return r;
}

inline nlohmann::json stats_to_json(const StatsReport& r) {
  auto hist = [](const Histogram& h) {
    return nlohmann::json{{"bin_width", h.bin_width}, {"counts", h.counts}};
  };
  return {
      {"dialogue_count", r.dialogue_count},
      {"doctor_count", r.doctor_count},
      {"department_count", r.department_count},
      {"vocabulary_size", r.vocabulary_size},
      {"avg_dialogues_per_doctor", r.avg_dialogues_per_doctor},
      {"avg_doctors_per_department", r.avg_doctors_per_department},
      {"avg_tokens_query", r.avg_tokens_query},
      {"avg_tokens_dialogue", r.avg_tokens_dialogue},
      {"avg_tokens_profile", r.avg_tokens_profile},
      {"dialogues_per_doctor_histogram", hist(r.dialogues_per_doctor_histogram)},
      {"dialogue_length_histogram", hist(r.dialogue_length_histogram)},
      {"medical_term_fraction_profile", r.medical_term_fraction_profile},
      {"medical_term_fraction_patient_turns", r.medical_term_fraction_patient_turns},
      {"medical_term_fraction_doctor_turns", r.medical_term_fraction_doctor_turns},
  };
}

}  // namespace docrec
