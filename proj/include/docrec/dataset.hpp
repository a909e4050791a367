#pragma once

// Featurized view of a corpus under a split: every document the models read,
// tokenized and hashed once.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "docrec/corpus.hpp"
#include "docrec/embed.hpp"

namespace docrec {

struct QueryDoc {
  Document doc;
  std::size_t gold = 0;  // doctor index
  std::string query_id;
  std::string source_dialogue_id;
};

struct DatasetOptions {
  std::size_t hash_buckets = 4096;
  std::size_t pool_size = default_pool_size;
  std::size_t max_dialogues = 0;  // 0 = all; otherwise the most recent m
  TermSet stoplist;
};

struct Dataset {
  const Corpus* corpus = nullptr;
  std::vector<Document> profiles;   // by doctor index
  std::vector<Document> dialogues;  // by corpus dialogue index
  std::vector<std::vector<std::size_t>> doctor_dialogues;  // training dialogues per doctor
  std::vector<QueryDoc> train_queries;  // first turns of training dialogues
  std::vector<QueryDoc> val_queries;
  std::vector<QueryDoc> test_queries;
  std::vector<std::size_t> pool;       // doctor indices, ranked pool order
  std::vector<std::size_t> train_counts;  // by doctor index

  std::size_t doctor_count() const { return profiles.size(); }
  const std::string& doctor_id(std::size_t i) const { return corpus->doctors()[i].doctor_id; }
  const Doctor& doctor(std::size_t i) const { return corpus->doctors()[i]; }
  bool in_pool(std::size_t doctor) const {
    for (std::size_t p : pool)
      if (p == doctor) return true;
    return false;
  }

  const std::vector<QueryDoc>& queries(QuerySplit s) const {
    return s == QuerySplit::val ? val_queries : test_queries;
  }
};

inline QueryDoc make_query_doc(const Corpus& corpus, const Query& q, std::size_t buckets) {
  return QueryDoc{make_document(query_doc_id(q.query_id), q.tokens, buckets),
                  corpus.doctor_index(q.gold_doctor_id), q.query_id, q.source_dialogue_id};
}

inline Dataset build_dataset(const Corpus& corpus, const SplitSpec& split,
                             const DatasetOptions& opts = {}) {
  Dataset ds;
  ds.corpus = &corpus;
  const std::size_t V = opts.hash_buckets;
  for (const Doctor& d : corpus.doctors())
    ds.profiles.push_back(make_document(profile_doc_id(d.doctor_id), profile_tokens(d), V));
  for (const Dialogue& g : corpus.dialogues())
    ds.dialogues.push_back(
        make_document(dialogue_doc_id(g.dialogue_id), dialogue_tokens(g, opts.stoplist), V));

  ds.doctor_dialogues.resize(corpus.doctors().size());
  ds.train_counts.assign(corpus.doctors().size(), 0);
  for (std::size_t i = 0; i < corpus.doctors().size(); ++i) {
    auto& list = ds.doctor_dialogues[i];
    for (const auto& id : corpus.doctors()[i].dialogue_ids)
      if (split.train_dialogues.contains(id)) list.push_back(corpus.dialogue_index(id));
    ds.train_counts[i] = list.size();
    if (opts.max_dialogues > 0 && list.size() > opts.max_dialogues)
      list.erase(list.begin(), list.end() - static_cast<std::ptrdiff_t>(opts.max_dialogues));
  }
  // Training queries follow corpus order so shuffles depend only on the seed.
  for (const Dialogue& g : corpus.dialogues()) {
    if (!split.train_dialogues.contains(g.dialogue_id)) continue;
    ds.train_queries.push_back(make_query_doc(corpus, make_query(g, QuerySplit::val), V));
  }
  for (const Query& q : split.queries)
    (q.split == QuerySplit::val ? ds.val_queries : ds.test_queries)
        .push_back(make_query_doc(corpus, q, V));
  for (const auto& id : candidate_pool(corpus, split, opts.pool_size))
    ds.pool.push_back(corpus.doctor_index(id));
  return ds;
}

// Average token length of a doctor's training dialogues.
inline double mean_dialogue_length(const Dataset& ds, std::size_t doctor) {
  const auto& list = ds.doctor_dialogues[doctor];
  if (list.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t g : list) total += static_cast<double>(ds.dialogues[g].tokens.size());
  return total / static_cast<double>(list.size());
}

}  // namespace docrec
