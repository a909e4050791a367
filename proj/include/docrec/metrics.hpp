#pragma once

// Ranking metrics over a ranked id list and a set of relevant ids.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "docrec/error.hpp"

namespace docrec {

struct JudgedRanking {
  std::vector<std::string> ranked;
  std::set<std::string> relevant;

  bool is_relevant(std::size_t rank0) const { return relevant.contains(ranked[rank0]); }
};

// |relevant in top n| / n; rankings shorter than n are not padded.
inline double precision_at_n(const JudgedRanking& r, std::size_t n) {
  if (n < 1) fail(ErrorKind::config, "precision_at_n: n must be >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(n, r.ranked.size()); ++i) hits += r.is_relevant(i);
  return static_cast<double>(hits) / static_cast<double>(n);
}

// Mean of precision at each relevant item's rank; unretrieved relevant items
// contribute zero.
inline double average_precision(const JudgedRanking& r) {
  if (r.relevant.empty()) fail(ErrorKind::validation, "average_precision: no relevant items");
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    if (!r.is_relevant(i)) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return total / static_cast<double>(r.relevant.size());
}

// Cascade ERR with binary grades: a relevant item stops the user with
// probability 1/2.
inline double err_at_n(const JudgedRanking& r, std::size_t n) {
  if (n < 1) fail(ErrorKind::config, "err_at_n: n must be >= 1");
  constexpr double stop_relevant = 0.5;
  double err = 0.0, reach = 1.0;
  for (std::size_t i = 0; i < std::min(n, r.ranked.size()); ++i) {
    const double R = r.is_relevant(i) ? stop_relevant : 0.0;
    err += reach * R / static_cast<double>(i + 1);
    reach *= 1.0 - R;
  }
  return err;
}

struct QueryMetrics {
  double p_at_1 = 0.0;
  double ap = 0.0;
  double err_at_5 = 0.0;
};

inline QueryMetrics score_ranking(const JudgedRanking& r) {
  return {precision_at_n(r, 1), average_precision(r), err_at_n(r, 5)};
}

struct MetricSummary {
  std::size_t count = 0;
  double p_at_1 = 0.0;
  double map = 0.0;
  double err_at_5 = 0.0;
};

inline MetricSummary aggregate(const std::vector<QueryMetrics>& per_query) {
  if (per_query.empty()) fail(ErrorKind::validation, "aggregate: empty query set");
  MetricSummary s;
  s.count = per_query.size();
  for (const auto& q : per_query) {
    s.p_at_1 += q.p_at_1;
    s.map += q.ap;
    s.err_at_5 += q.err_at_5;
  }
  const double n = static_cast<double>(s.count);
  s.p_at_1 /= n;
  s.map /= n;
  s.err_at_5 /= n;
  return s;
}

struct MetricsReport {
  MetricSummary overall;
  std::string bucket_key;  // empty when not bucketed
  std::map<std::string, MetricSummary> buckets;
};

inline nlohmann::json summary_to_json(const MetricSummary& s) {
  return {{"count", s.count}, {"p_at_1", s.p_at_1}, {"map", s.map}, {"err_at_5", s.err_at_5}};
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json b = nlohmann::json::object();
  for (const auto& [k, s] : r.buckets) b[k] = summary_to_json(s);
  nlohmann::json j = {{"overall", summary_to_json(r.overall)}, {"buckets", std::move(b)}};
  if (!r.bucket_key.empty()) j["bucket_key"] = r.bucket_key;
  return j;
}

}  // namespace docrec
