#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "docrec/metrics.hpp"
#include "docrec/rng.hpp"

using namespace docrec;
using Catch::Approx;

namespace {

JudgedRanking judged(std::vector<std::string> ranked, std::set<std::string> relevant) {
  return {std::move(ranked), std::move(relevant)};
}

// Reference AP: for every relevant item, count relevant items ranked at or
// above it by scanning the whole list.
double reference_ap(const JudgedRanking& r) {
  double total = 0.0;
  for (const auto& rel : r.relevant) {
    auto it = std::find(r.ranked.begin(), r.ranked.end(), rel);
    if (it == r.ranked.end()) continue;
    const auto pos = static_cast<std::size_t>(it - r.ranked.begin());
    std::size_t above = 0;
    for (std::size_t i = 0; i <= pos; ++i) above += r.relevant.count(r.ranked[i]);
    total += static_cast<double>(above) / static_cast<double>(pos + 1);
  }
  return total / static_cast<double>(r.relevant.size());
}

}  // namespace

TEST_CASE("precision at n", "[metrics]") {
  CHECK(precision_at_n(judged({"g", "a"}, {"g"}), 1) == 1.0);
  CHECK(precision_at_n(judged({"a", "g"}, {"g"}), 1) == 0.0);
  CHECK(precision_at_n(judged({"a", "g", "b", "h", "c"}, {"g", "h"}), 5) == 0.4);
  CHECK(precision_at_n(judged({"g"}, {"g"}), 3) == Approx(1.0 / 3.0));
  CHECK_THROWS_AS(precision_at_n(judged({"g"}, {"g"}), 0), Error);
}

TEST_CASE("average precision", "[metrics]") {
  for (std::size_t r = 1; r <= 6; ++r) {
    std::vector<std::string> ranked = {"a", "b", "c", "d", "e", "f"};
    ranked[r - 1] = "g";
    CHECK(average_precision(judged(ranked, {"g"})) == Approx(1.0 / static_cast<double>(r)));
  }
  CHECK(average_precision(judged({"x", "a", "y"}, {"x", "y"})) == Approx(5.0 / 6.0));
  CHECK(average_precision(judged({"a", "b"}, {"g"})) == 0.0);
  CHECK_THROWS_AS(average_precision(judged({"a"}, {})), Error);
}

TEST_CASE("average precision over all orderings of five items", "[metrics]") {
  std::vector<std::string> items = {"a", "b", "c", "d", "e"};
  const std::set<std::string> rel = {"b", "e"};
  std::size_t n = 0;
  do {
    const JudgedRanking r = judged(items, rel);
    CHECK(std::abs(average_precision(r) - reference_ap(r)) <= 1e-15);
    ++n;
  } while (std::next_permutation(items.begin(), items.end()));
  CHECK(n == 120);
}

TEST_CASE("expected reciprocal rank", "[metrics]") {
  CHECK(err_at_n(judged({"g", "a"}, {"g"}), 5) == 0.5);
  CHECK(err_at_n(judged({"a", "g"}, {"g"}), 5) == 0.25);
  CHECK(err_at_n(judged({"a", "b", "g"}, {"g"}), 5) == Approx(0.5 / 3.0));
  CHECK(err_at_n(judged({"a", "b", "c", "d", "e", "g"}, {"g"}), 5) == 0.0);
  CHECK(err_at_n(judged({"g", "h"}, {"g", "h"}), 5) == Approx(0.5 + 0.5 * 0.5 / 2.0));
  double prev = 1.0;
  for (std::size_t r = 1; r <= 7; ++r) {
    std::vector<std::string> ranked(7);
    for (std::size_t i = 0; i < 7; ++i) ranked[i] = "x" + std::to_string(i);
    ranked[r - 1] = "g";
    const double e = err_at_n(judged(ranked, {"g"}), 5);
    CHECK(e <= prev);
    prev = e;
  }
}

TEST_CASE("map equals mrr with one relevant item", "[metrics]") {
  Rng rng(2);
  std::vector<QueryMetrics> ms;
  double rr = 0.0;
  for (int q = 0; q < 50; ++q) {
    std::vector<std::string> items = {"a", "b", "c", "d", "e", "f"};
    rng.shuffle(items);
    const auto pos = static_cast<std::size_t>(std::find(items.begin(), items.end(), "c") - items.begin());
    rr += 1.0 / static_cast<double>(pos + 1);
    ms.push_back(score_ranking(judged(items, {"c"})));
  }
  CHECK(aggregate(ms).map == Approx(rr / 50.0));
}

TEST_CASE("tail reordering below the last relevant item changes nothing", "[metrics]") {
  auto a = score_ranking(judged({"x", "g", "p", "q", "r", "s"}, {"g"}));
  auto b = score_ranking(judged({"x", "g", "s", "r", "q", "p"}, {"g"}));
  CHECK(a.p_at_1 == b.p_at_1);
  CHECK(a.ap == b.ap);
  CHECK(a.err_at_5 == b.err_at_5);
}

TEST_CASE("aggregate", "[metrics]") {
  std::vector<QueryMetrics> ms = {{1, 1, 0.5}, {0, 0.5, 0.125}, {1, 1, 0.5}, {0, 0.25, 0}};
  MetricSummary s = aggregate(ms);
  CHECK(s.count == 4);
  CHECK(s.p_at_1 == 0.5);
  CHECK(s.map == Approx(0.6875));
  MetricSummary one = aggregate({{1, 0.5, 0.25}});
  CHECK(one.p_at_1 == 1.0);
  CHECK(one.map == 0.5);
  CHECK(one.err_at_5 == 0.25);
  CHECK_THROWS_AS(aggregate({}), Error);
}

TEST_CASE("bucket means recombine to the overall mean", "[metrics]") {
  std::vector<QueryMetrics> b1 = {{1, 1, 0.5}, {0, 0.5, 0.125}, {1, 1, 0.5}};
  std::vector<QueryMetrics> b2 = {{0, 0.2, 0}, {1, 1, 0.5}};
  std::vector<QueryMetrics> all = b1;
  all.insert(all.end(), b2.begin(), b2.end());
  const auto s1 = aggregate(b1), s2 = aggregate(b2), s = aggregate(all);
  CHECK((s1.p_at_1 * 3 + s2.p_at_1 * 2) / 5 == Approx(s.p_at_1));
  CHECK((s1.map * 3 + s2.map * 2) / 5 == Approx(s.map));
}

TEST_CASE("report json layout", "[metrics]") {
  MetricsReport r;
  r.overall = aggregate({{1, 1, 0.5}});
  r.bucket_key = "department";
  r.buckets["neuro"] = r.overall;
  auto j = report_to_json(r);
  CHECK(j["overall"]["p_at_1"] == 1.0);
  CHECK(j["buckets"]["neuro"]["err_at_5"] == 0.5);
  CHECK(j["bucket_key"] == "department");
}
