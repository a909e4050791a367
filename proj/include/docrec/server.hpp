#pragma once

// HTTP ranking service. The model snapshot is immutable once published and is
// shared by all request threads; before publication every ranking request
// answers 503.

#include <cstdio>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include "httplib.h"
#include "json.hpp"

#include "docrec/corpus.hpp"
#include "docrec/dataset.hpp"
#include "docrec/ranker.hpp"

namespace docrec {

// Everything a request needs. Members reference each other, so a snapshot is
// built in place and never moved.
struct ServiceSnapshot {
  Corpus corpus;
  SplitSpec split;
  Dataset ds;
  RecommenderModel model;
  std::optional<Recommender> recommender;
  std::string model_id;

  ServiceSnapshot() = default;
  ServiceSnapshot(const ServiceSnapshot&) = delete;
  ServiceSnapshot& operator=(const ServiceSnapshot&) = delete;
};

// Short stable identifier for a checkpoint's contents.
inline std::string model_id_of(std::string_view checkpoint_text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(checkpoint_text)));
  return buf;
}

inline std::shared_ptr<const ServiceSnapshot> make_snapshot(Corpus corpus, SplitSpec split,
                                                            RecommenderModel model,
                                                            std::string model_id,
                                                            const DatasetOptions& opts) {
  auto s = std::make_shared<ServiceSnapshot>();
  s->corpus = std::move(corpus);
  s->split = std::move(split);
  s->model = std::move(model);
  s->ds = build_dataset(s->corpus, s->split, opts);
  s->recommender.emplace(s->model, s->ds);
  s->model_id = std::move(model_id);
  return s;
}

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

class RecommendService {
public:
  void publish(std::shared_ptr<const ServiceSnapshot> snapshot) {
    std::lock_guard lock(mu_);
    snapshot_ = std::move(snapshot);
  }

  std::shared_ptr<const ServiceSnapshot> snapshot() const {
    std::lock_guard lock(mu_);
    return snapshot_;
  }

  HttpReply health() const {
    auto s = snapshot();
    if (!s) return {503, {{"status", "loading"}, {"error", "model is still loading"}}};
    return {200, {{"status", "ok"}, {"model_id", s->model_id}}};
  }

  HttpReply recommend(const std::string& body) const {
    auto s = snapshot();
    if (!s) return error(503, "model is still loading");
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return error(400, "body is not valid JSON");
    }
    if (!req.is_object()) return error(400, "body must be a JSON object");
    if (!req.contains("query") || !req["query"].is_string())
      return error(400, "\"query\" must be a string");
    if (!req.contains("top_k") || !req["top_k"].is_number_integer())
      return error(400, "\"top_k\" must be an integer");
    const auto top_k = req["top_k"].get<long long>();
    if (top_k <= 0) return error(400, "\"top_k\" must be positive, got " + std::to_string(top_k));
    static const TermSet none;
    auto tokens = truncate_tokens(tokenize(req["query"].get<std::string>(), none, true));
    if (tokens.empty()) return error(422, "query is empty");

    RankResult r = s->recommender->rank(tokens);
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(top_k), r.entries.size());
    nlohmann::json results = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& [id, score] = r.entries[i];
      results.push_back(
          {{"doctor_id", id}, {"score", score}, {"department", s->corpus.doctor(id).department}});
    }
    return {200, {{"results", std::move(results)}, {"model_id", s->model_id}}};
  }

private:
  static HttpReply error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

  mutable std::mutex mu_;
  std::shared_ptr<const ServiceSnapshot> snapshot_;
};

inline void install_routes(httplib::Server& server, const RecommendService& service) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get("/health", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.health());
  });
  server.Post("/recommend", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.recommend(req.body));
  });
  server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    send(res, {500, {{"error", msg}}});
  });
}

}  // namespace docrec
