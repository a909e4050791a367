#pragma once

// Document embeddings: a trainable feature-hashing encoder
//   e = tanh(featurize(tokens) * projection + bias)
// and a store of externally precomputed vectors that bypasses it.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "docrec/corpus.hpp"
#include "docrec/error.hpp"
#include "docrec/rng.hpp"
#include "docrec/tensor.hpp"

namespace docrec {

struct EncoderConfig {
  std::size_t hash_buckets = 4096;
  std::size_t dim = 96;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 2) fail(ErrorKind::config, "encoder dim must be >= 2");
    if (hash_buckets < dim) fail(ErrorKind::config, "hash_buckets must be >= dim");
  }
};

inline std::uint64_t hash64(std::string_view token) { return fnv1a64(token); }

inline std::uint32_t hash_token(std::string_view token, std::size_t buckets) {
  return static_cast<std::uint32_t>(hash64(token) % buckets);
}

// Bag-of-buckets counts, L2-normalized. Empty input gives an empty row.
inline SparseRow featurize(const std::vector<std::string>& tokens, std::size_t buckets) {
  std::map<std::uint32_t, double> counts;
  for (const auto& t : tokens) counts[hash_token(t, buckets)] += 1.0;
  double norm = 0.0;
  for (auto& [b, c] : counts) norm += c * c;
  SparseRow row;
  row.reserve(counts.size());
  if (norm == 0.0) return row;
  norm = std::sqrt(norm);
  for (auto& [b, c] : counts) row.emplace_back(b, c / norm);
  return row;
}

// A document as the encoders see it: stable id plus its (capped) tokens.
struct Document {
  std::string id;
  std::vector<std::string> tokens;
  SparseRow features;
};

inline Document make_document(std::string id, std::vector<std::string> tokens,
                              std::size_t buckets) {
  tokens = truncate_tokens(std::move(tokens));
  SparseRow f = featurize(tokens, buckets);
  return Document{std::move(id), std::move(tokens), std::move(f)};
}

// Document ids shared with the vector export format.
inline std::string profile_doc_id(const std::string& doctor_id) { return "profile:" + doctor_id; }
inline std::string dialogue_doc_id(const std::string& dialogue_id) {
  return "dialogue:" + dialogue_id;
}
inline std::string query_doc_id(const std::string& query_id) { return "query:" + query_id; }

class VectorStore {
public:
  VectorStore() = default;
  explicit VectorStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }

  void insert(const std::string& id, Tensor v) {
    if (v.rows() != 1 || v.cols() != dim_)
      fail(ErrorKind::validation, "vector \"" + id + "\": dim mismatch, expected " +
                                      std::to_string(dim_) + " got " + std::to_string(v.size()));
    if (!v.all_finite()) fail(ErrorKind::validation, "vector \"" + id + "\": non-finite entry");
    if (!vectors_.emplace(id, std::move(v)).second)
      fail(ErrorKind::validation, "duplicate vector id \"" + id + "\"");
  }

  const Tensor* find(const std::string& id) const {
    auto it = vectors_.find(id);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, Tensor>& vectors() const noexcept { return vectors_; }

private:
  std::size_t dim_ = 0;
  std::map<std::string, Tensor> vectors_;
};

// Header {"dim": D}, then {"id": ..., "vec": [...]} per line.
inline VectorStore read_vectors(std::istream& in, const std::string& name = "vectors") {
  std::string line;
  std::size_t lineno = 0;
  std::optional<VectorStore> store;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::out_of_range&) {
      fail(ErrorKind::validation, where + ": non-finite entry (number overflows a double)");
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, where + ": malformed JSON (" + e.what() + ")");
    }
    try {
      if (!store) {
        const auto d = j.at("dim").get<std::int64_t>();
        if (d < 1) fail(ErrorKind::parse, where + ": dim must be positive");
        store.emplace(static_cast<std::size_t>(d));
        continue;
      }
      const std::string id = j.at("id").get<std::string>();
      const auto& vec = j.at("vec");
      if (!vec.is_array()) fail(ErrorKind::parse, where + ": \"vec\" must be an array");
      if (vec.size() != store->dim())
        fail(ErrorKind::validation, where + ": dim mismatch for \"" + id + "\", expected " +
                                        std::to_string(store->dim()) + " got " +
                                        std::to_string(vec.size()));
      std::vector<double> data;
      data.reserve(vec.size());
      for (const auto& x : vec) {
        if (!x.is_number())
          fail(ErrorKind::validation, where + ": non-finite entry in \"" + id + "\"");
        data.push_back(x.get<double>());
      }
      const std::size_t n = data.size();
      store->insert(id, Tensor(1, n, std::move(data)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, where + ": " + e.what());
    }
  }
  if (!store) fail(ErrorKind::parse, name + ": missing {\"dim\": D} header");
  return std::move(*store);
}

inline VectorStore load_vectors(const std::string& path) {
  auto in = detail::open_input(path);
  return read_vectors(in, path);
}

inline void write_vectors(const VectorStore& store, std::ostream& out) {
  out << nlohmann::json{{"dim", store.dim()}}.dump() << '\n';
  for (const auto& [id, v] : store.vectors()) {
    nlohmann::json j = {{"id", id}, {"vec", std::vector<double>(v.data().begin(), v.data().end())}};
    out << j.dump() << '\n';
  }
}

class HashEncoder {
public:
  HashEncoder() = default;

  explicit HashEncoder(const EncoderConfig& cfg)
      : cfg_(cfg),
        projection_("encoder.projection", Tensor(cfg.hash_buckets, cfg.dim)),
        bias_("encoder.bias", Tensor(1, cfg.dim)) {
    cfg_.validate();
    Rng rng(cfg.seed);
    xavier_uniform(projection_.value, rng);
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  std::size_t dim() const noexcept { return cfg_.dim; }
  std::size_t buckets() const noexcept { return cfg_.hash_buckets; }

  Param& projection() noexcept { return projection_; }
  Param& bias() noexcept { return bias_; }
  const Param& projection() const noexcept { return projection_; }
  const Param& bias() const noexcept { return bias_; }

  std::vector<Param*> parameters() { return {&projection_, &bias_}; }
  std::vector<const Param*> parameters() const { return {&projection_, &bias_}; }

  // Encodes the feature rows of several documents as one n x d matrix.
  Var encode(Tape& tape, std::vector<SparseRow> rows) const {
    Var x = sparse_matmul(std::move(rows), tape.param(projection_));
    return docrec::tanh(add(x, tape.param(bias_)));
  }

  Tensor encode(const std::vector<std::string>& tokens) const {
    Tape tape;
    return encode(tape, {featurize(tokens, cfg_.hash_buckets)}).value();
  }

private:
  EncoderConfig cfg_;
  Param projection_;
  Param bias_;
};

// Encodes documents through the hash encoder, or returns a stored vector
// verbatim when the optional store holds the document's id.
class Embedder {
public:
  Embedder(const HashEncoder& encoder, const VectorStore* store = nullptr)
      : encoder_(&encoder), store_(store) {
    if (store_ && store_->dim() != encoder.dim())
      fail(ErrorKind::config, "vector store dim " + std::to_string(store_->dim()) +
                                  " does not match encoder dim " + std::to_string(encoder.dim()));
  }

  std::size_t dim() const noexcept { return encoder_->dim(); }

  Var encode(Tape& tape, std::span<const Document* const> docs) const {
    if (!store_) {
      std::vector<SparseRow> rows;
      rows.reserve(docs.size());
      for (const Document* d : docs) rows.push_back(d->features);
      return encoder_->encode(tape, std::move(rows));
    }
    // Mixed case: stored rows become constants, the rest go through the encoder.
    std::vector<Var> parts;
    std::vector<SparseRow> pending;
    auto flush = [&] {
      if (pending.empty()) return;
      parts.push_back(encoder_->encode(tape, std::move(pending)));
      pending.clear();
    };
    for (const Document* d : docs) {
      if (const Tensor* v = store_->find(d->id)) {
        flush();
        parts.push_back(tape.constant(*v));
      } else {
        pending.push_back(d->features);
      }
    }
    flush();
    if (parts.size() == 1) return parts.front();
    return concat_rows(parts);
  }

  Var encode(Tape& tape, const Document& doc) const {
    const Document* p = &doc;
    return encode(tape, std::span<const Document* const>(&p, 1));
  }

private:
  const HashEncoder* encoder_;
  const VectorStore* store_;
};

}  // namespace docrec
