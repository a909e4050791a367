#pragma once

// Checkpoint file: a header line {"format":1,"names":[...], ...metadata}
// followed by one {"name","rows","cols","data"} line per parameter.

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "docrec/error.hpp"
#include "docrec/tensor.hpp"

namespace docrec {

inline constexpr int checkpoint_format = 1;

struct Checkpoint {
  nlohmann::json header;
  std::vector<Param> params;

  const Param* find(const std::string& name) const {
    for (const Param& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }

  // Copies stored values into `targets` by name; every target must be present
  // with a matching shape.
  void restore(std::span<Param* const> targets) const {
    for (Param* t : targets) {
      const Param* src = find(t->name);
      if (!src) fail(ErrorKind::validation, "checkpoint has no parameter \"" + t->name + "\"");
      if (!src->value.same_shape(t->value))
        fail(ErrorKind::shape, "checkpoint parameter \"" + t->name + "\" has shape " +
                                   src->value.shape() + ", expected " + t->value.shape());
      t->value = src->value;
      t->zero_grad();
    }
  }
};

inline void write_checkpoint(std::ostream& out, std::span<const Param* const> params,
                             const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header = {{"format", checkpoint_format}};
  std::vector<std::string> names;
  for (const Param* p : params) names.push_back(p->name);
  header["names"] = names;
  for (auto it = meta.begin(); it != meta.end(); ++it) header[it.key()] = it.value();
  out << header.dump() << '\n';
  for (const Param* p : params) {
    nlohmann::json j = {{"name", p->name},
                        {"rows", p->value.rows()},
                        {"cols", p->value.cols()},
                        {"data", std::vector<double>(p->value.data().begin(), p->value.data().end())}};
    out << j.dump() << '\n';
  }
}

inline std::string checkpoint_string(std::span<const Param* const> params,
                                     const nlohmann::json& meta = nlohmann::json::object()) {
  std::ostringstream os;
  write_checkpoint(os, params, meta);
  return os.str();
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& name = "checkpoint") {
  Checkpoint ck;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::parse, name + ": empty checkpoint");
  try {
    ck.header = nlohmann::json::parse(line);
    if (ck.header.at("format").get<int>() != checkpoint_format)
      fail(ErrorKind::parse, name + ": unsupported checkpoint format");
    const auto names = ck.header.at("names").get<std::vector<std::string>>();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const auto rows = j.at("rows").get<std::size_t>();
      const auto cols = j.at("cols").get<std::size_t>();
      auto data = j.at("data").get<std::vector<double>>();
      if (data.size() != rows * cols)
        fail(ErrorKind::parse, name + ":" + std::to_string(lineno) + ": data length mismatch");
      ck.params.emplace_back(j.at("name").get<std::string>(), Tensor(rows, cols, std::move(data)));
    }
    if (ck.params.size() != names.size())
      fail(ErrorKind::parse, name + ": header lists " + std::to_string(names.size()) +
                                 " parameters, file holds " + std::to_string(ck.params.size()));
    for (std::size_t i = 0; i < names.size(); ++i)
      if (ck.params[i].name != names[i])
        fail(ErrorKind::parse, name + ": parameter order does not match header");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, name + ": " + e.what());
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open \"" + path + "\"");
  return read_checkpoint(in, path);
}

inline void save_checkpoint(const std::string& path, std::span<const Param* const> params,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write \"" + path + "\"");
  write_checkpoint(out, params, meta);
}

}  // namespace docrec
