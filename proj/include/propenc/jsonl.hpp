#pragma once

#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "propenc/errors.hpp"
#include "propenc/mask.hpp"

namespace propenc {

using Json = nlohmann::json;

// Parse one JSON object per line, reporting the 1-based line number on
// malformed input. Blank lines are skipped.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(std::size_t, Json&)>& fn) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": malformed JSON: " + e.what());
    }
    if (!j.is_object())
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected a JSON object");
    fn(lineno, j);
  }
}

inline std::vector<Json> read_jsonl(const std::string& path) {
  std::vector<Json> out;
  for_each_jsonl(path, [&](std::size_t, Json& j) { out.push_back(std::move(j)); });
  return out;
}

// Writes one JSON object per line; "-" goes to stdout.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : path_(path) {
    if (path == "-") {
      out_ = &std::cout;
      return;
    }
    file_.open(path);
    if (!file_) throw DataError("cannot open " + path + " for writing");
    out_ = &file_;
  }

  void write(const Json& j) { (*out_) << j.dump() << '\n'; }

  void close() {
    out_->flush();
    if (!*out_) throw DataError("write failed: " + path_);
    if (file_.is_open()) file_.close();
  }

 private:
  std::string path_;
  std::ofstream file_;
  std::ostream* out_ = nullptr;
};

inline Json mask_to_json(const BinaryMask& m) {
  Json arr = Json::array();
  for (auto b : m) arr.push_back(b ? 1 : 0);
  return arr;
}

inline BinaryMask mask_from_json(const Json& arr, const std::string& where) {
  if (!arr.is_array()) throw DataError(where + ": mask must be an array");
  BinaryMask m;
  m.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer() || (v != 0 && v != 1))
      throw DataError(where + ": mask entries must be 0 or 1");
    m.push_back(v.get<int>() ? 1 : 0);
  }
  return m;
}

}  // namespace propenc
