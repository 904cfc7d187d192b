#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "pgcu/errors.hpp"

namespace pgcu {

// Reads fields of one JSON object and rejects keys that were never asked
// for. Every failure throws Errc::kConfig naming the dotted field path.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    require(obj_.is_object(), Errc::kConfig, label() + " must be a JSON object");
  }

  template <typename T>
  void optional(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::kConfig, "invalid value for " + field(key) + ": " + e.what());
    }
  }

  template <typename T>
  void required(const std::string& key, T& out) {
    require(obj_.contains(key), Errc::kConfig, "missing field " + field(key));
    optional(key, out);
  }

  bool has(const std::string& key) const { return obj_.contains(key); }
  void consume(const std::string& key) { seen_.insert(key); }

  // Sub-object reader; marks the key as consumed.
  JsonReader child(const std::string& key) {
    seen_.insert(key);
    return JsonReader(obj_.at(key), field(key));
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  // Throws on the first key that was not read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      require(seen_.count(it.key()) > 0, Errc::kConfig, "unknown field " + field(it.key()));
  }

 private:
  std::string label() const { return path_.empty() ? "document" : path_; }

  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace pgcu
