#pragma once

// Run configuration: plain key=value text grouped into [model], [train],
// [augment], [transfer], and [svm] sections. The key registry is strict —
// unknown sections or keys are parse errors, so typos never pass silently —
// and the resolved configuration can be rendered back out canonically for
// the run directory echo.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "convkit/error.hpp"

namespace convkit {

inline const std::vector<std::string>& run_config_sections() {
  static const std::vector<std::string> sections = {"model", "train", "augment", "transfer",
                                                    "svm"};
  return sections;
}

inline const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys = {
      // model
      "model.spec",
      // train: dataset (either an IDX pair or a generated set)
      "train.images", "train.labels", "train.test_images", "train.test_labels",
      "train.synthetic", "train.classes", "train.per_class", "train.size", "train.noise",
      "train.data_seed", "train.holdout_per_class",
      // train: optimization
      "train.batch_size", "train.lr", "train.momentum", "train.weight_decay", "train.epochs",
      "train.topk", "train.eval_mode", "train.init_stddev",
      // augment: scale jitter -> random crop + flip -> PCA color
      "augment.enabled", "augment.scale_min", "augment.scale_max", "augment.crop",
      "augment.flip", "augment.pca", "augment.pca_scale",
      // transfer experiment
      "transfer.size", "transfer.width", "transfer.source_per_class",
      "transfer.target_per_class", "transfer.noise", "transfer.data_seed", "transfer.folds",
      "transfer.source_classes", "transfer.target_classes", "transfer.positive_classes",
      "transfer.init_stddev", "transfer.source_epochs", "transfer.source_batch_size",
      "transfer.source_lr", "transfer.source_momentum", "transfer.source_weight_decay",
      "transfer.tune_epochs", "transfer.tune_batch_size", "transfer.tune_lr",
      "transfer.tune_momentum", "transfer.tune_weight_decay", "transfer.replace",
      "transfer.replace_stddev", "transfer.replace_lr_multiplier", "transfer.checkpoint",
      // svm grid search
      "svm.c_grid", "svm.gamma_grid",
  };
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

struct RunConfig {
  std::map<std::string, std::string> entries;  // "section.key" -> value

  bool has(const std::string& key) const { return entries.count(key) != 0; }

  // setter used by CLI overrides; enforces the same registry as the parser
  void set(const std::string& key, const std::string& value) {
    if (run_config_keys().count(key) == 0)
      throw ConfigError("unknown config key '" + key + "'");
    entries[key] = value;
  }

  std::string str(const std::string& key, const std::string& fallback = "") const {
    auto it = entries.find(key);
    return it == entries.end() ? fallback : it->second;
  }

  std::int64_t i64(const std::string& key, std::int64_t fallback) const {
    auto it = entries.find(key);
    if (it == entries.end()) return fallback;
    try {
      std::size_t used = 0;
      const std::int64_t v = std::stoll(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected an integer, got '" + it->second +
                        "'");
    }
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    auto it = entries.find(key);
    if (it == entries.end()) return fallback;
    try {
      // stoull would silently wrap a negative value around
      if (!it->second.empty() && it->second[0] == '-') throw std::invalid_argument("negative");
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" +
                        it->second + "'");
    }
  }

  double f64(const std::string& key, double fallback) const {
    auto it = entries.find(key);
    if (it == entries.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
  }

  bool flag(const std::string& key, bool fallback) const {
    auto it = entries.find(key);
    if (it == entries.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean (0/1/true/false), got '" +
                      v + "'");
  }

  std::vector<std::int64_t> i64_list(const std::string& key,
                                     std::vector<std::int64_t> fallback) const {
    auto it = entries.find(key);
    if (it == entries.end()) return fallback;
    std::vector<std::int64_t> out;
    for (const std::string& tok : split_list(it->second)) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoll(tok, &used));
        if (used != tok.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a comma-separated integer list, "
                          "got '" + it->second + "'");
      }
    }
    return out;
  }

  std::vector<double> f64_list(const std::string& key, std::vector<double> fallback) const {
    auto it = entries.find(key);
    if (it == entries.end()) return fallback;
    std::vector<double> out;
    for (const std::string& tok : split_list(it->second)) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a comma-separated number list, "
                          "got '" + it->second + "'");
      }
    }
    return out;
  }

  std::vector<std::string> str_list(const std::string& key,
                                    std::vector<std::string> fallback) const {
    auto it = entries.find(key);
    if (it == entries.end()) return fallback;
    return split_list(it->second);
  }

  // Canonical text form: sections in their documented order, keys sorted
  // within each section. Parsing this text reproduces `entries` exactly.
  std::string render() const {
    std::string out;
    for (const std::string& section : run_config_sections()) {
      std::string body;
      const std::string prefix = section + ".";
      for (const auto& [key, value] : entries)
        if (key.compare(0, prefix.size(), prefix) == 0)
          body += key.substr(prefix.size()) + " = " + value + "\n";
      if (!body.empty()) out += "[" + section + "]\n" + body;
    }
    return out;
  }

 private:
  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        out.push_back(detail::trim(cur));
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    cur = detail::trim(cur);
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    return out;
  }
};

// Parse key=value text. '#' starts a comment; sections are [model], [train],
// [augment], [transfer], [svm]; every key must be known and appear at most
// once; keys before any section header are rejected.
inline RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::string section;
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string s = detail::trim(raw);
    if (s.empty()) continue;

    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError(line, "unterminated section header '" + s + "'");
      const std::string name = detail::trim(s.substr(1, s.size() - 2));
      bool known = false;
      for (const std::string& sec : run_config_sections()) known |= sec == name;
      if (!known) throw ParseError(line, "unknown section '[" + name + "]'");
      section = name;
      continue;
    }

    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) throw ParseError(line, "expected key=value, got '" + s + "'");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (key.empty()) throw ParseError(line, "empty key");
    if (section.empty())
      throw ParseError(line, "key '" + key + "' appears before any [section] header");
    const std::string full = section + "." + key;
    if (run_config_keys().count(full) == 0)
      throw ParseError(line, "unknown key '" + full + "'");
    if (cfg.entries.count(full) != 0) throw ParseError(line, "duplicate key '" + full + "'");
    cfg.entries[full] = value;
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace convkit
