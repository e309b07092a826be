#pragma once

// Flat, typed key-value configuration:
//
//   # comment
//   problem = rastrigin2d
//   mpss.eps1 = 0.1
//   problem.lower = -1, -1      (lists are comma separated, brackets optional)
//
// Keys are bound to typed fields through a Schema; unknown keys, duplicate
// keys and malformed values are rejected with the source line and key.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rdo/error.hpp"

namespace rdo::config {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct Entry {
  std::string key;
  std::string value;
  std::string origin;  // "file:line" or "--set"
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

inline bool valid_key(const std::string& k) {
  if (k.empty() || k.front() == '.' || k.back() == '.' || k.find("..") != std::string::npos) return false;
  return std::all_of(k.begin(), k.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; });
}

}  // namespace detail

/// Splits one `key = value` assignment. Throws ConfigError naming `origin`.
inline Entry parse_assignment(std::string_view text, const std::string& origin) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError(origin + ": expected 'key = value'");
  Entry e{detail::trim(text.substr(0, eq)), detail::unquote(detail::trim(text.substr(eq + 1))), origin};
  if (!detail::valid_key(e.key)) throw ConfigError(origin + ": malformed key '" + e.key + "'");
  return e;
}

/// Parses config text. `name` labels error messages.
inline std::vector<Entry> parse_text(std::string_view text, const std::string& name = "config") {
  std::vector<Entry> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    // '#' starts a comment unless it sits inside quotes.
    bool quoted = false;
    char q = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == q) quoted = false;
      } else if (c == '"' || c == '\'') {
        quoted = true;
        q = c;
      } else if (c == '#') {
        line = line.substr(0, i);
        break;
      }
    }
    if (detail::trim(line).empty()) continue;
    out.push_back(parse_assignment(line, name + ":" + std::to_string(line_no)));
  }
  return out;
}

inline std::vector<Entry> parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Value conversion

inline double to_double(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc{} || r.ptr != e || !std::isfinite(v)) throw ConfigError("expected a finite number, got '" + s + "'");
  return v;
}

inline std::uint64_t to_uint(const std::string& s) {
  std::uint64_t v = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc{} || r.ptr != e) throw ConfigError("expected a nonnegative integer, got '" + s + "'");
  return v;
}

inline bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

inline std::vector<double> to_list(std::string s) {
  s = detail::trim(s);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated list '" + s + "'");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<double> out;
  if (detail::trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(detail::trim(item)));
  return out;
}

// ---------------------------------------------------------------------------
// Schema

/// One bound key. `set` parses and stores, throwing ConfigError on a bad
/// value; `get` reports the current value for the resolved dump.
struct Field {
  std::string type;
  std::string doc;
  std::function<void(const std::string&)> set;
  std::function<nlohmann::json()> get;
};

class Schema {
 public:
  const std::map<std::string, Field>& fields() const { return fields_; }

  void add(const std::string& key, Field f) {
    rdo::detail::require(!fields_.count(key), "schema: duplicate key " + key);
    fields_.emplace(key, std::move(f));
  }

  void number(const std::string& key, double& ref, std::string doc, std::function<bool(double)> ok = {},
              std::string rule = {}) {
    add(key, {"number", std::move(doc),
              [&ref, ok, rule](const std::string& s) {
                const double v = to_double(s);
                if (ok && !ok(v)) throw ConfigError("must be " + rule + ", got " + s);
                ref = v;
              },
              [&ref] { return nlohmann::json(ref); }});
  }

  void integer(const std::string& key, std::size_t& ref, std::string doc, std::size_t min = 0) {
    add(key, {"integer", std::move(doc),
              [&ref, min](const std::string& s) {
                const auto v = to_uint(s);
                if (v < min) throw ConfigError("must be at least " + std::to_string(min) + ", got " + s);
                ref = static_cast<std::size_t>(v);
              },
              [&ref] { return nlohmann::json(ref); }});
  }

  void seed(const std::string& key, std::uint64_t& ref, std::string doc) {
    add(key, {"integer", std::move(doc), [&ref](const std::string& s) { ref = to_uint(s); },
              [&ref] { return nlohmann::json(ref); }});
  }

  void boolean(const std::string& key, bool& ref, std::string doc) {
    add(key, {"bool", std::move(doc), [&ref](const std::string& s) { ref = to_bool(s); },
              [&ref] { return nlohmann::json(ref); }});
  }

  void string(const std::string& key, std::string& ref, std::string doc, std::vector<std::string> choices = {}) {
    add(key, {"string", std::move(doc),
              [&ref, choices](const std::string& s) {
                if (!choices.empty() && std::find(choices.begin(), choices.end(), s) == choices.end()) {
                  std::string all;
                  for (const auto& c : choices) all += (all.empty() ? "" : ", ") + c;
                  throw ConfigError("must be one of {" + all + "}, got '" + s + "'");
                }
                ref = s;
              },
              [&ref] { return nlohmann::json(ref); }});
  }

  void list(const std::string& key, std::vector<double>& ref, std::string doc) {
    add(key, {"list", std::move(doc), [&ref](const std::string& s) { ref = to_list(s); },
              [&ref] { return nlohmann::json(ref); }});
  }

  /// Applies entries in order. Later entries (overrides) win; a key given
  /// twice in the same file is an error.
  void apply(const std::vector<Entry>& entries) const {
    std::map<std::string, std::string> seen;
    for (const auto& e : entries) {
      const auto it = fields_.find(e.key);
      if (it == fields_.end()) throw ConfigError(e.origin + ": unknown key '" + e.key + "'");
      if (e.origin != "--set") {
        const auto file = e.origin.substr(0, e.origin.rfind(':'));
        const auto [prev, fresh] = seen.emplace(e.key, e.origin);
        if (!fresh && prev->second.substr(0, prev->second.rfind(':')) == file)
          throw ConfigError(e.origin + ": '" + e.key + "' already set at " + prev->second);
      }
      try {
        it->second.set(e.value);
      } catch (const ConfigError& err) {
        throw ConfigError(e.origin + ": " + e.key + ": " + err.what());
      }
    }
  }

  /// Every key with its current value, nested by the dotted path.
  nlohmann::json dump() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [key, f] : fields_) {
      nlohmann::json* node = &out;
      std::size_t start = 0;
      for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
        node = &(*node)[key.substr(start, dot - start)];
        start = dot + 1;
      }
      (*node)[key.substr(start)] = f.get();
    }
    return out;
  }

  /// Plain-text key reference.
  std::string describe() const {
    std::string out;
    for (const auto& [key, f] : fields_) out += key + " (" + f.type + "): " + f.doc + "\n";
    return out;
  }

 private:
  std::map<std::string, Field> fields_;
};

/// 64-bit FNV-1a, used as a stable fingerprint of the resolved config.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rdo::config
