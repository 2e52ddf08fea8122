#include "speechee/config.h"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <sstream>

#include "speechee/errors.h"

namespace speechee {

namespace {

std::string Trim(const std::string &s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing "# ..." that is not inside a string.
std::string StripComment(const std::string &line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
    } else if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string Unquote(const std::string &lit, const std::string &where) {
  if (lit.size() < 2 || lit.front() != '"' || lit.back() != '"') {
    throw Error(where + ": expected a quoted string, got " + lit);
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < lit.size(); ++i) {
    if (lit[i] != '\\') {
      out.push_back(lit[i]);
      continue;
    }
    char c = lit[++i];
    out.push_back(c == 'n' ? '\n' : c == 't' ? '\t' : c);
  }
  return out;
}

std::vector<std::string> SplitArray(const std::string &lit, const std::string &where) {
  if (lit.size() < 2 || lit.front() != '[' || lit.back() != ']') {
    throw Error(where + ": expected an array, got " + lit);
  }
  std::vector<std::string> items;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 1; i + 1 < lit.size(); ++i) {
    char c = lit[i];
    if (c == '\\' && quoted) {
      cur += c;
      cur += lit[++i];
      continue;
    }
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      items.push_back(Trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!Trim(cur).empty()) items.push_back(Trim(cur));
  for (const auto &it : items) {
    if (it.empty()) throw Error(where + ": empty array element");
  }
  return items;
}

long ToLong(const std::string &lit, const std::string &where) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(lit, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used != lit.size() || lit.empty()) throw Error(where + ": expected an integer, got " + lit);
  return v;
}

}  // namespace

ConfigFile ConfigFile::Parse(const std::string &text, const std::string &origin) {
  std::istringstream in(text);
  std::ostringstream clean;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = Trim(StripComment(line));
    if (!t.empty() && t.front() == '[' && t.back() == ']') {
      std::string name = Trim(t.substr(1, t.size() - 2));
      if (name.empty() || name.find_first_of(".[]\"") != std::string::npos) {
        throw Error(origin + ":" + std::to_string(lineno) + ": unsupported table header " + t);
      }
    } else if (!t.empty()) {
      auto eq = t.find('=');
      if (eq == std::string::npos) throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = Trim(t.substr(0, eq)), value = Trim(t.substr(eq + 1));
      if (key.find('.') != std::string::npos || value.empty() ||
          (value.front() == '[' && value.back() != ']') || value.front() == '{') {
        throw Error(origin + ":" + std::to_string(lineno) + ": unsupported value for " + key);
      }
    }
    clean << t << '\n';
  }

  boost::property_tree::ptree tree;
  std::istringstream ini(clean.str());
  try {
    boost::property_tree::ini_parser::read_ini(ini, tree);
  } catch (const boost::property_tree::ini_parser_error &e) {
    throw Error(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ConfigFile cfg;
  cfg.origin_ = origin;
  for (const auto &[name, node] : tree) {
    if (node.empty()) {
      // Values are never empty, so an empty leaf is an empty table.
      if (node.data().empty()) continue;
      cfg.values_[""][name] = node.data();
      continue;
    }
    for (const auto &[key, leaf] : node) cfg.values_[name][key] = leaf.data();
  }
  return cfg;
}

ConfigFile ConfigFile::Load(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return Parse(ss.str(), path);
}

std::optional<std::string> ConfigFile::Raw(const std::string &section, const std::string &key) const {
  auto s = values_.find(section);
  if (s == values_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

bool ConfigFile::Has(const std::string &section, const std::string &key) const {
  return Raw(section, key).has_value();
}

std::vector<std::string> ConfigFile::Sections() const {
  std::vector<std::string> out;
  for (const auto &kv : values_) out.push_back(kv.first);
  return out;
}

std::vector<std::string> ConfigFile::Keys(const std::string &section) const {
  std::vector<std::string> out;
  auto s = values_.find(section);
  if (s != values_.end()) {
    for (const auto &kv : s->second) out.push_back(kv.first);
  }
  return out;
}

std::string ConfigFile::GetString(const std::string &section, const std::string &key,
                                  const std::string &fallback) const {
  auto raw = Raw(section, key);
  return raw ? Unquote(*raw, origin_ + ": " + section + "." + key) : fallback;
}

long ConfigFile::GetInt(const std::string &section, const std::string &key, long fallback) const {
  auto raw = Raw(section, key);
  return raw ? ToLong(*raw, origin_ + ": " + section + "." + key) : fallback;
}

double ConfigFile::GetDouble(const std::string &section, const std::string &key, double fallback) const {
  auto raw = Raw(section, key);
  if (!raw) return fallback;
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(*raw, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used != raw->size()) throw Error(origin_ + ": " + section + "." + key + ": expected a number");
  return v;
}

bool ConfigFile::GetBool(const std::string &section, const std::string &key, bool fallback) const {
  auto raw = Raw(section, key);
  if (!raw) return fallback;
  if (*raw == "true") return true;
  if (*raw == "false") return false;
  throw Error(origin_ + ": " + section + "." + key + ": expected true or false");
}

std::vector<std::string> ConfigFile::GetStrings(const std::string &section, const std::string &key,
                                                const std::vector<std::string> &fallback) const {
  auto raw = Raw(section, key);
  if (!raw) return fallback;
  std::string where = origin_ + ": " + section + "." + key;
  std::vector<std::string> out;
  for (const auto &item : SplitArray(*raw, where)) out.push_back(Unquote(item, where));
  return out;
}

std::vector<long> ConfigFile::GetInts(const std::string &section, const std::string &key,
                                      const std::vector<long> &fallback) const {
  auto raw = Raw(section, key);
  if (!raw) return fallback;
  std::string where = origin_ + ": " + section + "." + key;
  std::vector<long> out;
  for (const auto &item : SplitArray(*raw, where)) out.push_back(ToLong(item, where));
  return out;
}

void ConfigFile::Set(const std::string &section, const std::string &key, const std::string &literal) {
  values_[section][key] = literal;
}

std::string ConfigFile::ToString() const {
  std::ostringstream out;
  bool first = true;
  auto top = values_.find("");
  if (top != values_.end()) {
    for (const auto &[k, v] : top->second) out << k << " = " << v << '\n';
    first = false;
  }
  for (const auto &[section, kv] : values_) {
    if (section.empty()) continue;
    if (!first) out << '\n';
    first = false;
    out << '[' << section << "]\n";
    for (const auto &[k, v] : kv) out << k << " = " << v << '\n';
  }
  return out.str();
}

std::string ConfigFile::Quote(const std::string &s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out + "\"";
}

std::string ConfigFile::IntList(const std::vector<long> &v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out + "]";
}

std::string ConfigFile::StringList(const std::vector<std::string> &v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + Quote(v[i]);
  return out + "]";
}

}  // namespace speechee
