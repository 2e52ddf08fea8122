// Reader/writer for the flat TOML subset used by experiment configs:
//
//   # comment
//   [section]
//   key = "string" | 123 | 0.5 | true | [1, 2, 3] | ["a", "b"]
//
// Nested tables, inline tables and multi-line values are rejected.

#ifndef SPEECHEE_CONFIG_H_
#define SPEECHEE_CONFIG_H_

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace speechee {

class ConfigFile {
 public:
  static ConfigFile Parse(const std::string &text, const std::string &origin = "<string>");
  static ConfigFile Load(const std::string &path);

  bool Has(const std::string &section, const std::string &key) const;
  std::vector<std::string> Sections() const;
  std::vector<std::string> Keys(const std::string &section) const;
  std::string GetString(const std::string &section, const std::string &key,
                        const std::string &fallback) const;
  long GetInt(const std::string &section, const std::string &key, long fallback) const;
  double GetDouble(const std::string &section, const std::string &key, double fallback) const;
  bool GetBool(const std::string &section, const std::string &key, bool fallback) const;
  std::vector<std::string> GetStrings(const std::string &section, const std::string &key,
                                      const std::vector<std::string> &fallback) const;
  std::vector<long> GetInts(const std::string &section, const std::string &key,
                            const std::vector<long> &fallback) const;

  // Raw (TOML-literal) values keyed by section then key.
  void Set(const std::string &section, const std::string &key, const std::string &literal);
  std::string ToString() const;

  // Literal helpers for Set.
  static std::string Quote(const std::string &s);
  static std::string IntList(const std::vector<long> &v);
  static std::string StringList(const std::vector<std::string> &v);

 private:
  std::optional<std::string> Raw(const std::string &section, const std::string &key) const;

  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace speechee

#endif  // SPEECHEE_CONFIG_H_
