#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace zebravit {

/// Line-oriented `key=value` text; `#` starts a comment line. Keys are
/// kept sorted so written files are stable.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source = "<input>") {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto text = trim(line);
      if (text.empty() || text.front() == '#') continue;
      const auto eq = text.find('=');
      if (eq == std::string_view::npos)
        throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key=value");
      const auto key = trim(text.substr(0, eq));
      if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
      kv.values_[std::string(key)] = std::string(trim(text.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse(in, path.string());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, long long value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
  void set(const std::string& key, unsigned long long value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, unsigned long value) { set(key, static_cast<unsigned long long>(value)); }
  void set(const std::string& key, double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
    values_[key] = std::string(buf, end);
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing key '" + key + "'");
    return it->second;
  }

  template <class T>
  T get_as(const std::string& key) const {
    const auto& text = get(key);
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size())
      throw std::invalid_argument("key '" + key + "' has malformed value '" + text + "'");
    return value;
  }

  template <class T>
  void read_into(const std::string& key, T& target) const {
    if (contains(key)) {
      if constexpr (std::is_same_v<T, std::string>) target = get(key);
      else target = get_as<T>(key);
    }
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace zebravit
