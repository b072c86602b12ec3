#pragma once

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scm {

/// Bad user input: malformed files, unknown keys, invalid arguments.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure: singular factorization, non-convergence, overflow.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

/// Splits a line into whitespace-separated tokens, dropping `#` comments.
inline std::vector<std::string> tokenize_line(std::string_view line) {
  std::string stripped(line.substr(0, line.find('#')));
  std::istringstream is(stripped);
  std::vector<std::string> toks;
  std::string t;
  while (is >> t) toks.push_back(t);
  return toks;
}

inline double parse_double(const std::string& tok, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw UsageError("expected a number, got '" + tok + "' (" + ctx + ")");
  }
}

inline long parse_long(const std::string& tok, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    long v = std::stol(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw UsageError("expected an integer, got '" + tok + "' (" + ctx + ")");
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// FNV-1a over raw bytes; used for state/mesh fingerprints.
class Fnv1a {
 public:
  void add_bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= b[i];
      hash_ *= 0x100000001b3ull;
    }
  }
  void add_f64(double x) { add_bytes(&x, sizeof(x)); }
  void add_u64(std::uint64_t x) { add_bytes(&x, sizeof(x)); }
  void add_str(std::string_view s) {
    add_u64(s.size());
    add_bytes(s.data(), s.size());
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

/// Instrumentation counters: the online stage must not trigger either.
struct Counters {
  static std::uint64_t& eigensolves() {
    static std::uint64_t n = 0;
    return n;
  }
  static std::uint64_t& factorizations() {
    static std::uint64_t n = 0;
    return n;
  }
};

}  // namespace scm
