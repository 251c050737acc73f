#ifndef SPARSEFUSE_JSONIO_HPP
#define SPARSEFUSE_JSONIO_HPP

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsefuse/common.hpp"

namespace sparsefuse {

using json = nlohmann::json;

// Emits JSON with exactly the key order it is fed and floats printed with 9
// significant digits, so files are diff-able and byte-stable across runs.
// Values quantized through float32 round-trip bit-exactly under this format.
class JsonWriter {
 public:
  void begin_object() {
    sep();
    out_ += '{';
    need_comma_ = false;
  }
  void end_object() {
    out_ += '}';
    need_comma_ = true;
  }
  void begin_array() {
    sep();
    out_ += '[';
    need_comma_ = false;
  }
  void end_array() {
    out_ += ']';
    need_comma_ = true;
  }
  void key(const std::string& k) {
    sep();
    out_ += '"';
    out_ += k;
    out_ += "\":";
    need_comma_ = false;
  }
  void value(double v) {
    sep();
    if (v == 0.0) v = 0.0;  // normalize -0: it does not survive a parse
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    out_ += buf;
    need_comma_ = true;
  }
  void value(float v) { value(static_cast<double>(v)); }
  void value(int v) { value_raw(std::to_string(v)); }
  void value(long long v) { value_raw(std::to_string(v)); }
  void value(uint64_t v) { value_raw(std::to_string(v)); }
  void value(bool v) { value_raw(v ? "true" : "false"); }
  void value(const std::string& s) {
    sep();
    out_ += '"';
    for (char c : s) {
      if (c == '"' || c == '\\') out_ += '\\';
      out_ += c;
    }
    out_ += '"';
    need_comma_ = true;
  }
  void value(const char* s) { value(std::string(s)); }

  template <typename T>
  void kv(const std::string& k, const T& v) {
    key(k);
    value(v);
  }
  template <typename T>
  void array(const std::string& k, const std::vector<T>& vs) {
    key(k);
    begin_array();
    for (const auto& v : vs) value(v);
    end_array();
  }

  const std::string& str() const { return out_; }

 private:
  void value_raw(const std::string& s) {
    sep();
    out_ += s;
    need_comma_ = true;
  }
  void sep() {
    if (need_comma_) out_ += ',';
    need_comma_ = false;
  }

  std::string out_;
  bool need_comma_ = false;
};

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open for writing: " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw ConfigError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Parse with nlohmann; its errors carry the byte offset of the failure.
inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

inline const json& require_field(const json& j, const std::string& key, const std::string& what) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(what + ": missing field '" + key + "'");
  return *it;
}

// Quantize through float32: the generator applies this to everything it
// persists so that save/load round trips are exact under %.9g.
inline double q32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace sparsefuse

#endif  // SPARSEFUSE_JSONIO_HPP
