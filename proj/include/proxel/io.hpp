// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace proxel {

/// Shortest decimal form that parses back to the same double: locale
/// independent, round-trip exact, and identical across runs and platforms
/// that implement std::to_chars correctly.
std::string format_double(double value);

std::string format_int(std::int64_t value);

double parse_double(std::string_view text);
std::int64_t parse_int(std::string_view text);

void write_text_file(const std::string& path, std::string_view content);
std::string read_text_file(const std::string& path);
bool file_exists(const std::string& path);
void ensure_directory(const std::string& path);

std::vector<std::string> split_csv_line(std::string_view line);

/// Minimal append-only JSON emitter. Key order is the call order, numbers go
/// through format_double/format_int, so documents are byte-stable.
class JsonWriter {
public:
  JsonWriter& begin_object();
  JsonWriter& end_object();
  JsonWriter& begin_array(std::string_view key);
  JsonWriter& end_array();
  JsonWriter& object_in_array();
  JsonWriter& array_in_array();
  JsonWriter& key(std::string_view name);
  JsonWriter& value(double v);
  JsonWriter& value(std::int64_t v);
  JsonWriter& value(std::uint64_t v);
  JsonWriter& value(int v);
  JsonWriter& value(bool v);
  JsonWriter& value(std::string_view v);
  // Keeps string literals from decaying to the bool overload.
  JsonWriter& value(const char* v) { return value(std::string_view(v)); }
  JsonWriter& field(std::string_view name, double v) { return key(name).value(v); }
  JsonWriter& field(std::string_view name, std::int64_t v) { return key(name).value(v); }
  JsonWriter& field(std::string_view name, std::uint64_t v) { return key(name).value(v); }
  JsonWriter& field(std::string_view name, int v) { return key(name).value(v); }
  JsonWriter& field(std::string_view name, bool v) { return key(name).value(v); }
  JsonWriter& field(std::string_view name, std::string_view v) { return key(name).value(v); }
  JsonWriter& field(std::string_view name, const char* v) { return key(name).value(v); }

  const std::string& str() const { return out_; }

private:
  void comma();
  std::string out_;
  std::vector<bool> need_comma_;
  bool pending_value_ = false;
};

}  // namespace proxel
