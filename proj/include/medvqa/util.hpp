#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace medvqa {

using json = nlohmann::json;

// ---- text -----------------------------------------------------------------

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
std::string trim(std::string_view s);
std::string collapse_whitespace(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool ends_with(std::string_view s, std::string_view suffix);

// ---- hashing --------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Hash of several fields with unambiguous framing (length-prefixed).
std::string sha256_fields(std::span<const std::string_view> fields);

// ---- files ----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames over `path`, so readers never
/// observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

struct JsonlLine {
  std::size_t line_no;
  json value;
};

/// Parses a line-delimited JSON file. Blank lines are skipped. A malformed
/// final line without a trailing newline is dropped when `tolerate_torn_tail`
/// is set (an append interrupted mid-write); any other malformed line throws
/// MALFORMED_RECORD tagged with `module`.
std::vector<JsonlLine> read_jsonl(const std::filesystem::path& path, std::string_view module,
                                  bool tolerate_torn_tail = false);

/// Serialized append-only writer for line-delimited records. Each append is
/// flushed before returning.
class JsonlAppender {
 public:
  explicit JsonlAppender(std::filesystem::path path);
  void append(const json& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

// ---- environment ----------------------------------------------------------

/// Value of an environment variable, empty when unset or when name is empty.
std::string env_or_empty(const std::string& name);

// ---- formatting -----------------------------------------------------------

/// Fixed-point formatting with `decimals` digits, locale independent.
std::string format_fixed(double value, int decimals);

}  // namespace medvqa
