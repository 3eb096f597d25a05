#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace xtf {

// Writes to "<path>.tmp" and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Throws InputError naming the path when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

// Non-empty lines of a JSON-lines file.
std::vector<std::string> read_jsonl_lines(const std::filesystem::path& path);

// "%.17g": 17 significant digits, parses back to the same double.
std::string format_double17(double value);

}  // namespace xtf
