#pragma once

#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chitchat/error.hpp"

namespace chitchat::jsonl {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open for reading: " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open for writing: " + path);
  return out;
}

/// Calls fn(line_number, line) for each non-blank line (1-based numbering).
inline void for_each_line(
    std::istream& in,
    const std::function<void(std::size_t, const std::string&)>& fn) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    fn(n, line);
  }
}

template <typename T>
void write(std::ostream& out, const std::vector<T>& items) {
  for (const auto& item : items) {
    out << nlohmann::json(item).dump(-1, ' ', false,
                                     nlohmann::json::error_handler_t::replace)
        << '\n';
  }
}

template <typename T>
void write_file(const std::string& path, const std::vector<T>& items) {
  auto out = open_out(path);
  write(out, items);
}

template <typename T>
std::vector<T> read_file(const std::string& path) {
  auto in = open_in(path);
  std::vector<T> items;
  for_each_line(in, [&](std::size_t n, const std::string& line) {
    try {
      items.push_back(nlohmann::json::parse(line).get<T>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse,
                  path + ":" + std::to_string(n) + ": " + e.what());
    }
  });
  return items;
}

}  // namespace chitchat::jsonl
