#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace genrec {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Lowercase hex SHA-256 of a file's bytes. Throws DataError if unreadable.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(std::string_view bytes);

// manifest.json: command, config snapshot, input and output hashes, artifact
// versions. No timestamps, so reruns with the same inputs produce the same
// file.
struct Manifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;  // relative to the directory

  void write(const std::filesystem::path& dir) const;
};

}  // namespace genrec
