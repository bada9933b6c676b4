#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "genrec/model.hpp"
#include "json.hpp"

namespace genrec {

// File layout: 8-byte magic "GENRECKP", u64 little-endian header length,
// JSON header {format_version, dtype, tensors:[{name, shape, offset, nbytes}],
// ...extra}, then the raw little-endian payload. Offsets are relative to the
// payload start.
inline constexpr int kCheckpointVersion = 1;

template <typename T>
void save_tensors(const std::filesystem::path& path, const nlohmann::json& extra,
                  const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors);

// Tensors are converted to T when stored at another precision.
template <typename T>
std::map<std::string, Tensor<T>> load_tensors(const std::filesystem::path& path,
                                              nlohmann::json* header = nullptr);

// Model checkpoint: the header also carries "config" and "metadata".
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Parameters<T>& params,
                     const nlohmann::json& metadata = nlohmann::json::object());

// Verifies every tensor's presence and shape against the stored config.
template <typename T>
Parameters<T> load_checkpoint(const std::filesystem::path& path,
                              nlohmann::json* metadata = nullptr);

}  // namespace genrec
