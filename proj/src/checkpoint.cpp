#include "genrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "genrec/error.hpp"

namespace genrec {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order, which must be little-endian");

constexpr char kMagic[8] = {'G', 'E', 'N', 'R', 'E', 'C', 'K', 'P'};

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename From, typename To>
void convert(const char* bytes, std::size_t count, std::vector<To>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    From v;
    std::memcpy(&v, bytes + i * sizeof(From), sizeof(From));
    out[i] = static_cast<To>(v);
  }
}

}  // namespace

template <typename T>
void save_tensors(const std::filesystem::path& path, const nlohmann::json& extra,
                  const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  header["format_version"] = kCheckpointVersion;
  header["dtype"] = dtype_name<T>();
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t nbytes = t->size() * sizeof(T);
    entries.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["tensors"] = std::move(entries);
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) {
      out.write(reinterpret_cast<const char*>(t->ptr()),
                static_cast<std::streamsize>(t->size() * sizeof(T)));
    }
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
std::map<std::string, Tensor<T>> load_tensors(const std::filesystem::path& path,
                                              nlohmann::json* header_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  char magic[8];
  std::uint64_t length = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported format version");
  }
  const std::string dtype = header.value("dtype", "");
  if (dtype != "f32" && dtype != "f64") throw DataError(path.string() + ": unknown dtype " + dtype);
  const std::size_t width = dtype == "f32" ? 4 : 8;

  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::map<std::string, Tensor<T>> tensors;
  for (const auto& e : header.at("tensors")) {
    Tensor<T> t;
    t.shape = e.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    const std::size_t count = Tensor<T>::count(t.shape);
    if (nbytes != count * width || offset + nbytes > payload.size()) {
      throw DataError(path.string() + ": tensor " + e.at("name").get<std::string>() +
                      " has inconsistent size");
    }
    if (width == 4) {
      convert<float>(payload.data() + offset, count, t.data);
    } else {
      convert<double>(payload.data() + offset, count, t.data);
    }
    tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  if (header_out) *header_out = std::move(header);
  return tensors;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Parameters<T>& params,
                     const nlohmann::json& metadata) {
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
  params.for_each([&](const std::string& name, TensorKind, const Tensor<T>& t) {
    tensors.emplace_back(name, &t);
  });
  save_tensors<T>(path, {{"config", params.config.to_json()}, {"metadata", metadata}}, tensors);
}

template <typename T>
Parameters<T> load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
  nlohmann::json header;
  auto tensors = load_tensors<T>(path, &header);
  ModelConfig config;
  try {
    config = ModelConfig::from_json(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad config: " + e.what());
  }
  auto params = Parameters<T>::init(config, 0);
  params.for_each([&](const std::string& name, TensorKind, Tensor<T>& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError(path.string() + ": missing tensor " + name);
    if (it->second.shape != t.shape) {
      throw DataError(path.string() + ": tensor " + name + " does not match the config shape");
    }
    t = std::move(it->second);
    tensors.erase(it);
  });
  if (!tensors.empty()) {
    throw DataError(path.string() + ": unexpected tensor " + tensors.begin()->first);
  }
  if (metadata) *metadata = header.value("metadata", nlohmann::json::object());
  return params;
}

template void save_tensors<float>(const std::filesystem::path&, const nlohmann::json&,
                                  const std::vector<std::pair<std::string, const Tensor<float>*>>&);
template void save_tensors<double>(const std::filesystem::path&, const nlohmann::json&,
                                   const std::vector<std::pair<std::string, const Tensor<double>*>>&);
template std::map<std::string, Tensor<float>> load_tensors<float>(const std::filesystem::path&,
                                                                  nlohmann::json*);
template std::map<std::string, Tensor<double>> load_tensors<double>(const std::filesystem::path&,
                                                                    nlohmann::json*);
template void save_checkpoint<float>(const std::filesystem::path&, const Parameters<float>&,
                                     const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const Parameters<double>&,
                                      const nlohmann::json&);
template Parameters<float> load_checkpoint<float>(const std::filesystem::path&, nlohmann::json*);
template Parameters<double> load_checkpoint<double>(const std::filesystem::path&, nlohmann::json*);

}  // namespace genrec
