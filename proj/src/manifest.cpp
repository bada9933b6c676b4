#include "genrec/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

#include "genrec/checkpoint.hpp"
#include "genrec/error.hpp"

namespace genrec {
namespace {

class Digest {
 public:
  Digest() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256 init failed");
    }
  }
  void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_bytes(std::string_view bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  Digest d;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

void Manifest::write(const std::filesystem::path& dir) const {
  nlohmann::json in = nlohmann::json::object(), out = nlohmann::json::object();
  for (const auto& p : inputs) in[p.string()] = sha256_file(p);
  for (const auto& p : outputs) out[p.string()] = sha256_file(dir / p);
  const nlohmann::json j = {{"command", command},
                            {"config", config},
                            {"inputs", in},
                            {"outputs", out},
                            {"versions",
                             {{"genrec", kToolkitVersion},
                              {"checkpoint_format", kCheckpointVersion}}}};
  std::ofstream f(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + (dir / "manifest.json").string());
  f << j.dump(2) << '\n';
}

}  // namespace genrec
