#include "lmcd/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <sstream>

#include "lmcd/errors.hpp"
#include "lmcd/fileio.hpp"

namespace lmcd {
namespace {

constexpr char kMagic[4] = {'L', 'M', 'C', 'D'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string path)
      : bytes_(bytes), path_(std::move(path)) {}

  void take(void* dst, size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw DataError("weights file '" + path_ + "' truncated");
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  uint32_t u32() {
    unsigned char b[4];
    take(b, 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
           uint32_t(b[3]) << 24;
  }

  uint64_t u64() {
    uint64_t v = 0;
    unsigned char b[8];
    take(b, 8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str(size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

void save_weights(const std::string& path, const nlohmann::json& header,
                  const ParamSet<real>& params) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  const std::string hdr = header.dump();
  put_u32(out, static_cast<uint32_t>(hdr.size()));
  out += hdr;
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params.items()) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, 2);
    put_u64(out, static_cast<uint64_t>(t.rows()));
    put_u64(out, static_cast<uint64_t>(t.cols()));
    for (real x : t.data()) put_f32(out, static_cast<float>(x));
  }
  write_file_atomic(path, out);
}

std::pair<nlohmann::json, ParamSet<real>> load_weights(
    const std::string& path) {
  const std::string bytes = read_file_text(path);
  Reader r(bytes, path);
  char magic[4];
  r.take(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("weights file '" + path + "': bad magic");
  }
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw DataError("weights file '" + path + "': unsupported version " +
                    std::to_string(version));
  }
  const std::string hdr = r.str(r.u32());
  nlohmann::json header = nlohmann::json::parse(hdr, nullptr, false);
  if (header.is_discarded()) {
    throw DataError("weights file '" + path + "': malformed header");
  }
  const uint32_t count = r.u32();
  ParamSet<real> params;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const uint32_t rank = r.u32();
    if (rank != 2) {
      throw DataError("weights file '" + path + "': tensor '" + name +
                      "' has rank " + std::to_string(rank));
    }
    const uint64_t rows = r.u64();
    const uint64_t cols = r.u64();
    if (rows == 0 || cols == 0 || rows > (1u << 30) || cols > (1u << 30)) {
      throw DataError("weights file '" + path + "': tensor '" + name +
                      "' has bad extents");
    }
    Tensor<real> t(static_cast<int>(rows), static_cast<int>(cols));
    for (real& x : t.data()) x = static_cast<real>(r.f32());
    params.add(name, std::move(t));
  }
  if (!r.done()) {
    throw DataError("weights file '" + path + "': trailing bytes");
  }
  return {std::move(header), std::move(params)};
}

}  // namespace lmcd
