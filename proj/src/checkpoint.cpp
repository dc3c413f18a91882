#include "toothdet/autodiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace toothdet::ad {

namespace {

constexpr char kMagic[7] = {'T', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr uint8_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>(v >> (8 * i)));
}

void put_f64(std::string& buf, double d) {
  const uint64_t v = std::bit_cast<uint64_t>(d);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open checkpoint: " + path);
  }

  void bytes(char* dst, size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n)
      throw std::runtime_error("checkpoint truncated");
  }

  uint32_t u32() {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 |
           static_cast<uint32_t>(b[3]) << 24;
  }

  double f64() {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | b[i];
    return std::bit_cast<double>(v);
  }

 private:
  std::ifstream in_;
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  buf.push_back(static_cast<char>(kVersion));
  put_u32(buf, static_cast<uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    put_u32(buf, static_cast<uint32_t>(e.name.size()));
    buf.append(e.name);
    const Tensor& t = e.var.value();
    put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d)
      put_u32(buf, static_cast<uint32_t>(t.extent(d)));
    for (int i = 0; i < t.numel(); ++i) put_f64(buf, t[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, ParamStore& params) {
  Reader r(path);
  char magic[sizeof(kMagic)];
  r.bytes(magic, sizeof(kMagic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  char version;
  r.bytes(&version, 1);
  if (static_cast<uint8_t>(version) != kVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(static_cast<int>(version)));
  const uint32_t count = r.u32();
  if (count != params.entries().size())
    throw std::runtime_error(
        "checkpoint holds " + std::to_string(count) + " parameters, model has " +
        std::to_string(params.entries().size()));
  std::vector<bool> seen(params.entries().size(), false);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());

    const Var* v = params.find(name);
    if (v == nullptr)
      throw std::runtime_error("checkpoint parameter '" + name +
                               "' unknown to this model");
    Tensor& dst = v->node()->value;
    if (shape != dst.shape())
      throw std::runtime_error("checkpoint parameter '" + name +
                               "' has mismatched shape");
    for (int j = 0; j < dst.numel(); ++j) dst[j] = r.f64();

    for (size_t k = 0; k < params.entries().size(); ++k)
      if (params.entries()[k].name == name) seen[k] = true;
  }
  for (size_t k = 0; k < seen.size(); ++k)
    if (!seen[k])
      throw std::runtime_error("checkpoint missing parameter '" +
                               params.entries()[k].name + "'");
}

}  // namespace toothdet::ad
