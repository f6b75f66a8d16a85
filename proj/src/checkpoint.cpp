#include "fslab/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fslab {

namespace {

constexpr char kMagic[5] = {'F', 'S', 'L', 'W', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("checkpoint: truncated file " + path);
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw DataError("checkpoint: truncated file " + path);
  }
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void NamedTensors::add(const std::string& name, const TensorPtr& tensor) {
  if (contains(name)) throw DataError("checkpoint: duplicate entry " + name);
  entries.emplace_back(name, tensor);
}

TensorPtr NamedTensors::find(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return t;
  }
  return nullptr;
}

TensorPtr NamedTensors::require(const std::string& name) const {
  auto t = find(name);
  if (!t) throw DataError("checkpoint: missing entry " + name);
  return t;
}

void save_fslw(const std::string& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 5);
  write_u32(out, static_cast<uint32_t>(tensors.entries.size()));
  for (const auto& [name, tensor] : tensors.entries) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(tensor->shape.size()));
    for (int d : tensor->shape) write_u32(out, static_cast<uint32_t>(d));
    for (double v : tensor->data) write_f64(out, v);
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

NamedTensors load_fslw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[5];
  if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
    throw DataError("checkpoint: bad magic in " + path + " (expected FSLW1)");
  }
  const uint32_t count = read_u32(in, path);
  NamedTensors result;
  for (uint32_t e = 0; e < count; ++e) {
    const uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("checkpoint: truncated file " + path);
    const uint32_t rank = read_u32(in, path);
    if (rank == 0 || rank > 8) throw DataError("checkpoint: bad rank in " + path);
    Shape shape(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int>(read_u32(in, path));
      n *= shape[i];
    }
    if (n <= 0 || n > (1 << 28)) throw DataError("checkpoint: bad dims in " + path);
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& v : data) v = read_f64(in, path);
    result.add(name, Tensor::make(std::move(shape), std::move(data)));
  }
  return result;
}

}  // namespace fslab
