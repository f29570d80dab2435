#include "attr/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace attr {

namespace {

constexpr char kMagic[8] = {'A', 'T', 'T', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw CheckpointError("truncated checkpoint: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint_raw(const std::string& path,
                         const std::map<std::string, StoredTensor>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 8);
  write_u32(f, kVersion);
  for (const auto& [name, t] : tensors) {  // std::map iterates in sorted name order
    write_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(f, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(f, static_cast<std::uint32_t>(d));
    // f32 payload; byte order is the host's (little-endian on every supported
    // target)
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!f) throw CheckpointError("write failed: " + path);
}

std::map<std::string, StoredTensor> load_checkpoint_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);
  const std::uint32_t version = read_u32(f, path);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::map<std::string, StoredTensor> out;
  while (true) {
    f.peek();
    if (f.eof()) break;
    const std::uint32_t name_len = read_u32(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(f, path);
    StoredTensor t;
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = read_u32(f, path);
      t.shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    t.data.resize(static_cast<size_t>(numel));
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw CheckpointError("truncated checkpoint: " + path);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace attr
