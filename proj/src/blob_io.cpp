#include "stylegrow/blob_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stylegrow {

namespace {

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("blob file truncated");
  return v;
}

uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("blob file truncated");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  uint64_t n = get_u64(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw std::runtime_error("blob file truncated");
  }
  return s;
}

static_assert(sizeof(double) == 8);

}  // namespace

const Tensor* BlobFile::find(const std::string& name) const {
  for (const auto& [n, t] : blobs) {
    if (n == name) return &t;
  }
  return nullptr;
}

void write_blob_file(const std::string& path, uint32_t magic, const BlobFile& file) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  put_u32(os, magic);
  put_u32(os, file.version);
  put_string(os, file.text);
  put_u64(os, file.blobs.size());
  for (const auto& [name, t] : file.blobs) {
    put_string(os, name);
    put_u32(os, static_cast<uint32_t>(t.dim()));
    for (int64_t i = 0; i < t.dim(); ++i) put_u64(os, static_cast<uint64_t>(t.size(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * 8));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

BlobFile read_blob_file(const std::string& path, uint32_t magic, uint32_t max_version) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  if (get_u32(is) != magic) throw std::runtime_error("bad magic in " + path);
  BlobFile file;
  file.version = get_u32(is);
  if (file.version == 0 || file.version > max_version) {
    throw std::runtime_error("unsupported version " + std::to_string(file.version) + " in " + path +
                             " (max supported " + std::to_string(max_version) + ")");
  }
  file.text = get_string(is);
  uint64_t count = get_u64(is);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is);
    uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(get_u64(is));
    Tensor t(shape);
    if (t.numel() &&
        !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8))) {
      throw std::runtime_error("blob file truncated: " + path);
    }
    file.blobs.emplace_back(std::move(name), std::move(t));
  }
  return file;
}

}  // namespace stylegrow
