#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stylegrow/tensor.hpp"

namespace stylegrow {

// Little-endian binary container: magic, version, a free-form text blob, then
// named float64 tensors. Shared by checkpoints and extractor weight files.
struct BlobFile {
  uint32_t version = 1;
  std::string text;  // JSON metadata
  std::vector<std::pair<std::string, Tensor>> blobs;

  const Tensor* find(const std::string& name) const;
};

void write_blob_file(const std::string& path, uint32_t magic, const BlobFile& file);
// Throws std::runtime_error on bad magic, version above `max_version`, or a
// truncated file.
BlobFile read_blob_file(const std::string& path, uint32_t magic, uint32_t max_version);

}  // namespace stylegrow
