#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stylegrow/conditioning.hpp"
#include "stylegrow/rng.hpp"

namespace stylegrow {

// Enumerated labeled image source: either a directory of per-class
// subdirectories of .ppm files, or a single packed archive with an index.
// Label = ordinal of the (lexicographically sorted) class name.
struct DatasetIndex {
  struct Item {
    std::string path;    // directory datasets
    int64_t label = 0;
    int64_t offset = 0;  // archive datasets
    int64_t size = 0;
  };
  std::vector<std::string> class_names;
  std::vector<Item> items;
  std::string archive_path;  // empty for directory form
  int64_t skipped = 0;       // unreadable images dropped at ingest
};

// Validates every image header; unreadable files are skipped with a warning.
// An empty class is fatal. Archives are detected by magic.
DatasetIndex ingest_dataset(const std::string& path);

// Decode one item, center-crop to square, resize to `resolution`, [-1,1].
Tensor load_item_image(const DatasetIndex& index, size_t item, int64_t resolution);

// Pack a directory dataset into a single-file archive with an index.
void pack_dataset(const std::string& directory, const std::string& archive_path);

// Deterministic epoch iteration (Fisher-Yates order per epoch from the seed).
class DatasetLoader {
 public:
  DatasetLoader(DatasetIndex index, uint64_t seed);

  LabeledBatch next_batch(int64_t n, int64_t resolution);
  // Single full pass in index order, for embedding computation.
  BatchSource one_pass_source(int64_t resolution, int64_t batch_size) const;

  int64_t size() const { return static_cast<int64_t>(index_.items.size()); }
  int64_t class_count() const { return static_cast<int64_t>(index_.class_names.size()); }
  const DatasetIndex& index() const { return index_; }

 private:
  DatasetIndex index_;
  Rng rng_;
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
};

}  // namespace stylegrow
