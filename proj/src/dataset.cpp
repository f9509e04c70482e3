#include "stylegrow/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stylegrow/image_io.hpp"

namespace fs = std::filesystem;

namespace stylegrow {

namespace {

constexpr char kArchiveMagic[4] = {'S', 'G', 'A', 'R'};

bool looks_like_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[4] = {};
  return is.read(magic, 4) && std::memcmp(magic, kArchiveMagic, 4) == 0;
}

DatasetIndex ingest_directory(const std::string& path) {
  DatasetIndex index;
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("dataset has no class subdirectories: " + path);
  for (size_t label = 0; label < class_dirs.size(); ++label) {
    index.class_names.push_back(class_dirs[label].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[label])) {
      if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    int64_t kept = 0;
    for (const auto& f : files) {
      try {
        (void)read_ppm(f.string());  // header + payload validation
      } catch (const std::exception& ex) {
        std::cerr << "warning: skipping unreadable image " << f.string() << " (" << ex.what() << ")\n";
        index.skipped++;
        continue;
      }
      index.items.push_back({f.string(), static_cast<int64_t>(label), 0, 0});
      kept++;
    }
    if (kept == 0) {
      throw std::runtime_error("dataset class '" + index.class_names.back() + "' has no readable images");
    }
  }
  return index;
}

DatasetIndex ingest_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open archive: " + path);
  char magic[4];
  is.read(magic, 4);
  uint32_t version = 0, class_count = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&class_count), 4);
  if (!is || version != 1) throw std::runtime_error("unsupported archive version in " + path);
  DatasetIndex index;
  index.archive_path = path;
  for (uint32_t c = 0; c < class_count; ++c) {
    uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    is.read(name.data(), len);
    index.class_names.push_back(name);
  }
  uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 8);
  std::vector<int64_t> per_class(class_count, 0);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t label = 0;
    uint64_t offset = 0, size = 0;
    is.read(reinterpret_cast<char*>(&label), 4);
    is.read(reinterpret_cast<char*>(&offset), 8);
    is.read(reinterpret_cast<char*>(&size), 8);
    if (!is) throw std::runtime_error("truncated archive index: " + path);
    index.items.push_back({"", static_cast<int64_t>(label), static_cast<int64_t>(offset),
                           static_cast<int64_t>(size)});
    per_class[label]++;
  }
  for (uint32_t c = 0; c < class_count; ++c) {
    if (per_class[c] == 0) {
      throw std::runtime_error("dataset class '" + index.class_names[c] + "' has no images");
    }
  }
  return index;
}

}  // namespace

DatasetIndex ingest_dataset(const std::string& path) {
  if (fs::is_directory(path)) return ingest_directory(path);
  if (fs::is_regular_file(path) && looks_like_archive(path)) return ingest_archive(path);
  throw std::runtime_error("dataset path is neither a class directory tree nor an archive: " + path);
}

Tensor load_item_image(const DatasetIndex& index, size_t item, int64_t resolution) {
  const auto& it = index.items.at(item);
  Tensor raw;
  if (index.archive_path.empty()) {
    raw = read_ppm(it.path);
  } else {
    std::ifstream is(index.archive_path, std::ios::binary);
    is.seekg(it.offset);
    std::string bytes(static_cast<size_t>(it.size), '\0');
    if (!is.read(bytes.data(), it.size)) throw std::runtime_error("truncated archive payload");
    raw = read_ppm_bytes(bytes, index.archive_path + "@" + std::to_string(it.offset));
  }
  return center_crop_resize(raw, resolution);
}

void pack_dataset(const std::string& directory, const std::string& archive_path) {
  DatasetIndex src = ingest_directory(directory);
  std::ofstream os(archive_path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + archive_path);
  os.write(kArchiveMagic, 4);
  uint32_t version = 1, class_count = static_cast<uint32_t>(src.class_names.size());
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&class_count), 4);
  for (const auto& name : src.class_names) {
    uint32_t len = static_cast<uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&len), 4);
    os.write(name.data(), len);
  }
  uint64_t count = src.items.size();
  os.write(reinterpret_cast<const char*>(&count), 8);
  // index placeholder, rewritten after the payloads land
  std::streampos index_pos = os.tellp();
  std::vector<std::pair<uint64_t, uint64_t>> spans(src.items.size());
  for (size_t i = 0; i < src.items.size(); ++i) {
    uint32_t label = static_cast<uint32_t>(src.items[i].label);
    uint64_t z = 0;
    os.write(reinterpret_cast<const char*>(&label), 4);
    os.write(reinterpret_cast<const char*>(&z), 8);
    os.write(reinterpret_cast<const char*>(&z), 8);
  }
  for (size_t i = 0; i < src.items.size(); ++i) {
    std::ifstream is(src.items[i].path, std::ios::binary);
    std::ostringstream buf;
    buf << is.rdbuf();
    std::string bytes = buf.str();
    spans[i] = {static_cast<uint64_t>(os.tellp()), bytes.size()};
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  os.seekp(index_pos);
  for (size_t i = 0; i < src.items.size(); ++i) {
    uint32_t label = static_cast<uint32_t>(src.items[i].label);
    os.write(reinterpret_cast<const char*>(&label), 4);
    os.write(reinterpret_cast<const char*>(&spans[i].first), 8);
    os.write(reinterpret_cast<const char*>(&spans[i].second), 8);
  }
  if (!os) throw std::runtime_error("write failed: " + archive_path);
}

DatasetLoader::DatasetLoader(DatasetIndex index, uint64_t seed)
    : index_(std::move(index)), rng_(derive_seed(seed, "dataset.order")) {
  if (index_.items.empty()) throw std::runtime_error("DatasetLoader: empty dataset");
  order_ = rng_.permutation(static_cast<int64_t>(index_.items.size()));
}

LabeledBatch DatasetLoader::next_batch(int64_t n, int64_t resolution) {
  LabeledBatch b;
  b.images = Tensor({n, 3, resolution, resolution});
  for (int64_t i = 0; i < n; ++i) {
    if (cursor_ >= order_.size()) {
      order_ = rng_.permutation(static_cast<int64_t>(index_.items.size()));
      cursor_ = 0;
    }
    size_t item = static_cast<size_t>(order_[cursor_++]);
    Tensor img = load_item_image(index_, item, resolution);
    std::memcpy(b.images.data() + i * 3 * resolution * resolution, img.data(),
                sizeof(double) * static_cast<size_t>(img.numel()));
    b.labels.push_back(index_.items[item].label);
  }
  return b;
}

BatchSource DatasetLoader::one_pass_source(int64_t resolution, int64_t batch_size) const {
  auto cursor = std::make_shared<size_t>(0);
  const DatasetIndex* idx = &index_;
  return [cursor, idx, resolution, batch_size]() -> std::optional<LabeledBatch> {
    if (*cursor >= idx->items.size()) return std::nullopt;
    int64_t n = std::min<int64_t>(batch_size, static_cast<int64_t>(idx->items.size() - *cursor));
    LabeledBatch b;
    b.images = Tensor({n, 3, resolution, resolution});
    for (int64_t i = 0; i < n; ++i) {
      Tensor img = load_item_image(*idx, *cursor, resolution);
      std::memcpy(b.images.data() + i * 3 * resolution * resolution, img.data(),
                  sizeof(double) * static_cast<size_t>(img.numel()));
      b.labels.push_back(idx->items[*cursor].label);
      (*cursor)++;
    }
    return b;
  };
}

}  // namespace stylegrow
