#include "stylegrow/conditioning.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stylegrow {

ClassEmbeddingTable compute_class_embeddings(const BatchSource& source, int64_t class_count,
                                             const FeatureNetworkInterface& extractor) {
  if (class_count < 1) throw std::invalid_argument("compute_class_embeddings: class_count must be >= 1");
  int64_t dim = extractor.tap_channels().back();
  Tensor sums({class_count, dim});
  std::vector<int64_t> counts(static_cast<size_t>(class_count), 0);
  NoGradGuard ng;
  while (auto batch = source()) {
    if (batch->images.size(0) != static_cast<int64_t>(batch->labels.size())) {
      throw std::invalid_argument("compute_class_embeddings: image/label count mismatch");
    }
    auto taps = extract_feature_pyramid(Var(batch->images), extractor);
    Var pooled = global_avg_pool(taps.back());  // [n, d_e]
    for (int64_t i = 0; i < pooled.size(0); ++i) {
      int64_t cls = batch->labels[static_cast<size_t>(i)];
      if (cls < 0 || cls >= class_count) {
        throw std::out_of_range("compute_class_embeddings: label " + std::to_string(cls) +
                                " outside 0.." + std::to_string(class_count - 1));
      }
      for (int64_t j = 0; j < dim; ++j) sums.at({cls, j}) += pooled.val().at({i, j});
      counts[static_cast<size_t>(cls)]++;
    }
  }
  for (int64_t c = 0; c < class_count; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) {
      throw std::runtime_error("compute_class_embeddings: class " + std::to_string(c) + " has no images");
    }
    for (int64_t j = 0; j < dim; ++j) sums.at({c, j}) /= static_cast<double>(counts[static_cast<size_t>(c)]);
  }
  ClassEmbeddingTable table;
  table.class_count = class_count;
  table.dim = dim;
  table.source = extractor.name();
  table.embeddings = Param("cond.table", std::move(sums));
  return table;
}

Var embed_class(const ClassEmbeddingTable& table, const EmbeddingProjector& projector,
                const std::vector<int64_t>& labels) {
  for (int64_t l : labels) {
    if (l < 0 || l >= table.class_count) {
      throw std::out_of_range("embed_class: label " + std::to_string(l) + " outside 0.." +
                              std::to_string(table.class_count - 1));
    }
  }
  Var rows = index_select(table.embeddings.value, 0, labels);
  if (projector.normalize) rows = l2_normalize_rows(rows);
  return projector.proj.forward(rows);
}

namespace {
constexpr uint32_t kTableMagic = 0x53474d45;  // "SGME"
}

void save_embedding_table(const ClassEmbeddingTable& table, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  uint32_t magic = kTableMagic, cc = static_cast<uint32_t>(table.class_count),
           d = static_cast<uint32_t>(table.dim), slen = static_cast<uint32_t>(table.source.size());
  os.write(reinterpret_cast<const char*>(&magic), 4);
  os.write(reinterpret_cast<const char*>(&cc), 4);
  os.write(reinterpret_cast<const char*>(&d), 4);
  os.write(reinterpret_cast<const char*>(&slen), 4);
  os.write(table.source.data(), slen);
  const Tensor& t = table.embeddings.value.val();
  for (int64_t i = 0; i < t.numel(); ++i) {
    float v = static_cast<float>(t.data()[i]);
    os.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

ClassEmbeddingTable load_embedding_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  uint32_t magic = 0, cc = 0, d = 0, slen = 0;
  is.read(reinterpret_cast<char*>(&magic), 4);
  is.read(reinterpret_cast<char*>(&cc), 4);
  is.read(reinterpret_cast<char*>(&d), 4);
  is.read(reinterpret_cast<char*>(&slen), 4);
  if (!is || magic != kTableMagic) throw std::runtime_error("bad embedding table file: " + path);
  std::string source(slen, '\0');
  if (slen) is.read(source.data(), slen);
  Tensor rows({static_cast<int64_t>(cc), static_cast<int64_t>(d)});
  for (int64_t i = 0; i < rows.numel(); ++i) {
    float v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("truncated table: " + path);
    rows.data()[i] = static_cast<double>(v);
  }
  ClassEmbeddingTable table;
  table.class_count = static_cast<int64_t>(cc);
  table.dim = static_cast<int64_t>(d);
  table.source = std::move(source);
  table.embeddings = Param("cond.table", std::move(rows));
  return table;
}

}  // namespace stylegrow
