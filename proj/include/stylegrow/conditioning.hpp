#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stylegrow/projector.hpp"

namespace stylegrow {

// Per-class mean of spatially pooled lowest-resolution extractor features.
// Rows are trainable during GAN training.
struct ClassEmbeddingTable {
  Param embeddings;  // [class_count, d_e]
  int64_t class_count = 0;
  int64_t dim = 0;
  std::string source;
};

// Linear projection of a table row down to the latent dimension. `normalize`
// L2-normalizes the row before projecting (scale balance with z; deviation
// toggle, on by default).
struct EmbeddingProjector {
  Linear proj;  // dim -> 64
  bool normalize = true;

  EmbeddingProjector() = default;
  EmbeddingProjector(const std::string& name, int64_t embed_dim, int64_t out_dim, Rng& rng)
      : proj(name, embed_dim, out_dim, rng) {}
  void collect(ParamRefs& out) { proj.collect(out); }
};

struct LabeledBatch {
  Tensor images;  // [n, 3, H, W]
  std::vector<int64_t> labels;
};

// Pull-based source; returns nullopt when exhausted.
using BatchSource = std::function<std::optional<LabeledBatch>()>;

// Mean over images of the spatially average-pooled deepest tap, per class.
// Throws (naming the class) when a class has no images.
ClassEmbeddingTable compute_class_embeddings(const BatchSource& source, int64_t class_count,
                                             const FeatureNetworkInterface& extractor);

// weight . embeddings[class] + bias, batched over labels; differentiable into
// the table and the projector.
Var embed_class(const ClassEmbeddingTable& table, const EmbeddingProjector& projector,
                const std::vector<int64_t>& labels);

// Sidecar file: header (class count, dim, source id) + row-major float32 rows.
void save_embedding_table(const ClassEmbeddingTable& table, const std::string& path);
ClassEmbeddingTable load_embedding_table(const std::string& path);

}  // namespace stylegrow
