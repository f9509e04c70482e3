#pragma once

#include <string>
#include <vector>

#include "stylegrow/generator.hpp"

namespace stylegrow {

enum class AdvLossForm { Logistic, Hinge, SaturatingLogistic };

std::string loss_form_name(AdvLossForm f);
AdvLossForm loss_form_from_name(const std::string& s);

struct ExtractorSpec {
  std::string type = "conv";  // conv | attention
  std::string name = "feat0";
  int64_t input_resolution = 224;
  int64_t channels = 16;
  uint64_t seed = 1;
  std::string weights_path;  // optional pretrained container
};

struct RunConfig {
  uint64_t seed = 0;
  std::string output_dir = "out";

  struct Dataset {
    std::string path;
    int64_t class_count = 0;  // 0: inferred at ingest
  } dataset;

  struct Schedule {
    int64_t start_resolution = 16;
    int64_t final_resolution = 32;
    int64_t batch_divisor = 16;  // 2048 -> 128 by default
    int64_t max_target = 1024;
    bool treat_final_as_max = false;
  } schedule;

  GeneratorConfig generator;  // latent 64 / style 512 per stock configuration

  struct Discriminator {
    int64_t base_channels = 32;
    int64_t max_channels = 256;
    int64_t sn_iterations = 1;
  } discriminator;

  struct Conditioning {
    bool normalize_embeddings = true;
    std::string table_path;  // produced by the `embed` command
  } conditioning;

  std::vector<ExtractorSpec> extractors = {ExtractorSpec{}};

  struct Guidance {
    double lambda = 8.0;
    int64_t gate_resolution = 32;  // active strictly above
    std::string classifier_path;
  };

  struct Training {
    std::string loss_form = "logistic";  // logistic | hinge | saturating
    Guidance guidance;
    double blur_sigma = 2.0;
    int64_t blur_cutoff_images = 200000;
    bool blur_linear_ramp = false;
    int64_t pl_threshold_images = 200000;
    double pl_weight = 2.0;
    double pl_decay = 0.99;
    double g_lr = 2.5e-3;
    double d_lr = 2e-3;
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.99;
    bool ema = true;
    double ema_halflife_images = 20000;
    bool augment = true;
    bool augment_generated = true;  // apply the same policy to fakes
    int64_t stage_image_cap = 0;    // 0 = unlimited
    int64_t eval_interval_images = 4000;
    int64_t plateau_patience = 3;
    double plateau_min_rel_improvement = 0.01;
    int64_t eval_samples = 256;
    int64_t eval_batch = 16;
    double divergence_factor = 5.0;
  } training;

  struct Metrics {
    uint64_t rfid_seed = 7;
    int64_t rfid_channels = 16;
    int64_t rfid_input_resolution = 64;
    int64_t sfid_max_dims = 768;
    int64_t pr_neighbors = 3;
    int64_t eqt_samples = 16;
    int64_t eqt_max_offset = 4;
  } metrics;

  std::string to_json() const;  // canonical serialization
  bool operator==(const RunConfig& other) const { return to_json() == other.to_json(); }
};

// Parse + validate. Unknown keys are rejected naming the key, its path, and
// the nearest known key. Empty files produce the full default configuration.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text, const std::string& origin);

void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace stylegrow
