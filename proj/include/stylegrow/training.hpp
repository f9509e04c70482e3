#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stylegrow/classifier.hpp"
#include "stylegrow/conditioning.hpp"
#include "stylegrow/config.hpp"
#include "stylegrow/dataset.hpp"
#include "stylegrow/discriminator.hpp"
#include "stylegrow/generator.hpp"
#include "stylegrow/metrics.hpp"
#include "stylegrow/projector.hpp"

namespace stylegrow {

struct TrainingState {
  int64_t images_seen = 0;
  int64_t stage_index = 0;
  double pl_mean = 0.0;  // moving path-length target `a`
};

// Per-term loss decomposition; totals must reconcile with the parts. The
// discriminator path carries no gradient penalty by construction, so no such
// field exists here.
struct LossReport {
  std::vector<double> d_real_terms;  // one per (extractor, head)
  std::vector<double> d_fake_terms;
  std::vector<double> g_adv_terms;
  double guidance = 0.0;
  double path_length = 0.0;
  double d_total = 0.0;
  double g_adv_total = 0.0;
  double g_total = 0.0;
};

// Sum over heads of the configured adversarial form; spatial logits averaged
// per head. Throws (naming the head) on non-finite logits.
Var discriminator_loss(const std::vector<Var>& real_logits, const std::vector<Var>& fake_logits,
                       AdvLossForm form, LossReport* report = nullptr);
Var generator_adversarial_loss(const std::vector<Var>& fake_logits, AdvLossForm form,
                               LossReport* report = nullptr);

// lambda * mean cross-entropy under the (frozen) classifier when resolution
// is strictly above the gate; exactly zero otherwise.
Var classifier_guidance_loss(const Var& images, const std::vector<int64_t>& labels,
                             const SmallConvClassifier& classifier, int64_t resolution,
                             double lambda = 8.0, int64_t gate_resolution = 32);

struct PathLengthResult {
  Var penalty;       // differentiable (graph kept through the JVP)
  double mean_norm = 0.0;
  bool active = false;
  Tensor jt_norms;   // per-sample ||J^T y||
};

using SynthesisFn = std::function<Var(const Var& w)>;

// 0 before `threshold` images; otherwise E[(||J^T y||_2 - a)^2] with y a
// unit-variance image-space direction (per-sample exact norm) and `a` the
// moving average in `state`, updated here with the given decay.
// `y_override`, when given, replaces the sampled direction (oracle tests).
PathLengthResult path_length_penalty(const SynthesisFn& synth, const Tensor& w_batch,
                                     TrainingState& state, int64_t threshold, Rng& rng,
                                     double decay = 0.99, const Tensor* y_override = nullptr);
PathLengthResult path_length_penalty(const GeneratorNet& net, const Tensor& w_batch,
                                     TrainingState& state, int64_t threshold, Rng& rng,
                                     double decay = 0.99);

// One pretrained-feature branch: extractor, its fixed projections, and the
// four-head discriminator.
struct ProjectedStack {
  std::shared_ptr<FeatureNetworkInterface> extractor;
  RandomProjectionParams projections;
  std::unique_ptr<MultiScaleDiscriminator> discriminator;
};

std::shared_ptr<FeatureNetworkInterface> build_extractor(const ExtractorSpec& spec);

struct StepReport {
  LossReport losses;
  int64_t images_seen = 0;
};

struct EvalRecord {
  int64_t images_seen = 0;
  int64_t stage_resolution = 0;
  double fid = 0.0;
  std::optional<double> is;
  double precision = 0.0;
  double recall = 0.0;
  LossReport losses;
  std::string to_json_line() const;
};

using LogSink = std::function<void(const EvalRecord&)>;
using TrainBatchFn = std::function<LabeledBatch(int64_t batch, int64_t resolution)>;
// test hook: overrides the measured FID sequence
using EvalOverrideFn = std::function<double(int64_t images_seen)>;

// Owns the whole trainable bundle and the stage controller.
class TrainingSystem {
 public:
  TrainingSystem(const RunConfig& cfg, int64_t class_count);

  // Alternating D/G optimization round at the current stage's batch size.
  StepReport train_step(const LabeledBatch& real);

  // Trains the current stage until the FID plateau (or the configured image
  // cap); evaluations happen every cfg.training.eval_interval_images.
  // Divergence (fid > factor * stage minimum) aborts with an exception.
  TrainingState run_stage(const TrainBatchFn& data, const LogSink& log = {},
                          const EvalOverrideFn& eval_override = {});

  bool has_next_stage() const;
  void grow_to_next_stage();

  // rFID of the current (EMA) generator against cached real statistics.
  double evaluate_fid(const TrainBatchFn& data, EvalRecord* record = nullptr);

  // Generate images for given labels with optional truncation (psi) through
  // the EMA parameters.
  Tensor generate(const std::vector<int64_t>& labels, double psi, uint64_t seed,
                  int64_t mean_style_samples = 2000);

  GeneratorNet& generator() { return *gen_; }
  const GrowthSchedule& schedule() const { return sched_; }
  TrainingState& state() { return state_; }
  std::vector<ProjectedStack>& stacks() { return stacks_; }
  ClassEmbeddingTable& table() { return table_; }
  EmbeddingProjector& projector_g() { return proj_g_; }
  EmbeddingProjector& projector_d() { return proj_d_; }
  EmaParams& ema() { return ema_; }
  const RunConfig& config() const { return cfg_; }
  int64_t class_count() const { return class_count_; }
  void set_classifier(std::shared_ptr<SmallConvClassifier> clf) { classifier_ = std::move(clf); }
  SmallConvClassifier* classifier() { return classifier_.get(); }
  void set_table(ClassEmbeddingTable table);

  // Accumulated-gradient probe for the fixed random projections (they are
  // never optimized; this reports the zero tensors the contract promises).
  Tensor random_projection_grad_accumulator(size_t stack, size_t scale) const;

  void save_checkpoint(const std::string& path) const;
  static std::unique_ptr<TrainingSystem> load_checkpoint(const std::string& path);

 private:
  RunConfig cfg_;
  int64_t class_count_;
  GrowthSchedule sched_;
  std::unique_ptr<GeneratorNet> gen_;
  std::vector<ProjectedStack> stacks_;
  ClassEmbeddingTable table_;
  EmbeddingProjector proj_g_, proj_d_;
  std::unique_ptr<Adam> g_opt_, d_opt_;
  EmaParams ema_;
  TrainingState state_;
  std::shared_ptr<SmallConvClassifier> classifier_;
  std::shared_ptr<FeatureNetworkInterface> rfid_extractor_;
  std::unique_ptr<Rng> rng_z_, rng_labels_, rng_noise_, rng_aug_, rng_eval_;
  std::optional<Tensor> cached_real_features_;  // per-stage rFID reference
  std::optional<FeatureStatistics> cached_real_stats_;
  int64_t cached_real_stage_ = -1;

  ParamRefs g_side_params();
  ParamRefs d_side_params();
  Var class_vec_g(const std::vector<int64_t>& labels);
  Var class_vec_d(const std::vector<int64_t>& labels, bool detached);
  std::vector<Var> run_discriminators(const Var& images, const std::vector<int64_t>& labels,
                                      bool detach_class);
  Tensor sample_fake_images(int64_t n, const std::vector<int64_t>& labels, bool use_ema);
  friend class EmaScope;
};

// RAII: swaps EMA values into the parameter set, restores originals on exit.
class EmaScope {
 public:
  EmaScope(ParamRefs params, const EmaParams& ema);
  ~EmaScope();
  EmaScope(const EmaScope&) = delete;

 private:
  std::vector<std::pair<Param*, Tensor>> saved_;
};

}  // namespace stylegrow
