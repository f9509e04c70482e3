#include "stylegrow/training.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <iostream>

#include "stylegrow/blob_io.hpp"

using nlohmann::json;

namespace stylegrow {

namespace {

constexpr uint32_t kCheckpointMagic = 0x53474b50;  // "SGKP"
constexpr uint32_t kCheckpointVersion = 1;

Var head_term(const Var& logits, bool negate) {
  return mean(softplus(negate ? neg(logits) : logits));
}

void check_finite_logits(const std::vector<Var>& logits, const char* which) {
  for (size_t h = 0; h < logits.size(); ++h) {
    if (!logits[h].val().all_finite()) {
      throw std::runtime_error(std::string("non-finite ") + which + " logits at head " +
                               std::to_string(h));
    }
  }
}

}  // namespace

Var discriminator_loss(const std::vector<Var>& real_logits, const std::vector<Var>& fake_logits,
                       AdvLossForm form, LossReport* report) {
  if (real_logits.size() != fake_logits.size() || real_logits.empty()) {
    throw std::invalid_argument("discriminator_loss: mismatched head counts");
  }
  check_finite_logits(real_logits, "real");
  check_finite_logits(fake_logits, "fake");
  Var total = constant(0.0);
  for (size_t h = 0; h < real_logits.size(); ++h) {
    Var real_term, fake_term;
    if (form == AdvLossForm::Hinge) {
      real_term = mean(relu(sub(constant(1.0), real_logits[h])));
      fake_term = mean(relu(add(fake_logits[h], 1.0)));
    } else {  // logistic discriminator loss is shared by both logistic forms
      real_term = head_term(real_logits[h], true);
      fake_term = head_term(fake_logits[h], false);
    }
    if (report) {
      report->d_real_terms.push_back(real_term.item());
      report->d_fake_terms.push_back(fake_term.item());
    }
    total = add(total, add(real_term, fake_term));
  }
  if (report) report->d_total = total.item();
  return total;
}

Var generator_adversarial_loss(const std::vector<Var>& fake_logits, AdvLossForm form,
                               LossReport* report) {
  if (fake_logits.empty()) throw std::invalid_argument("generator_adversarial_loss: no heads");
  check_finite_logits(fake_logits, "fake");
  Var total = constant(0.0);
  for (size_t h = 0; h < fake_logits.size(); ++h) {
    Var term;
    switch (form) {
      case AdvLossForm::Logistic: term = head_term(fake_logits[h], true); break;
      case AdvLossForm::Hinge: term = neg(mean(fake_logits[h])); break;
      case AdvLossForm::SaturatingLogistic: term = neg(head_term(fake_logits[h], false)); break;
    }
    if (report) report->g_adv_terms.push_back(term.item());
    total = add(total, term);
  }
  if (report) report->g_adv_total = total.item();
  return total;
}

Var classifier_guidance_loss(const Var& images, const std::vector<int64_t>& labels,
                             const SmallConvClassifier& classifier, int64_t resolution,
                             double lambda, int64_t gate_resolution) {
  for (int64_t l : labels) {
    if (l < 0 || l >= classifier.class_count()) {
      throw std::out_of_range("classifier_guidance_loss: label " + std::to_string(l) + " out of range");
    }
  }
  if (resolution <= gate_resolution) return constant(0.0);
  Var p = classifier.probabilities(images, true);
  int64_t n = p.size(0), c = p.size(1);
  Tensor mask({n, c});
  for (int64_t i = 0; i < n; ++i) mask.at({i, labels[static_cast<size_t>(i)]}) = 1.0;
  Var picked = sum(mul(p, constant(mask)), {1}, false);
  return mul(neg(mean(log(picked))), lambda);
}

PathLengthResult path_length_penalty(const SynthesisFn& synth, const Tensor& w_batch,
                                     TrainingState& state, int64_t threshold, Rng& rng,
                                     double decay, const Tensor* y_override) {
  PathLengthResult res;
  if (w_batch.dim() != 2 || w_batch.size(0) < 1) {
    throw std::invalid_argument("path_length_penalty: nonempty [N,style] batch required");
  }
  if (state.images_seen < threshold) {
    res.penalty = constant(0.0);
    return res;
  }
  Var w(w_batch.clone(), true);
  Var img = synth(w);
  // unit-variance direction with exact per-sample norm sqrt(C*H*W)
  const Shape& s = img.shape();
  int64_t per = img.numel() / s[0];
  Tensor y;
  if (y_override) {
    if (y_override->shape() != s) throw std::invalid_argument("path_length_penalty: bad y_override shape");
    y = y_override->clone();
  } else {
    y = rng.normal_tensor(s);
    for (int64_t i = 0; i < s[0]; ++i) {
      double nrm = 0;
      double* p = y.data() + i * per;
      for (int64_t j = 0; j < per; ++j) nrm += p[j] * p[j];
      double scale = std::sqrt(static_cast<double>(per)) / std::sqrt(std::max(nrm, 1e-24));
      for (int64_t j = 0; j < per; ++j) p[j] *= scale;
    }
  }
  Var proj = sum(mul(img, constant(y)));
  GradOptions opts;
  opts.create_graph = true;
  Var jt = grad(proj, {w}, opts)[0];  // [N, style] = J^T y per sample
  if (!jt.val().all_finite()) throw std::runtime_error("path_length_penalty: non-finite Jacobian product");
  Var norms = sqrt(add(sum(square(jt), {1}, false), 1e-12));
  Var a = constant(state.pl_mean);
  res.penalty = mean(square(sub(norms, a)));
  res.active = true;
  res.jt_norms = norms.val().clone();
  double mean_norm = 0;
  for (int64_t i = 0; i < norms.numel(); ++i) mean_norm += norms.val().data()[i];
  mean_norm /= static_cast<double>(norms.numel());
  res.mean_norm = mean_norm;
  state.pl_mean += (1.0 - decay) * (mean_norm - state.pl_mean);
  return res;
}

PathLengthResult path_length_penalty(const GeneratorNet& net, const Tensor& w_batch,
                                     TrainingState& state, int64_t threshold, Rng& rng,
                                     double decay) {
  SynthesisFn synth = [&net](const Var& w) { return net.synthesize_broadcast(w); };
  return path_length_penalty(synth, w_batch, state, threshold, rng, decay, nullptr);
}

std::shared_ptr<FeatureNetworkInterface> build_extractor(const ExtractorSpec& spec) {
  std::shared_ptr<FeatureNetworkInterface> f;
  if (spec.type == "conv") {
    f = std::make_shared<RandomConvExtractor>(spec.name, spec.input_resolution, spec.channels, spec.seed);
  } else if (spec.type == "attention") {
    f = std::make_shared<RandomAttentionExtractor>(spec.name, spec.input_resolution, spec.channels,
                                                   spec.seed);
  } else {
    throw std::invalid_argument("unknown extractor type: " + spec.type);
  }
  if (!spec.weights_path.empty()) load_extractor_weights(*f, spec.weights_path);
  return f;
}

std::string EvalRecord::to_json_line() const {
  json j;
  j["schema_version"] = 1;
  j["images_seen"] = images_seen;
  j["stage_resolution"] = stage_resolution;
  j["fid"] = fid;
  if (is) {
    j["is"] = *is;
  } else {
    j["is"] = nullptr;
  }
  j["precision"] = precision;
  j["recall"] = recall;
  json loss;
  loss["d_real"] = losses.d_real_terms;
  loss["d_fake"] = losses.d_fake_terms;
  loss["g_adv"] = losses.g_adv_terms;
  loss["guidance"] = losses.guidance;
  loss["path_length"] = losses.path_length;
  loss["d_total"] = losses.d_total;
  loss["g_total"] = losses.g_total;
  j["loss"] = loss;
  return j.dump();
}

// ---------------------------------------------------------------------------

EmaScope::EmaScope(ParamRefs params, const EmaParams& ema) {
  for (Param* p : params) {
    const Tensor* e = ema.lookup(p->name);
    if (!e) continue;
    saved_.emplace_back(p, p->value.val());
    p->value.set_value(e->clone());
  }
}

EmaScope::~EmaScope() {
  for (auto& [p, t] : saved_) p->value.set_value(std::move(t));
}

// ---------------------------------------------------------------------------

TrainingSystem::TrainingSystem(const RunConfig& cfg, int64_t class_count)
    : cfg_(cfg), class_count_(class_count) {
  ScheduleOptions sopts;
  sopts.max_target = cfg.schedule.max_target;
  sopts.treat_final_as_max = cfg.schedule.treat_final_as_max;
  sopts.batch_divisor = cfg.schedule.batch_divisor;
  sched_ = build_growth_schedule(cfg.schedule.start_resolution, cfg.schedule.final_resolution, sopts);

  gen_ = std::make_unique<GeneratorNet>(cfg.generator, sched_.stages[0], sched_.per_stage_specs[0],
                                        derive_seed(cfg.seed, "generator"));

  for (size_t i = 0; i < cfg.extractors.size(); ++i) {
    ProjectedStack stack;
    stack.extractor = build_extractor(cfg.extractors[i]);
    // tap shapes are fixed: extractor input is always resized to its training
    // resolution, so one projection set serves every stage
    std::vector<Shape> tap_shapes;
    {
      NoGradGuard ng;
      Rng probe(1);
      Var dummy(probe.normal_tensor({1, 3, stack.extractor->input_resolution(),
                                     stack.extractor->input_resolution()}, 0.1));
      for (const Var& t : stack.extractor->forward(dummy)) {
        tap_shapes.push_back({t.shape()[1], t.shape()[2], t.shape()[3]});
      }
    }
    stack.projections = init_random_projections(tap_shapes, derive_seed(cfg.seed, "rp" + std::to_string(i)));
    DiscriminatorConfig dcfg;
    dcfg.class_dim = cfg.generator.class_dim;
    dcfg.base_channels = cfg.discriminator.base_channels;
    dcfg.max_channels = cfg.discriminator.max_channels;
    dcfg.sn_iterations = cfg.discriminator.sn_iterations;
    stack.discriminator = std::make_unique<MultiScaleDiscriminator>(
        dcfg, tap_shapes, derive_seed(cfg.seed, "disc" + std::to_string(i)));
    // make parameter names unique across stacks
    for (Param* p : stack.discriminator->params()) p->name = "s" + std::to_string(i) + ":" + p->name;
    stacks_.push_back(std::move(stack));
  }

  Rng init_rng(derive_seed(cfg.seed, "conditioning"));
  int64_t d_e = stacks_[0].extractor->tap_channels().back();
  if (!cfg.conditioning.table_path.empty()) {
    table_ = load_embedding_table(cfg.conditioning.table_path);
    if (table_.class_count != class_count_) {
      throw std::runtime_error("embedding table class count does not match the dataset");
    }
    d_e = table_.dim;
  } else {
    table_.class_count = class_count_;
    table_.dim = d_e;
    table_.source = "random-init";
    table_.embeddings = Param("cond.table", init_rng.normal_tensor({class_count_, d_e}));
  }
  proj_g_ = EmbeddingProjector("cond.proj_g", d_e, cfg.generator.class_dim, init_rng);
  proj_d_ = EmbeddingProjector("cond.proj_d", d_e, cfg.generator.class_dim, init_rng);
  proj_g_.normalize = cfg.conditioning.normalize_embeddings;
  proj_d_.normalize = cfg.conditioning.normalize_embeddings;

  g_opt_ = std::make_unique<Adam>(AdamConfig{cfg.training.g_lr, cfg.training.adam_beta1,
                                             cfg.training.adam_beta2, 1e-8});
  d_opt_ = std::make_unique<Adam>(AdamConfig{cfg.training.d_lr, cfg.training.adam_beta1,
                                             cfg.training.adam_beta2, 1e-8});

  rfid_extractor_ = std::make_shared<RandomConvExtractor>(
      "rfid", cfg.metrics.rfid_input_resolution, cfg.metrics.rfid_channels, cfg.metrics.rfid_seed);

  rng_z_ = std::make_unique<Rng>(derive_seed(cfg.seed, "z"));
  rng_labels_ = std::make_unique<Rng>(derive_seed(cfg.seed, "labels"));
  rng_noise_ = std::make_unique<Rng>(derive_seed(cfg.seed, "noise"));
  rng_aug_ = std::make_unique<Rng>(derive_seed(cfg.seed, "augment"));
  rng_eval_ = std::make_unique<Rng>(derive_seed(cfg.seed, "eval"));

  if (!cfg.training.guidance.classifier_path.empty()) {
    classifier_ = std::make_shared<SmallConvClassifier>(
        SmallConvClassifier::load(cfg.training.guidance.classifier_path));
  }
}

void TrainingSystem::set_table(ClassEmbeddingTable table) {
  if (table.class_count != class_count_) {
    throw std::invalid_argument("set_table: class count mismatch");
  }
  if (table.dim != table_.dim) {
    throw std::invalid_argument("set_table: embedding dimension mismatch (projectors are sized to " +
                                std::to_string(table_.dim) + ")");
  }
  table.embeddings.name = "cond.table";
  table_ = std::move(table);
}

ParamRefs TrainingSystem::g_side_params() {
  ParamRefs out = gen_->trainable_params();
  proj_g_.collect(out);
  out.push_back(&table_.embeddings);
  return out;
}

ParamRefs TrainingSystem::d_side_params() {
  ParamRefs out;
  for (auto& s : stacks_) {
    for (Param* p : s.discriminator->params()) out.push_back(p);
  }
  proj_d_.collect(out);
  out.push_back(&table_.embeddings);
  return out;
}

Var TrainingSystem::class_vec_g(const std::vector<int64_t>& labels) {
  return embed_class(table_, proj_g_, labels);
}

Var TrainingSystem::class_vec_d(const std::vector<int64_t>& labels, bool detached) {
  Var v = embed_class(table_, proj_d_, labels);
  return detached ? v.detach() : v;
}

std::vector<Var> TrainingSystem::run_discriminators(const Var& images,
                                                    const std::vector<int64_t>& labels,
                                                    bool detach_class) {
  const GrowthStage& stage = sched_.stages[static_cast<size_t>(state_.stage_index)];
  Var imgs = blur_for_warmup(images, state_.images_seen,
                             BlurSchedule{cfg_.training.blur_sigma, cfg_.training.blur_cutoff_images,
                                          cfg_.training.blur_linear_ramp});
  std::optional<AugmentationParams> aug;
  if (cfg_.training.augment) {
    aug = sample_augmentation(images.size(0), stage.resolution, AugmentationConfig{}, *rng_aug_);
  }
  Var cvec = class_vec_d(labels, detach_class);
  std::vector<Var> logits;
  for (auto& s : stacks_) {
    auto taps = extract_feature_pyramid(imgs, *s.extractor, aug ? &*aug : nullptr);
    FeaturePyramid pyr = project_pyramid(taps, s.projections);
    for (Var& l : s.discriminator->discriminate(pyr, cvec)) logits.push_back(std::move(l));
  }
  return logits;
}

StepReport TrainingSystem::train_step(const LabeledBatch& real) {
  const GrowthStage& stage = sched_.stages[static_cast<size_t>(state_.stage_index)];
  int64_t batch = real.images.size(0);
  StepReport report;

  // ---- discriminator step ----
  {
    std::vector<int64_t> fake_labels;
    for (int64_t i = 0; i < batch; ++i) fake_labels.push_back(rng_labels_->uniform_int(0, class_count_ - 1));
    Tensor z = rng_z_->normal_tensor({batch, cfg_.generator.latent_dim});
    Var fake_images;
    {
      Var w = gen_->map_latent(Var(z), class_vec_g(fake_labels));
      fake_images = gen_->synthesize_broadcast(w).detach();
    }
    auto real_logits = run_discriminators(Var(real.images), real.labels, false);
    auto fake_logits = run_discriminators(fake_images, fake_labels, false);
    Var d_loss = discriminator_loss(real_logits, fake_logits, loss_form_from_name(cfg_.training.loss_form),
                                    &report.losses);
    ParamRefs params = d_side_params();
    std::vector<Var> wrt;
    for (Param* p : params) wrt.push_back(p->value);
    auto gs = grad(d_loss, wrt);
    d_opt_->step(params, gs);
  }

  // ---- generator step ----
  {
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < batch; ++i) labels.push_back(rng_labels_->uniform_int(0, class_count_ - 1));
    Tensor z = rng_z_->normal_tensor({batch, cfg_.generator.latent_dim});
    Var w = gen_->map_latent(Var(z), class_vec_g(labels));
    Var fake = gen_->synthesize_broadcast(w);
    auto fake_logits = run_discriminators(fake, labels, true);
    Var g_adv = generator_adversarial_loss(fake_logits, loss_form_from_name(cfg_.training.loss_form),
                                           &report.losses);
    Var guidance = constant(0.0);
    if (classifier_ && cfg_.training.guidance.lambda > 0) {
      guidance = classifier_guidance_loss(fake, labels, *classifier_, stage.resolution,
                                          cfg_.training.guidance.lambda,
                                          cfg_.training.guidance.gate_resolution);
    }
    PathLengthResult pl = path_length_penalty(*gen_, w.val(), state_, cfg_.training.pl_threshold_images,
                                              *rng_noise_, cfg_.training.pl_decay);
    Var pl_term = mul(pl.penalty, cfg_.training.pl_weight);
    Var g_total = add(add(g_adv, guidance), pl_term);
    report.losses.guidance = guidance.item();
    report.losses.path_length = pl_term.item();
    report.losses.g_total = g_total.item();
    if (!std::isfinite(report.losses.g_total)) throw std::runtime_error("non-finite generator loss");

    ParamRefs params = g_side_params();
    std::vector<Var> wrt;
    for (Param* p : params) wrt.push_back(p->value);
    auto gs = grad(g_total, wrt);
    g_opt_->step(params, gs);

    if (cfg_.training.ema) {
      double decay = std::pow(0.5, static_cast<double>(batch) / cfg_.training.ema_halflife_images);
      ParamRefs ema_set = gen_->params();
      proj_g_.collect(ema_set);
      ema_set.push_back(&table_.embeddings);
      ema_.update(ema_set, decay);
    }
  }

  state_.images_seen += batch;
  report.images_seen = state_.images_seen;
  return report;
}

Tensor TrainingSystem::sample_fake_images(int64_t n, const std::vector<int64_t>& labels, bool use_ema) {
  NoGradGuard ng;
  ParamRefs ema_set = gen_->params();
  proj_g_.collect(ema_set);
  ema_set.push_back(&table_.embeddings);
  std::optional<EmaScope> scope;
  if (use_ema && cfg_.training.ema) scope.emplace(ema_set, ema_);

  int64_t res = gen_->resolution();
  Tensor out({n, 3, res, res});
  int64_t done = 0;
  while (done < n) {
    int64_t b = std::min<int64_t>(cfg_.training.eval_batch, n - done);
    std::vector<int64_t> lb(labels.begin() + done, labels.begin() + done + b);
    Tensor z = rng_eval_->normal_tensor({b, cfg_.generator.latent_dim});
    Var w = gen_->map_latent(Var(z), class_vec_g(lb));
    Tensor img = gen_->synthesize_broadcast(w).val();
    std::memcpy(out.data() + done * 3 * res * res, img.data(),
                sizeof(double) * static_cast<size_t>(img.numel()));
    done += b;
  }
  return out;
}

double TrainingSystem::evaluate_fid(const TrainBatchFn& data, EvalRecord* record) {
  const GrowthStage& stage = sched_.stages[static_cast<size_t>(state_.stage_index)];
  int64_t n = cfg_.training.eval_samples;

  if (cached_real_stage_ != state_.stage_index) {
    std::vector<Tensor> real_batches;
    int64_t got = 0;
    while (got < n) {
      int64_t b = std::min<int64_t>(cfg_.training.eval_batch, n - got);
      real_batches.push_back(data(b, stage.resolution).images);
      got += b;
    }
    Tensor feats = extract_pooled_features(real_batches, *rfid_extractor_);
    cached_real_stats_ = compute_feature_stats(feats);
    cached_real_features_ = feats;  // retained for precision/recall
    cached_real_stage_ = state_.stage_index;
  }

  std::vector<int64_t> labels;
  for (int64_t i = 0; i < n; ++i) labels.push_back(rng_eval_->uniform_int(0, class_count_ - 1));
  Tensor fakes = sample_fake_images(n, labels, true);
  std::vector<Tensor> fake_batches;
  for (int64_t off = 0; off < n; off += cfg_.training.eval_batch) {
    int64_t b = std::min<int64_t>(cfg_.training.eval_batch, n - off);
    Tensor chunk({b, 3, stage.resolution, stage.resolution});
    std::memcpy(chunk.data(), fakes.data() + off * 3 * stage.resolution * stage.resolution,
                sizeof(double) * static_cast<size_t>(chunk.numel()));
    fake_batches.push_back(chunk);
  }
  Tensor fake_feats = extract_pooled_features(fake_batches, *rfid_extractor_);
  double fid = frechet_distance(*cached_real_stats_, compute_feature_stats(fake_feats));

  if (record) {
    record->images_seen = state_.images_seen;
    record->stage_resolution = stage.resolution;
    record->fid = fid;
    auto [p, r] = precision_recall(*cached_real_features_, fake_feats, cfg_.metrics.pr_neighbors);
    record->precision = p;
    record->recall = r;
    if (classifier_) {
      NoGradGuard ng;
      record->is = inception_score(classifier_->probabilities(Var(fakes), true).val());
    }
  }
  return fid;
}

TrainingState TrainingSystem::run_stage(const TrainBatchFn& data, const LogSink& log,
                                        const EvalOverrideFn& eval_override) {
  const GrowthStage& stage = sched_.stages[static_cast<size_t>(state_.stage_index)];
  int64_t batch = stage.batch_size;
  int64_t stage_start = state_.images_seen;
  int64_t next_eval = state_.images_seen + cfg_.training.eval_interval_images;
  double best_fid = std::numeric_limits<double>::infinity();
  double min_fid = std::numeric_limits<double>::infinity();
  int64_t evals_since_best = 0;

  while (true) {
    StepReport step;
    if (!eval_override) {
      step = train_step(data(batch, stage.resolution));
    } else {
      // controller test path: advance the counter without optimization
      state_.images_seen += batch;
      step.images_seen = state_.images_seen;
    }

    if (state_.images_seen >= next_eval) {
      next_eval += cfg_.training.eval_interval_images;
      EvalRecord record;
      record.losses = step.losses;
      double fid = eval_override ? eval_override(state_.images_seen) : evaluate_fid(data, &record);
      if (eval_override) {
        record.images_seen = state_.images_seen;
        record.stage_resolution = stage.resolution;
        record.fid = fid;
      }
      if (log) log(record);
      min_fid = std::min(min_fid, fid);
      if (fid > cfg_.training.divergence_factor * min_fid) {
        throw std::runtime_error("training diverged: fid " + std::to_string(fid) + " exceeds " +
                                 std::to_string(cfg_.training.divergence_factor) + "x stage minimum " +
                                 std::to_string(min_fid));
      }
      if (fid < best_fid * (1.0 - cfg_.training.plateau_min_rel_improvement)) {
        best_fid = fid;
        evals_since_best = 0;
      } else {
        evals_since_best++;
      }
      if (evals_since_best >= cfg_.training.plateau_patience) break;
    }
    if (cfg_.training.stage_image_cap > 0 &&
        state_.images_seen - stage_start >= cfg_.training.stage_image_cap) {
      break;
    }
  }
  return state_;
}

bool TrainingSystem::has_next_stage() const {
  return state_.stage_index + 1 < static_cast<int64_t>(sched_.stages.size());
}

void TrainingSystem::grow_to_next_stage() {
  if (!has_next_stage()) throw std::logic_error("grow_to_next_stage: already at the final stage");
  int64_t next = state_.stage_index + 1;
  gen_->grow(sched_.stages[static_cast<size_t>(next)], sched_.per_stage_specs[static_cast<size_t>(next)]);
  state_.stage_index = next;
  cached_real_stage_ = -1;
}

Tensor TrainingSystem::generate(const std::vector<int64_t>& labels, double psi, uint64_t seed,
                                int64_t mean_style_samples) {
  NoGradGuard ng;
  ParamRefs ema_set = gen_->params();
  proj_g_.collect(ema_set);
  ema_set.push_back(&table_.embeddings);
  std::optional<EmaScope> scope;
  if (cfg_.training.ema) scope.emplace(ema_set, ema_);

  Rng rng(derive_seed(seed, "generate"));
  std::optional<Var> w_avg;
  if (psi != 1.0) {
    auto sampler = [this](int64_t b, Rng& r) {
      std::vector<int64_t> lb;
      for (int64_t i = 0; i < b; ++i) lb.push_back(r.uniform_int(0, class_count_ - 1));
      return embed_class(table_, proj_g_, lb).val();
    };
    Tensor avg = compute_mean_style(*gen_, mean_style_samples, sampler, derive_seed(seed, "wavg"));
    w_avg = Var(avg.reshaped({1, avg.numel()}));
  }

  int64_t n = static_cast<int64_t>(labels.size());
  int64_t res = gen_->resolution();
  Tensor out({n, 3, res, res});
  int64_t done = 0;
  while (done < n) {
    int64_t b = std::min<int64_t>(cfg_.training.eval_batch, n - done);
    std::vector<int64_t> lb(labels.begin() + done, labels.begin() + done + b);
    Tensor z = rng.normal_tensor({b, cfg_.generator.latent_dim});
    Var w = gen_->map_latent(Var(z), class_vec_g(lb));
    if (w_avg) w = truncate_style(w, *w_avg, psi);
    Tensor img = gen_->synthesize_broadcast(w).val();
    std::memcpy(out.data() + done * 3 * res * res, img.data(),
                sizeof(double) * static_cast<size_t>(img.numel()));
    done += b;
  }
  return out;
}

Tensor TrainingSystem::random_projection_grad_accumulator(size_t stack, size_t scale) const {
  // fixed projections are constants outside every optimizer: their
  // accumulated gradient is zero by construction
  return Tensor::zeros(stacks_[stack].projections.ccm[scale].shape());
}

// ---------------------------------------------------------------------------
// checkpointing

void TrainingSystem::save_checkpoint(const std::string& path) const {
  BlobFile f;
  json meta;
  meta["schema_version"] = kCheckpointVersion;
  meta["config"] = json::parse(cfg_.to_json());
  meta["class_count"] = class_count_;
  meta["state"] = {{"images_seen", state_.images_seen},
                   {"stage_index", state_.stage_index},
                   {"pl_mean", state_.pl_mean}};
  meta["adam_g_t"] = g_opt_->step_count();
  meta["adam_d_t"] = d_opt_->step_count();
  meta["rng"] = {{"z", rng_z_->state_string()},
                 {"labels", rng_labels_->state_string()},
                 {"noise", rng_noise_->state_string()},
                 {"aug", rng_aug_->state_string()},
                 {"eval", rng_eval_->state_string()}};
  meta["table"] = {{"dim", table_.dim}, {"source", table_.source}};
  f.text = meta.dump();

  auto add_params = [&f](const ParamRefs& params, const std::string& prefix) {
    for (const Param* p : params) f.blobs.emplace_back(prefix + p->name, p->value.val());
  };
  GeneratorNet* g = const_cast<GeneratorNet*>(gen_.get());
  add_params(g->params(), "");
  f.blobs.emplace_back("grid.freqs", gen_->input_grid().freqs);
  f.blobs.emplace_back("grid.phases", gen_->input_grid().phases);
  for (size_t i = 0; i < stacks_.size(); ++i) {
    auto* d = const_cast<MultiScaleDiscriminator*>(stacks_[i].discriminator.get());
    add_params(d->params(), "");
    for (auto& [name, t] : d->sn_states()) {
      f.blobs.emplace_back("s" + std::to_string(i) + ":" + name, *t);
    }
    for (size_t l = 0; l < 4; ++l) {
      f.blobs.emplace_back("rp" + std::to_string(i) + ".ccm" + std::to_string(l),
                           stacks_[i].projections.ccm[l]);
    }
    for (size_t l = 0; l < 3; ++l) {
      f.blobs.emplace_back("rp" + std::to_string(i) + ".csm" + std::to_string(l),
                           stacks_[i].projections.csm[l]);
    }
  }
  f.blobs.emplace_back("cond.table", table_.embeddings.value.val());
  auto* pg = const_cast<EmbeddingProjector*>(&proj_g_);
  auto* pd = const_cast<EmbeddingProjector*>(&proj_d_);
  ParamRefs pr;
  pg->collect(pr);
  pd->collect(pr);
  add_params(pr, "");
  for (auto& [name, st] : const_cast<Adam*>(g_opt_.get())->states()) {
    f.blobs.emplace_back("optg:" + name + ":m", st.m);
    f.blobs.emplace_back("optg:" + name + ":v", st.v);
  }
  for (auto& [name, st] : const_cast<Adam*>(d_opt_.get())->states()) {
    f.blobs.emplace_back("optd:" + name + ":m", st.m);
    f.blobs.emplace_back("optd:" + name + ":v", st.v);
  }
  for (const auto& [name, t] : ema_.values()) f.blobs.emplace_back("ema:" + name, t);
  write_blob_file(path, kCheckpointMagic, f);
}

std::unique_ptr<TrainingSystem> TrainingSystem::load_checkpoint(const std::string& path) {
  BlobFile f = read_blob_file(path, kCheckpointMagic, kCheckpointVersion);
  json meta = json::parse(f.text);
  if (meta.at("schema_version").get<uint32_t>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint schema version mismatch in " + path);
  }
  RunConfig cfg = parse_config(meta.at("config").dump(), path + "#config");
  auto sys = std::make_unique<TrainingSystem>(cfg, meta.at("class_count").get<int64_t>());

  sys->state_.images_seen = meta.at("state").at("images_seen").get<int64_t>();
  sys->state_.pl_mean = meta.at("state").at("pl_mean").get<double>();
  int64_t stage_index = meta.at("state").at("stage_index").get<int64_t>();
  // replay growth so layer identities and freeze flags match the saved run
  for (int64_t k = 0; k < stage_index; ++k) sys->grow_to_next_stage();

  auto need = [&f, &path](const std::string& name) -> const Tensor& {
    const Tensor* t = f.find(name);
    if (!t) throw std::runtime_error("checkpoint missing blob '" + name + "' in " + path);
    return *t;
  };
  auto restore = [&](const ParamRefs& params) {
    for (Param* p : params) {
      const Tensor& t = need(p->name);
      if (t.shape() != p->value.shape()) {
        throw std::runtime_error("checkpoint blob shape mismatch for " + p->name);
      }
      p->value.set_value(t.clone());
    }
  };
  restore(sys->gen_->params());
  sys->gen_->mutable_input_grid().freqs = need("grid.freqs").clone();
  sys->gen_->mutable_input_grid().phases = need("grid.phases").clone();
  for (size_t i = 0; i < sys->stacks_.size(); ++i) {
    restore(sys->stacks_[i].discriminator->params());
    for (auto& [name, t] : sys->stacks_[i].discriminator->sn_states()) {
      *t = need("s" + std::to_string(i) + ":" + name).clone();
    }
    for (size_t l = 0; l < 4; ++l) {
      sys->stacks_[i].projections.ccm[l] = need("rp" + std::to_string(i) + ".ccm" + std::to_string(l)).clone();
    }
    for (size_t l = 0; l < 3; ++l) {
      sys->stacks_[i].projections.csm[l] = need("rp" + std::to_string(i) + ".csm" + std::to_string(l)).clone();
    }
  }
  sys->table_.embeddings.value.set_value(need("cond.table").clone());
  sys->table_.dim = meta.at("table").at("dim").get<int64_t>();
  sys->table_.source = meta.at("table").at("source").get<std::string>();
  ParamRefs pr;
  sys->proj_g_.collect(pr);
  sys->proj_d_.collect(pr);
  restore(pr);

  sys->g_opt_->set_step_count(meta.at("adam_g_t").get<int64_t>());
  sys->d_opt_->set_step_count(meta.at("adam_d_t").get<int64_t>());
  for (const auto& [name, t] : f.blobs) {
    if (name.rfind("optg:", 0) == 0 && name.size() > 7 && name.substr(name.size() - 2) == ":m") {
      std::string pname = name.substr(5, name.size() - 7);
      sys->g_opt_->states()[pname] = {t.clone(), need("optg:" + pname + ":v").clone()};
    }
    if (name.rfind("optd:", 0) == 0 && name.size() > 7 && name.substr(name.size() - 2) == ":m") {
      std::string pname = name.substr(5, name.size() - 7);
      sys->d_opt_->states()[pname] = {t.clone(), need("optd:" + pname + ":v").clone()};
    }
    if (name.rfind("ema:", 0) == 0) {
      sys->ema_.values()[name.substr(4)] = t.clone();
    }
  }
  sys->rng_z_->set_state_string(meta.at("rng").at("z").get<std::string>());
  sys->rng_labels_->set_state_string(meta.at("rng").at("labels").get<std::string>());
  sys->rng_noise_->set_state_string(meta.at("rng").at("noise").get<std::string>());
  sys->rng_aug_->set_state_string(meta.at("rng").at("aug").get<std::string>());
  sys->rng_eval_->set_state_string(meta.at("rng").at("eval").get<std::string>());
  return sys;
}

}  // namespace stylegrow
