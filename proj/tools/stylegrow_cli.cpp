#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stylegrow/blob_io.hpp"
#include "stylegrow/classifier.hpp"
#include "stylegrow/config.hpp"
#include "stylegrow/dataset.hpp"
#include "stylegrow/image_io.hpp"
#include "stylegrow/inversion.hpp"
#include "stylegrow/layerspec.hpp"
#include "stylegrow/metrics.hpp"
#include "stylegrow/training.hpp"

namespace fs = std::filesystem;
using namespace stylegrow;
using nlohmann::json;

namespace {

constexpr uint32_t kStyleMagic = 0x53475756;  // "SGWV"

std::string resolve_outdir(const std::string& configured) {
  if (const char* env = std::getenv("STYLEGROW_OUTDIR")) return env;
  return configured;
}

void save_style(const Tensor& w, const std::string& path) {
  BlobFile f;
  f.text = "{}";
  f.blobs.emplace_back("w", w);
  write_blob_file(path, kStyleMagic, f);
}

Tensor load_style(const std::string& path) {
  BlobFile f = read_blob_file(path, kStyleMagic, 1);
  const Tensor* w = f.find("w");
  if (!w) throw std::runtime_error("style file has no 'w' blob: " + path);
  return w->clone();
}

ClassVecSampler uniform_class_sampler(TrainingSystem& sys) {
  return [&sys](int64_t b, Rng& rng) {
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < b; ++i) labels.push_back(rng.uniform_int(0, sys.class_count() - 1));
    NoGradGuard ng;
    return embed_class(sys.table(), sys.projector_g(), labels).val();
  };
}

ClassVecSampler fixed_class_sampler(TrainingSystem& sys, int64_t label) {
  return [&sys, label](int64_t b, Rng&) {
    std::vector<int64_t> labels(static_cast<size_t>(b), label);
    NoGradGuard ng;
    return embed_class(sys.table(), sys.projector_g(), labels).val();
  };
}

std::vector<Tensor> read_image_dir(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .ppm images under " + dir);
  std::vector<Tensor> images;
  for (const auto& f : files) images.push_back(read_ppm(f.string()));
  return images;
}

std::vector<Tensor> to_batches(const std::vector<Tensor>& images, int64_t batch) {
  std::vector<Tensor> out;
  size_t i = 0;
  while (i < images.size()) {
    size_t n = std::min<size_t>(static_cast<size_t>(batch), images.size() - i);
    std::vector<Tensor> chunk(images.begin() + static_cast<int64_t>(i),
                              images.begin() + static_cast<int64_t>(i + n));
    out.push_back(stack_images(chunk));
    i += n;
  }
  return out;
}

int cmd_layerspec(int64_t start, int64_t final_res, bool final_as_max) {
  ScheduleOptions opts;
  opts.treat_final_as_max = final_as_max;
  auto sched = build_growth_schedule(start, final_res, opts);
  std::cout << "stage resolution layers cut added batch\n";
  for (size_t k = 0; k < sched.stages.size(); ++k) {
    const auto& st = sched.stages[k];
    std::cout << k << " " << st.resolution << " " << st.layer_count << " " << st.layers_cut << " "
              << st.layers_added << " " << st.batch_size << "\n";
  }
  std::cout << "\n# stage index sampling_rate cutoff stopband half_width is_critical\n";
  for (size_t k = 0; k < sched.stages.size(); ++k) {
    for (const auto& s : sched.per_stage_specs[k]) {
      std::cout << k << " " << s.index << " " << s.sampling_rate << " " << s.cutoff << " "
                << s.stopband << " " << s.half_width << " " << (s.is_critical ? 1 : 0) << "\n";
    }
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  std::unique_ptr<TrainingSystem> sys;
  RunConfig cfg;
  if (!resume.empty()) {
    sys = TrainingSystem::load_checkpoint(resume);
    cfg = sys->config();
    std::cout << "resumed from " << resume << " at stage index " << sys->state().stage_index
              << ", images seen " << sys->state().images_seen << "\n";
  } else {
    cfg = load_config(config_path);
  }
  if (cfg.dataset.path.empty()) throw std::runtime_error("config: dataset.path is required for train");
  DatasetIndex index = ingest_dataset(cfg.dataset.path);
  int64_t classes = static_cast<int64_t>(index.class_names.size());
  if (cfg.dataset.class_count > 0 && cfg.dataset.class_count != classes) {
    throw std::runtime_error("config: dataset.class_count does not match the directory layout");
  }
  if (!sys) sys = std::make_unique<TrainingSystem>(cfg, classes);

  std::string outdir = resolve_outdir(cfg.output_dir);
  fs::create_directories(outdir);
  std::ofstream log_file(outdir + "/train_log.jsonl", std::ios::app);
  DatasetLoader loader(index, cfg.seed);
  auto data = [&loader](int64_t n, int64_t res) { return loader.next_batch(n, res); };
  auto log = [&log_file](const EvalRecord& r) {
    log_file << r.to_json_line() << "\n";
    log_file.flush();
    std::cout << r.to_json_line() << "\n";
  };

  while (true) {
    sys->run_stage(data, log);
    std::string ckpt = outdir + "/stage_" + std::to_string(sys->generator().resolution()) + ".ckpt";
    sys->save_checkpoint(ckpt);
    std::cout << "stage " << sys->generator().resolution() << " done, checkpoint at " << ckpt << "\n";
    if (!sys->has_next_stage()) break;
    sys->grow_to_next_stage();
  }
  sys->save_checkpoint(outdir + "/final.ckpt");
  std::cout << "wrote " << outdir << "/final.ckpt\n";
  return 0;
}

int cmd_generate(const std::string& ckpt, const std::string& out, int64_t per_class, double psi,
                 uint64_t seed) {
  auto sys = TrainingSystem::load_checkpoint(ckpt);
  fs::create_directories(out);
  std::vector<int64_t> labels;
  for (int64_t c = 0; c < sys->class_count(); ++c) {
    for (int64_t i = 0; i < per_class; ++i) labels.push_back(c);
  }
  Tensor batch = sys->generate(labels, psi, seed);
  for (size_t i = 0; i < labels.size(); ++i) {
    Tensor img({3, batch.size(2), batch.size(3)});
    std::memcpy(img.data(), batch.data() + static_cast<int64_t>(i) * img.numel(),
                sizeof(double) * static_cast<size_t>(img.numel()));
    write_ppm(out + "/sample_c" + std::to_string(labels[i]) + "_" +
                  std::to_string(static_cast<int64_t>(i) % per_class) + ".ppm",
              img);
  }
  write_ppm(out + "/grid.ppm", tile_grid(batch, per_class));
  std::cout << "wrote " << labels.size() << " samples and grid.ppm to " << out << " (psi " << psi
            << ")\n";
  return 0;
}

int cmd_invert(const std::string& ckpt, const std::string& image_path, const std::string& out,
               bool pti, const std::string& classifier_path, uint64_t seed) {
  auto sys = TrainingSystem::load_checkpoint(ckpt);
  fs::create_directories(out);
  Tensor raw = read_ppm(image_path);
  Tensor target = center_crop_resize(raw, sys->generator().resolution());

  auto percep = build_extractor(sys->config().extractors[0]);
  ClassVecSampler sampler;
  if (!classifier_path.empty()) {
    auto clf = std::make_shared<SmallConvClassifier>(SmallConvClassifier::load(classifier_path));
    int64_t cls = sample_class_for_image(target, *clf, seed);
    std::cout << "sampled class " << cls << " from classifier posteriors\n";
    sampler = fixed_class_sampler(*sys, cls);
  } else {
    sampler = uniform_class_sampler(*sys);
  }

  InversionConfig icfg;
  auto res = invert_latent(target, sys->generator(), icfg, *percep, sampler, seed);
  save_style(res.w_final, out + "/w.bin");
  int64_t r = sys->generator().resolution();
  write_ppm(out + "/reconstruction.ppm", res.reconstruction.reshaped({3, r, r}));
  double rec_psnr = psnr(res.reconstruction.reshaped(target.shape()), target);
  std::cout << "inversion done: final loss " << res.loss_trace.back() << ", psnr " << rec_psnr
            << " dB, style at " << out << "/w.bin\n";

  if (pti) {
    PivotalTuneConfig pcfg;
    auto tuned = pivotal_tune(target, res.w_final, sys->generator(), pcfg, *percep, sampler, seed);
    NoGradGuard ng;
    Tensor img = sys->generator().synthesize_broadcast(Var(res.w_final)).val();
    write_ppm(out + "/reconstruction_pti.ppm", img.reshaped({3, r, r}));
    std::cout << "pivotal tuning: reconstruction distance " << tuned.initial_distance << " -> "
              << tuned.final_distance << "\n";
  }
  return 0;
}

int cmd_directions(const std::string& ckpt, const std::string& out, int64_t count, int64_t samples,
                   uint64_t seed) {
  auto sys = TrainingSystem::load_checkpoint(ckpt);
  std::vector<double> variances;
  auto dirs =
      pca_directions(sys->generator(), samples, count, uniform_class_sampler(*sys), seed, &variances);
  save_directions(dirs, out);
  std::cout << "wrote " << dirs.size() << " directions to " << out << "\nexplained variances:";
  for (double v : variances) std::cout << " " << v;
  std::cout << "\n";
  return 0;
}

int cmd_edit(const std::string& ckpt, const std::string& w_path, const std::string& dirs_path,
             int64_t index, double strength, const std::string& out) {
  auto sys = TrainingSystem::load_checkpoint(ckpt);
  Tensor w = load_style(w_path);
  auto dirs = load_directions(dirs_path);
  if (index < 0 || index >= static_cast<int64_t>(dirs.size())) {
    throw std::runtime_error("direction index out of range (file has " + std::to_string(dirs.size()) +
                             ")");
  }
  EditDirection dir = dirs[static_cast<size_t>(index)];
  dir.layer_hi = std::min(dir.layer_hi, sys->generator().layer_count() - 1);
  NoGradGuard ng;
  Var img = apply_latent_edit(Var(w), dir, strength, sys->generator());
  write_ppm(out, img.val().reshaped({3, img.shape()[2], img.shape()[3]}));
  std::cout << "wrote " << out << " (direction " << index << ", strength " << strength << ")\n";
  return 0;
}

int cmd_embed(const std::string& config_path, const std::string& out) {
  RunConfig cfg = load_config(config_path);
  if (cfg.dataset.path.empty()) throw std::runtime_error("config: dataset.path is required for embed");
  DatasetIndex index = ingest_dataset(cfg.dataset.path);
  DatasetLoader loader(index, cfg.seed);
  auto extractor = build_extractor(cfg.extractors[0]);
  auto table =
      compute_class_embeddings(loader.one_pass_source(extractor->input_resolution(), 16),
                               static_cast<int64_t>(index.class_names.size()), *extractor);
  save_embedding_table(table, out);
  std::cout << "wrote " << table.class_count << " class embeddings (dim " << table.dim << ") to "
            << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& real_dir, const std::string& fake_dir, const std::string& ckpt,
                 const std::string& dataset_path, const std::string& classifier_path,
                 const std::string& out, int64_t n_samples, uint64_t seed) {
  json report;
  RunConfig cfg;
  std::unique_ptr<TrainingSystem> sys;

  std::vector<Tensor> real_batches, fake_batches;
  int64_t resolution = 0;
  if (!ckpt.empty()) {
    sys = TrainingSystem::load_checkpoint(ckpt);
    cfg = sys->config();
    if (dataset_path.empty()) throw std::runtime_error("evaluate: --dataset required with --checkpoint");
    resolution = sys->generator().resolution();
    DatasetIndex index = ingest_dataset(dataset_path);
    if (static_cast<int64_t>(index.class_names.size()) != sys->class_count()) {
      throw std::runtime_error("evaluate: dataset class count does not match the checkpoint");
    }
    DatasetLoader loader(index, seed);
    int64_t got = 0;
    while (got < n_samples) {
      int64_t b = std::min<int64_t>(16, n_samples - got);
      real_batches.push_back(loader.next_batch(b, resolution).images);
      got += b;
    }
    Rng lrng(derive_seed(seed, "eval.labels"));
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < n_samples; ++i) labels.push_back(lrng.uniform_int(0, sys->class_count() - 1));
    Tensor fakes = sys->generate(labels, 1.0, seed);
    for (int64_t off = 0; off < n_samples; off += 16) {
      int64_t b = std::min<int64_t>(16, n_samples - off);
      Tensor chunk({b, 3, resolution, resolution});
      std::memcpy(chunk.data(), fakes.data() + off * 3 * resolution * resolution,
                  sizeof(double) * static_cast<size_t>(chunk.numel()));
      fake_batches.push_back(chunk);
    }
    EqtConfig eqt_cfg;
    eqt_cfg.n_samples = cfg.metrics.eqt_samples;
    eqt_cfg.max_offset = cfg.metrics.eqt_max_offset;
    eqt_cfg.seed = seed;
    report["eqt_db"] = eq_t(sys->generator(), eqt_cfg);
  } else {
    if (real_dir.empty() || fake_dir.empty()) {
      throw std::runtime_error("evaluate: either --checkpoint/--dataset or --real/--fake is required");
    }
    auto real_images = read_image_dir(real_dir);
    auto fake_images = read_image_dir(fake_dir);
    if (real_images[0].shape() != fake_images[0].shape()) {
      throw std::runtime_error("evaluate: real and fake image resolutions do not match (" +
                               shape_str(real_images[0].shape()) + " vs " +
                               shape_str(fake_images[0].shape()) + ")");
    }
    resolution = real_images[0].size(1);
    real_batches = to_batches(real_images, 16);
    fake_batches = to_batches(fake_images, 16);
  }

  int64_t n_real = 0, n_fake = 0;
  for (auto& b : real_batches) n_real += b.size(0);
  for (auto& b : fake_batches) n_fake += b.size(0);

  // rFID: fixed-seed randomly initialized extractor, pooled deepest tap
  RandomConvExtractor rfid_net("rfid", cfg.metrics.rfid_input_resolution, cfg.metrics.rfid_channels,
                               cfg.metrics.rfid_seed);
  Tensor rf = extract_pooled_features(real_batches, rfid_net);
  Tensor ff = extract_pooled_features(fake_batches, rfid_net);
  report["rfid"] = {{"value", frechet_distance(compute_feature_stats(rf), compute_feature_stats(ff))},
                    {"extractor", "random-conv"},
                    {"seed", cfg.metrics.rfid_seed}};

  // FID on the configured (possibly pretrained) extractor's pooled tap
  auto fid_net = build_extractor(cfg.extractors[0]);
  Tensor rp = extract_pooled_features(real_batches, *fid_net);
  Tensor fp = extract_pooled_features(fake_batches, *fid_net);
  report["fid"] = {{"value", frechet_distance(compute_feature_stats(rp), compute_feature_stats(fp))},
                   {"extractor", fid_net->name()},
                   {"seed", cfg.extractors[0].seed}};

  // sFID on the second-shallowest spatial tap
  Tensor rs = extract_spatial_features(real_batches, *fid_net, cfg.metrics.sfid_max_dims);
  Tensor fsp = extract_spatial_features(fake_batches, *fid_net, cfg.metrics.sfid_max_dims);
  report["sfid"] = {{"value", frechet_distance(compute_feature_stats(rs), compute_feature_stats(fsp))},
                    {"extractor", fid_net->name()}};

  auto [prec, rec] = precision_recall(rp, fp, cfg.metrics.pr_neighbors);
  report["precision"] = prec;
  report["recall"] = rec;
  report["k_neighbors"] = cfg.metrics.pr_neighbors;

  if (!classifier_path.empty()) {
    SmallConvClassifier clf = SmallConvClassifier::load(classifier_path);
    NoGradGuard ng;
    int64_t row = 0;
    Tensor probs({n_fake, clf.class_count()});
    for (auto& b : fake_batches) {
      Tensor p = clf.probabilities(Var(b), true).val();
      std::memcpy(probs.data() + row * clf.class_count(), p.data(),
                  sizeof(double) * static_cast<size_t>(p.numel()));
      row += b.size(0);
    }
    report["is"] = inception_score(probs);
  } else {
    report["is"] = nullptr;
  }
  report["resolution"] = resolution;
  report["n_real"] = n_real;
  report["n_fake"] = n_fake;
  report["seed"] = seed;

  std::string text = report.dump(2);
  if (!out.empty()) {
    std::ofstream os(out);
    os << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"progressive projected-GAN trainer and toolchain"};
  app.require_subcommand(1);

  auto* sc_layer = app.add_subcommand("layerspec", "print the filter/growth schedule");
  int64_t start = 16, final_res = 1024;
  bool final_as_max = false;
  sc_layer->add_option("--start", start, "starting resolution");
  sc_layer->add_option("--final", final_res, "final resolution");
  sc_layer->add_flag("--final-as-max", final_as_max, "apply the reduced growth step at the last stage");

  auto* sc_train = app.add_subcommand("train", "train through the growth schedule");
  std::string config_path, resume;
  sc_train->add_option("--config", config_path, "run configuration (json)");
  sc_train->add_option("--resume", resume, "checkpoint to resume from");

  auto* sc_gen = app.add_subcommand("generate", "sample a per-class grid from a checkpoint");
  std::string ckpt, outdir = "samples";
  int64_t per_class = 4;
  double psi = 1.0;
  uint64_t seed = 0;
  sc_gen->add_option("--checkpoint", ckpt)->required();
  sc_gen->add_option("--out", outdir);
  sc_gen->add_option("--per-class", per_class);
  sc_gen->add_option("--psi", psi, "truncation factor");
  sc_gen->add_option("--seed", seed);

  auto* sc_inv = app.add_subcommand("invert", "latent-optimize a style code for an image");
  std::string image_path, classifier_path;
  bool pti = false;
  sc_inv->add_option("--checkpoint", ckpt)->required();
  sc_inv->add_option("--image", image_path)->required();
  sc_inv->add_option("--out", outdir);
  sc_inv->add_flag("--pti", pti, "follow up with pivotal tuning");
  sc_inv->add_option("--classifier", classifier_path, "classifier for class sampling");
  sc_inv->add_option("--seed", seed);

  auto* sc_dir = app.add_subcommand("directions", "emit PCA edit directions");
  std::string dirs_out = "directions.bin";
  int64_t count = 8, samples = 10000;
  sc_dir->add_option("--checkpoint", ckpt)->required();
  sc_dir->add_option("--out", dirs_out);
  sc_dir->add_option("--count", count);
  sc_dir->add_option("--samples", samples);
  sc_dir->add_option("--seed", seed);

  auto* sc_edit = app.add_subcommand("edit", "apply an edit direction to a style code");
  std::string w_path, dirs_path, edit_out = "edited.ppm";
  int64_t dir_index = 0;
  double strength = 1.0;
  sc_edit->add_option("--checkpoint", ckpt)->required();
  sc_edit->add_option("--w", w_path)->required();
  sc_edit->add_option("--directions", dirs_path)->required();
  sc_edit->add_option("--index", dir_index);
  sc_edit->add_option("--strength", strength);
  sc_edit->add_option("--out", edit_out);

  auto* sc_embed = app.add_subcommand("embed", "compute the pretrained class-embedding table");
  std::string embed_out = "embeddings.bin";
  sc_embed->add_option("--config", config_path)->required();
  sc_embed->add_option("--out", embed_out);

  auto* sc_eval = app.add_subcommand("evaluate", "metric report for a checkpoint or image folders");
  std::string real_dir, fake_dir, dataset_path, report_out;
  int64_t n_samples = 256;
  sc_eval->add_option("--real", real_dir);
  sc_eval->add_option("--fake", fake_dir);
  sc_eval->add_option("--checkpoint", ckpt);
  sc_eval->add_option("--dataset", dataset_path);
  sc_eval->add_option("--classifier", classifier_path);
  sc_eval->add_option("--out", report_out);
  sc_eval->add_option("--samples", n_samples);
  sc_eval->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems exit 1
  }

  try {
    if (*sc_layer) return cmd_layerspec(start, final_res, final_as_max);
    if (*sc_train) return cmd_train(config_path, resume);
    if (*sc_gen) return cmd_generate(ckpt, resolve_outdir(outdir), per_class, psi, seed);
    if (*sc_inv) return cmd_invert(ckpt, image_path, resolve_outdir(outdir), pti, classifier_path, seed);
    if (*sc_dir) return cmd_directions(ckpt, dirs_out, count, samples, seed);
    if (*sc_edit) return cmd_edit(ckpt, w_path, dirs_path, dir_index, strength, edit_out);
    if (*sc_embed) return cmd_embed(config_path, embed_out);
    if (*sc_eval)
      return cmd_evaluate(real_dir, fake_dir, ckpt, dataset_path, classifier_path, report_out,
                          n_samples, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
