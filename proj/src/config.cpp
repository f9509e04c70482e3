#include "stylegrow/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stylegrow/layerspec.hpp"

using nlohmann::json;

namespace stylegrow {

std::string loss_form_name(AdvLossForm f) {
  switch (f) {
    case AdvLossForm::Logistic: return "logistic";
    case AdvLossForm::Hinge: return "hinge";
    case AdvLossForm::SaturatingLogistic: return "saturating";
  }
  return "logistic";
}

AdvLossForm loss_form_from_name(const std::string& s) {
  if (s == "logistic") return AdvLossForm::Logistic;
  if (s == "hinge") return AdvLossForm::Hinge;
  if (s == "saturating") return AdvLossForm::SaturatingLogistic;
  throw std::invalid_argument("unknown loss form '" + s + "' (logistic|hinge|saturating)");
}

namespace {

size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

[[noreturn]] void unknown_key(const std::string& path, const std::string& key,
                              const std::vector<std::string>& known) {
  std::string best;
  size_t best_d = SIZE_MAX;
  for (const auto& k : known) {
    size_t d = edit_distance(key, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  std::ostringstream os;
  os << "unknown config key '" << (path.empty() ? key : path + "." + key) << "'";
  if (!best.empty()) os << " (nearest match: '" << best << "')";
  throw std::invalid_argument(os.str());
}

void check_keys(const json& obj, const std::string& path, const std::vector<std::string>& known) {
  if (!obj.is_object()) {
    throw std::invalid_argument("config: expected an object at '" + (path.empty() ? "<root>" : path) + "'");
  }
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      unknown_key(path, it.key(), known);
    }
  }
}

template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: type error at '" + (path.empty() ? std::string(key) : path + "." + key) +
                                "' (got " + std::string(obj.at(key).type_name()) + ")");
  }
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["dataset"] = {{"path", dataset.path}, {"class_count", dataset.class_count}};
  j["schedule"] = {{"start_resolution", schedule.start_resolution},
                   {"final_resolution", schedule.final_resolution},
                   {"batch_divisor", schedule.batch_divisor},
                   {"max_target", schedule.max_target},
                   {"treat_final_as_max", schedule.treat_final_as_max}};
  j["generator"] = {{"latent_dim", generator.latent_dim},
                    {"style_dim", generator.style_dim},
                    {"mapping_layers", generator.mapping_layers},
                    {"mapping_lr_mul", generator.mapping_lr_mul},
                    {"fourier_channels", generator.fourier_channels},
                    {"channel_base", generator.channel_base},
                    {"channel_min", generator.channel_min},
                    {"channel_max", generator.channel_max},
                    {"margin", generator.margin},
                    {"taps_per_factor", generator.taps_per_factor},
                    {"alias_filters", generator.alias_filters}};
  j["discriminator"] = {{"base_channels", discriminator.base_channels},
                        {"max_channels", discriminator.max_channels},
                        {"sn_iterations", discriminator.sn_iterations}};
  j["conditioning"] = {{"normalize_embeddings", conditioning.normalize_embeddings},
                       {"table_path", conditioning.table_path}};
  j["extractors"] = json::array();
  for (const auto& e : extractors) {
    j["extractors"].push_back({{"type", e.type},
                               {"name", e.name},
                               {"input_resolution", e.input_resolution},
                               {"channels", e.channels},
                               {"seed", e.seed},
                               {"weights_path", e.weights_path}});
  }
  j["training"] = {{"loss_form", training.loss_form},
                   {"guidance",
                    {{"lambda", training.guidance.lambda},
                     {"gate_resolution", training.guidance.gate_resolution},
                     {"classifier_path", training.guidance.classifier_path}}},
                   {"blur_sigma", training.blur_sigma},
                   {"blur_cutoff_images", training.blur_cutoff_images},
                   {"blur_linear_ramp", training.blur_linear_ramp},
                   {"pl_threshold_images", training.pl_threshold_images},
                   {"pl_weight", training.pl_weight},
                   {"pl_decay", training.pl_decay},
                   {"g_lr", training.g_lr},
                   {"d_lr", training.d_lr},
                   {"adam_beta1", training.adam_beta1},
                   {"adam_beta2", training.adam_beta2},
                   {"ema", training.ema},
                   {"ema_halflife_images", training.ema_halflife_images},
                   {"augment", training.augment},
                   {"augment_generated", training.augment_generated},
                   {"stage_image_cap", training.stage_image_cap},
                   {"eval_interval_images", training.eval_interval_images},
                   {"plateau_patience", training.plateau_patience},
                   {"plateau_min_rel_improvement", training.plateau_min_rel_improvement},
                   {"eval_samples", training.eval_samples},
                   {"eval_batch", training.eval_batch},
                   {"divergence_factor", training.divergence_factor}};
  j["metrics"] = {{"rfid_seed", metrics.rfid_seed},
                  {"rfid_channels", metrics.rfid_channels},
                  {"rfid_input_resolution", metrics.rfid_input_resolution},
                  {"sfid_max_dims", metrics.sfid_max_dims},
                  {"pr_neighbors", metrics.pr_neighbors},
                  {"eqt_samples", metrics.eqt_samples},
                  {"eqt_max_offset", metrics.eqt_max_offset}};
  return j.dump(2);
}

RunConfig parse_config(const std::string& json_text, const std::string& origin) {
  std::string text = json_text;
  // an empty file means "all defaults"
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) text = "{}";
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + origin + ": " + e.what());
  }

  RunConfig cfg;
  check_keys(j, "", {"seed", "output_dir", "dataset", "schedule", "generator", "discriminator",
                     "conditioning", "extractors", "training", "metrics"});
  read(j, "", "seed", cfg.seed);
  read(j, "", "output_dir", cfg.output_dir);

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d, "dataset", {"path", "class_count"});
    read(d, "dataset", "path", cfg.dataset.path);
    read(d, "dataset", "class_count", cfg.dataset.class_count);
  }
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    check_keys(s, "schedule",
               {"start_resolution", "final_resolution", "batch_divisor", "max_target", "treat_final_as_max"});
    read(s, "schedule", "start_resolution", cfg.schedule.start_resolution);
    read(s, "schedule", "final_resolution", cfg.schedule.final_resolution);
    read(s, "schedule", "batch_divisor", cfg.schedule.batch_divisor);
    read(s, "schedule", "max_target", cfg.schedule.max_target);
    read(s, "schedule", "treat_final_as_max", cfg.schedule.treat_final_as_max);
  }
  if (j.contains("generator")) {
    const json& g = j["generator"];
    check_keys(g, "generator",
               {"latent_dim", "style_dim", "mapping_layers", "mapping_lr_mul", "fourier_channels",
                "channel_base", "channel_min", "channel_max", "margin", "taps_per_factor", "alias_filters"});
    read(g, "generator", "latent_dim", cfg.generator.latent_dim);
    read(g, "generator", "style_dim", cfg.generator.style_dim);
    read(g, "generator", "mapping_layers", cfg.generator.mapping_layers);
    read(g, "generator", "mapping_lr_mul", cfg.generator.mapping_lr_mul);
    read(g, "generator", "fourier_channels", cfg.generator.fourier_channels);
    read(g, "generator", "channel_base", cfg.generator.channel_base);
    read(g, "generator", "channel_min", cfg.generator.channel_min);
    read(g, "generator", "channel_max", cfg.generator.channel_max);
    read(g, "generator", "margin", cfg.generator.margin);
    read(g, "generator", "taps_per_factor", cfg.generator.taps_per_factor);
    read(g, "generator", "alias_filters", cfg.generator.alias_filters);
  }
  if (j.contains("discriminator")) {
    const json& d = j["discriminator"];
    check_keys(d, "discriminator", {"base_channels", "max_channels", "sn_iterations"});
    read(d, "discriminator", "base_channels", cfg.discriminator.base_channels);
    read(d, "discriminator", "max_channels", cfg.discriminator.max_channels);
    read(d, "discriminator", "sn_iterations", cfg.discriminator.sn_iterations);
  }
  if (j.contains("conditioning")) {
    const json& c = j["conditioning"];
    check_keys(c, "conditioning", {"normalize_embeddings", "table_path"});
    read(c, "conditioning", "normalize_embeddings", cfg.conditioning.normalize_embeddings);
    read(c, "conditioning", "table_path", cfg.conditioning.table_path);
  }
  if (j.contains("extractors")) {
    if (!j["extractors"].is_array() || j["extractors"].empty()) {
      throw std::invalid_argument("config: 'extractors' must be a nonempty array");
    }
    cfg.extractors.clear();
    int64_t idx = 0;
    for (const json& e : j["extractors"]) {
      std::string path = "extractors[" + std::to_string(idx++) + "]";
      check_keys(e, path, {"type", "name", "input_resolution", "channels", "seed", "weights_path"});
      ExtractorSpec spec;
      read(e, path, "type", spec.type);
      read(e, path, "name", spec.name);
      read(e, path, "input_resolution", spec.input_resolution);
      read(e, path, "channels", spec.channels);
      read(e, path, "seed", spec.seed);
      read(e, path, "weights_path", spec.weights_path);
      if (spec.type != "conv" && spec.type != "attention") {
        throw std::invalid_argument("config: " + path + ".type must be conv|attention");
      }
      cfg.extractors.push_back(std::move(spec));
    }
  }
  if (j.contains("training")) {
    const json& t = j["training"];
    check_keys(t, "training",
               {"loss_form", "guidance", "blur_sigma", "blur_cutoff_images", "blur_linear_ramp",
                "pl_threshold_images", "pl_weight", "pl_decay", "g_lr", "d_lr", "adam_beta1",
                "adam_beta2", "ema", "ema_halflife_images", "augment", "augment_generated",
                "stage_image_cap", "eval_interval_images", "plateau_patience",
                "plateau_min_rel_improvement", "eval_samples", "eval_batch", "divergence_factor"});
    read(t, "training", "loss_form", cfg.training.loss_form);
    if (t.contains("guidance")) {
      const json& g = t["guidance"];
      check_keys(g, "training.guidance", {"lambda", "gate_resolution", "classifier_path"});
      read(g, "training.guidance", "lambda", cfg.training.guidance.lambda);
      read(g, "training.guidance", "gate_resolution", cfg.training.guidance.gate_resolution);
      read(g, "training.guidance", "classifier_path", cfg.training.guidance.classifier_path);
    }
    read(t, "training", "blur_sigma", cfg.training.blur_sigma);
    read(t, "training", "blur_cutoff_images", cfg.training.blur_cutoff_images);
    read(t, "training", "blur_linear_ramp", cfg.training.blur_linear_ramp);
    read(t, "training", "pl_threshold_images", cfg.training.pl_threshold_images);
    read(t, "training", "pl_weight", cfg.training.pl_weight);
    read(t, "training", "pl_decay", cfg.training.pl_decay);
    read(t, "training", "g_lr", cfg.training.g_lr);
    read(t, "training", "d_lr", cfg.training.d_lr);
    read(t, "training", "adam_beta1", cfg.training.adam_beta1);
    read(t, "training", "adam_beta2", cfg.training.adam_beta2);
    read(t, "training", "ema", cfg.training.ema);
    read(t, "training", "ema_halflife_images", cfg.training.ema_halflife_images);
    read(t, "training", "augment", cfg.training.augment);
    read(t, "training", "augment_generated", cfg.training.augment_generated);
    read(t, "training", "stage_image_cap", cfg.training.stage_image_cap);
    read(t, "training", "eval_interval_images", cfg.training.eval_interval_images);
    read(t, "training", "plateau_patience", cfg.training.plateau_patience);
    read(t, "training", "plateau_min_rel_improvement", cfg.training.plateau_min_rel_improvement);
    read(t, "training", "eval_samples", cfg.training.eval_samples);
    read(t, "training", "eval_batch", cfg.training.eval_batch);
    read(t, "training", "divergence_factor", cfg.training.divergence_factor);
  }
  if (j.contains("metrics")) {
    const json& m = j["metrics"];
    check_keys(m, "metrics",
               {"rfid_seed", "rfid_channels", "rfid_input_resolution", "sfid_max_dims", "pr_neighbors",
                "eqt_samples", "eqt_max_offset"});
    read(m, "metrics", "rfid_seed", cfg.metrics.rfid_seed);
    read(m, "metrics", "rfid_channels", cfg.metrics.rfid_channels);
    read(m, "metrics", "rfid_input_resolution", cfg.metrics.rfid_input_resolution);
    read(m, "metrics", "sfid_max_dims", cfg.metrics.sfid_max_dims);
    read(m, "metrics", "pr_neighbors", cfg.metrics.pr_neighbors);
    read(m, "metrics", "eqt_samples", cfg.metrics.eqt_samples);
    read(m, "metrics", "eqt_max_offset", cfg.metrics.eqt_max_offset);
  }

  // semantic validation
  (void)loss_form_from_name(cfg.training.loss_form);
  if (!is_power_of_two(cfg.schedule.start_resolution) || !is_power_of_two(cfg.schedule.final_resolution) ||
      cfg.schedule.start_resolution < 16 || cfg.schedule.start_resolution > cfg.schedule.final_resolution) {
    throw std::invalid_argument("config: schedule resolutions must be powers of two, 16 <= start <= final");
  }
  if (cfg.schedule.batch_divisor < 1) throw std::invalid_argument("config: schedule.batch_divisor must be >= 1");
  if (cfg.training.guidance.lambda < 0) throw std::invalid_argument("config: training.guidance.lambda must be >= 0");
  if (cfg.training.blur_sigma < 0) throw std::invalid_argument("config: training.blur_sigma must be >= 0");
  if (cfg.generator.latent_dim < 1 || cfg.generator.style_dim < 1) {
    throw std::invalid_argument("config: generator dimensions must be positive");
  }
  if (cfg.training.plateau_patience < 1) throw std::invalid_argument("config: plateau_patience must be >= 1");
  if (!cfg.dataset.path.empty() && !std::filesystem::exists(cfg.dataset.path)) {
    throw std::invalid_argument("config: dataset path does not exist: " + cfg.dataset.path);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config file not found: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str(), path);
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << cfg.to_json() << "\n";
}

}  // namespace stylegrow
