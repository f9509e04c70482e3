#include "stylegrow/classifier.hpp"

#include <cmath>

#include "stylegrow/blob_io.hpp"

namespace stylegrow {

namespace {
constexpr uint32_t kClassifierMagic = 0x5347434c;  // "SGCL"
}

SmallConvClassifier::SmallConvClassifier(int64_t input_resolution, int64_t class_count,
                                         int64_t base_channels, uint64_t seed)
    : input_res_(input_resolution), class_count_(class_count), base_channels_(base_channels) {
  if (input_resolution % 8 != 0) {
    throw std::invalid_argument("SmallConvClassifier: input resolution must be divisible by 8");
  }
  Rng rng(derive_seed(seed, "classifier"));
  int64_t chans[4] = {3, base_channels, 2 * base_channels, 4 * base_channels};
  for (int i = 0; i < 3; ++i) {
    convs_.emplace_back("clf.conv" + std::to_string(i), chans[i], chans[i + 1], 3, 2, rng);
  }
  head_ = Linear("clf.head", chans[3], class_count, rng);
}

Var SmallConvClassifier::logits(const Var& images, bool detach_params) const {
  Var x = images;
  if (x.size(2) != input_res_ || x.size(3) != input_res_) x = bilinear_resize(x, input_res_, input_res_);
  for (const auto& c : convs_) {
    Var w = detach_params ? c.weight.value.detach() : c.weight.value;
    Var b = detach_params ? c.bias.value.detach() : c.bias.value;
    Var y = conv2d(pad2d(x, c.pad, c.pad, c.pad, c.pad), mul(w, c.wscale), c.stride, 1);
    y = add(y, reshape(b, {1, b.size(0), 1, 1}));
    x = mul(leaky_relu(y, 0.2), 1.4142135623730951);
  }
  return head_.forward(global_avg_pool(x), detach_params);
}

Var SmallConvClassifier::probabilities(const Var& images, bool detach_params) const {
  return softmax_rows(logits(images, detach_params));
}

ParamRefs SmallConvClassifier::params() {
  ParamRefs out;
  for (auto& c : convs_) c.collect(out);
  head_.collect(out);
  return out;
}

void SmallConvClassifier::save(const std::string& path) const {
  BlobFile f;
  f.text = "{\"input_resolution\":" + std::to_string(input_res_) +
           ",\"class_count\":" + std::to_string(class_count_) +
           ",\"base_channels\":" + std::to_string(base_channels_) + "}";
  for (const auto& c : convs_) {
    f.blobs.emplace_back(c.weight.name, c.weight.value.val());
    f.blobs.emplace_back(c.bias.name, c.bias.value.val());
  }
  f.blobs.emplace_back(head_.weight.name, head_.weight.value.val());
  f.blobs.emplace_back(head_.bias.name, head_.bias.value.val());
  write_blob_file(path, kClassifierMagic, f);
}

SmallConvClassifier SmallConvClassifier::load(const std::string& path) {
  BlobFile f = read_blob_file(path, kClassifierMagic, 1);
  auto grab = [&](const char* key) {
    size_t p = f.text.find(key);
    if (p == std::string::npos) throw std::runtime_error("classifier file missing " + std::string(key));
    p = f.text.find(':', p);
    return std::stoll(f.text.substr(p + 1));
  };
  SmallConvClassifier clf(grab("input_resolution"), grab("class_count"), grab("base_channels"), 0);
  for (Param* p : clf.params()) {
    const Tensor* t = f.find(p->name);
    if (!t) throw std::runtime_error("classifier file missing blob " + p->name);
    if (t->shape() != p->value.shape()) throw std::runtime_error("classifier blob shape mismatch: " + p->name);
    p->value.set_value(t->clone());
  }
  return clf;
}

double classifier_train_step(SmallConvClassifier& clf, Adam& opt, const Tensor& images,
                             const std::vector<int64_t>& labels) {
  Var p = clf.probabilities(Var(images));
  int64_t n = p.size(0), c = p.size(1);
  Tensor mask({n, c});
  for (int64_t i = 0; i < n; ++i) mask.at({i, labels[static_cast<size_t>(i)]}) = 1.0;
  Var picked = sum(mul(p, constant(mask)), {1}, false);
  Var loss = neg(mean(log(add(picked, 1e-12))));
  ParamRefs params = clf.params();
  std::vector<Var> wrt;
  for (Param* pp : params) wrt.push_back(pp->value);
  auto gs = grad(loss, wrt);
  opt.step(params, gs);
  return loss.item();
}

std::vector<int64_t> classifier_predict(const SmallConvClassifier& clf, const Tensor& images) {
  NoGradGuard ng;
  Var l = clf.logits(Var(images), true);
  std::vector<int64_t> out;
  for (int64_t i = 0; i < l.size(0); ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < l.size(1); ++j) {
      if (l.val().at({i, j}) > l.val().at({i, best})) best = j;
    }
    out.push_back(best);
  }
  return out;
}

double classifier_accuracy(const SmallConvClassifier& clf, const Tensor& images,
                           const std::vector<int64_t>& labels) {
  auto pred = classifier_predict(clf, images);
  int64_t hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace stylegrow
