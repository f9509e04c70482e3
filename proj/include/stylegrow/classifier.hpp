#pragma once

#include <string>

#include "stylegrow/nn.hpp"

namespace stylegrow {

// Compact conv classifier: guidance signal, class sampling for inversion,
// inception-style scoring, and the held-out judge in the smoke tests.
class SmallConvClassifier {
 public:
  SmallConvClassifier(int64_t input_resolution, int64_t class_count, int64_t base_channels,
                      uint64_t seed);

  // Images at any resolution; resized internally. detach_params freezes the
  // classifier (guidance: gradients reach the image only).
  Var logits(const Var& images, bool detach_params = false) const;
  Var probabilities(const Var& images, bool detach_params = false) const;

  int64_t class_count() const { return class_count_; }
  int64_t input_resolution() const { return input_res_; }
  int64_t base_channels() const { return base_channels_; }
  ParamRefs params();

  void save(const std::string& path) const;
  static SmallConvClassifier load(const std::string& path);

 private:
  int64_t input_res_;
  int64_t class_count_;
  int64_t base_channels_;
  std::vector<Conv2dLayer> convs_;
  Linear head_;
};

// One cross-entropy step over a labeled batch; returns the loss value.
double classifier_train_step(SmallConvClassifier& clf, Adam& opt, const Tensor& images,
                             const std::vector<int64_t>& labels);
double classifier_accuracy(const SmallConvClassifier& clf, const Tensor& images,
                           const std::vector<int64_t>& labels);
std::vector<int64_t> classifier_predict(const SmallConvClassifier& clf, const Tensor& images);

}  // namespace stylegrow
