#include "poseflow/feature_extractor.hpp"

#include <cmath>
#include <utility>

#include "poseflow/errors.hpp"

namespace poseflow {

namespace {

Tensor kaiming(Rng& rng, int co, int ci, int k) {
  float stdev = std::sqrt(2.f / (float(ci) * float(k) * float(k)));
  return random_normal(rng, {co, ci, k, k}, 0.f, stdev);
}

FeatureStage conv_stage(Rng& rng, std::string name, int ci, int co, int k,
                        int stride, int pad, bool pool_before, bool tap) {
  FeatureStage s;
  s.name = std::move(name);
  s.w = kaiming(rng, co, ci, k);
  s.b = Tensor::full({co}, 0.f);
  s.stride = stride;
  s.pad = pad;
  s.pool_before = pool_before;
  s.tap = tap;
  return s;
}

}  // namespace

FeatureExtractor::FeatureExtractor(std::vector<FeatureStage> stages,
                                   StageActivation act, FeatureBackend backend)
    : stages_(std::move(stages)), act_(act), backend_(backend) {
  for (const auto& s : stages_) {
    if (s.w.rank() != 4 || s.b.rank() != 1 || s.b.dim(0) != s.w.dim(0))
      throw ValidationError("feature extractor: inconsistent stage tensors");
    if (s.tap) ++num_taps_;
  }
  if (num_taps_ == 0)
    throw ValidationError("feature extractor: no tap stages");
}

FeatureExtractor FeatureExtractor::make_random(uint64_t seed) {
  Rng rng(seed);
  std::vector<FeatureStage> st;
  const int widths[5] = {16, 32, 64, 64, 64};
  int ci = 3;
  for (int i = 0; i < 5; ++i) {
    st.push_back(conv_stage(rng, "stage" + std::to_string(i), ci, widths[i],
                            3, /*stride=*/2, /*pad=*/1, false, /*tap=*/true));
    ci = widths[i];
  }
  return FeatureExtractor(std::move(st), StageActivation::Tanh,
                          FeatureBackend::RandomStack);
}

FeatureExtractor FeatureExtractor::make_vgg16(uint64_t seed) {
  Rng rng(seed);
  std::vector<FeatureStage> st;
  // name, in, out, pool_before, tap
  struct Row { const char* name; int ci, co; bool pool, tap; };
  const Row rows[] = {
      {"conv1_1", 3, 64, false, false},   {"conv1_2", 64, 64, false, true},
      {"conv2_1", 64, 128, true, false},  {"conv2_2", 128, 128, false, true},
      {"conv3_1", 128, 256, true, false}, {"conv3_2", 256, 256, false, true},
      {"conv3_3", 256, 256, false, false},
      {"conv4_1", 256, 512, true, false}, {"conv4_2", 512, 512, false, true},
      {"conv4_3", 512, 512, false, true},
  };
  for (const Row& r : rows)
    st.push_back(conv_stage(rng, r.name, r.ci, r.co, 3, 1, 1, r.pool, r.tap));
  return FeatureExtractor(std::move(st), StageActivation::Relu,
                          FeatureBackend::Vgg16);
}

void FeatureExtractor::load_weights(const std::map<std::string, Tensor>& named) {
  for (const auto& [name, t] : named) {
    bool found = false;
    for (auto& s : stages_) {
      Tensor* dst = nullptr;
      if (name == s.name + ".w") dst = &s.w;
      else if (name == s.name + ".b") dst = &s.b;
      if (!dst) continue;
      if (!dst->same_shape(t))
        throw CheckpointError("feature extractor: shape mismatch for " + name +
                              " (have " + Tensor::shape_str(dst->shape()) +
                              ", got " + Tensor::shape_str(t.shape()) + ")");
      *dst = t;
      found = true;
      break;
    }
    if (!found)
      throw CheckpointError("feature extractor: unknown weight " + name);
  }
}

const char* FeatureExtractor::backend_name() const {
  return backend_ == FeatureBackend::RandomStack ? "random-stack" : "vgg16";
}

std::vector<Var> FeatureExtractor::features(Var image) const {
  Tape& tape = *image.tape;
  std::vector<Var> taps;
  Var x = image;
  for (const auto& s : stages_) {
    if (s.pool_before) x = maxpool2x2(x);
    Var w = tape.constant(s.w);
    Var b = tape.constant(s.b);
    x = conv2d(x, w, b, s.stride, s.pad);
    x = act_ == StageActivation::Tanh ? tanh_v(x) : relu(x);
    if (s.tap) taps.push_back(x);
  }
  return taps;
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& image) const {
  Tape tape;
  std::vector<Var> taps = features(tape.constant(image));
  std::vector<Tensor> out;
  out.reserve(taps.size());
  for (Var v : taps) out.push_back(tape.val(v));
  return out;
}

}  // namespace poseflow
