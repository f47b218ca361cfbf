#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseflow {

// Dense float32 tensor, row-major, rank 0..4. Rasters use CHW layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.f);
  }
  Tensor(std::vector<int> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != count(shape_))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static Tensor full(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor scalar(float v) { return full({1}, v); }
  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // CHW accessors for rank-3 rasters.
  float& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  float at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  // Rank-4 accessor (conv weights [Co,Ci,kh,kw]).
  float& at4(int a, int b, int c, int d) {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  float at4(int a, int b, int c, int d) const {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  void add_(const Tensor& o) {
    for (int64_t i = 0; i < numel(); ++i) data_[static_cast<size_t>(i)] += o[i];
  }
  void scale_(float s) {
    for (auto& x : data_) x *= s;
  }
  void fill_(float v) {
    for (auto& x : data_) x = v;
  }
  bool all_finite() const;
  float max_abs() const;

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor: nonpositive dim");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  static std::string shape_str(const std::vector<int>& shape);

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

// Deterministic RNG wrapper; every randomized routine takes one of these
// explicitly so runs are reproducible from a single seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}
  float uniform(float lo = 0.f, float hi = 1.f) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(gen_);
  }
  double uniform_d(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  float normal(float mean = 0.f, float stdev = 1.f) {
    std::normal_distribution<float> d(mean, stdev);
    return d(gen_);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
  }
  uint64_t next_u64() { return gen_(); }
  // Derive an independent child stream.
  Rng fork() { return Rng(gen_() ^ 0x9e3779b97f4a7c15ull); }

 private:
  std::mt19937_64 gen_;
};

Tensor random_uniform(Rng& rng, std::vector<int> shape, float lo, float hi);
Tensor random_normal(Rng& rng, std::vector<int> shape, float mean, float stdev);

}  // namespace poseflow
