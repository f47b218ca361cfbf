#include "poseflow/core_data.hpp"

#include <cmath>

#include "poseflow/errors.hpp"

namespace poseflow {

namespace {

void check_range(const Tensor& t, float lo, float hi, const char* what) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) throw ValidationError(std::string(what) + ": non-finite value");
    if (t[i] < lo || t[i] > hi) throw ValidationError(std::string(what) + ": value out of range");
  }
}

bool onehot_ok(const Tensor& t, bool allow_zero) {
  const int C = t.dim(0);
  const int64_t P = static_cast<int64_t>(t.dim(1)) * t.dim(2);
  for (int64_t p = 0; p < P; ++p) {
    float s = 0.f;
    for (int c = 0; c < C; ++c) {
      float v = t[c * P + p];
      if (v != 0.f && v != 1.f) return false;
      s += v;
    }
    if (!(s == 1.f || (allow_zero && s == 0.f))) return false;
  }
  return true;
}

}  // namespace

Image Image::make(Tensor t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ValidationError("image: expects [3,H,W]");
  if (t.dim(1) < 1 || t.dim(2) < 1)
    throw ValidationError("image: empty raster");
  // The divisible-by-64 requirement of the six-level encoders is enforced at
  // the network entry points and in validate_pair, not here: metrics and io
  // legitimately handle arbitrary rasters.
  check_range(t, -1.f, 1.f, "image");
  return Image{std::move(t)};
}

PoseMap PoseMap::make(Tensor parts, Tensor uv) {
  if (parts.rank() != 3) throw ValidationError("pose: parts expects [Np,H,W]");
  if (uv.rank() != 3 || uv.dim(0) != 2 || uv.dim(1) != parts.dim(1) || uv.dim(2) != parts.dim(2))
    throw ValidationError("pose: uv expects [2,H,W] matching parts");
  if (!onehot_ok(parts, false)) throw ValidationError("pose: parts must be one-hot per pixel");
  check_range(uv, 0.f, 1.f, "pose uv");
  return PoseMap{std::move(parts), std::move(uv)};
}

GarmentParsing GarmentParsing::make(Tensor t) {
  if (t.rank() != 3) throw ValidationError("garment: expects [Ng,H,W]");
  if (!onehot_ok(t, false)) throw ValidationError("garment: must be one-hot per pixel");
  return GarmentParsing{std::move(t)};
}

FlowPyramid FlowPyramid::make(std::vector<Tensor> levels) {
  if (levels.size() != kLevels) throw ValidationError("pyramid: expects exactly 6 levels");
  for (size_t l = 0; l < levels.size(); ++l) {
    const Tensor& t = levels[l];
    if (t.rank() != 3 || t.dim(0) != 2) throw ValidationError("pyramid: level expects [2,H,W]");
    if (!t.all_finite()) throw ValidationError("pyramid: non-finite flow");
    if (l > 0 && (t.dim(1) * 2 != levels[l - 1].dim(1) || t.dim(2) * 2 != levels[l - 1].dim(2)))
      throw ValidationError("pyramid: level dims must halve");
  }
  return FlowPyramid{std::move(levels)};
}

Tensor make_garment_residue(const Tensor& classes, const std::set<int>& excluded_classes) {
  const int Ng = classes.dim(0);
  for (int c : excluded_classes)
    if (c < 0 || c >= Ng) throw ValidationError("garment residue: class id out of range");
  Tensor out = classes;
  const int64_t P = static_cast<int64_t>(classes.dim(1)) * classes.dim(2);
  for (int c : excluded_classes)
    for (int64_t p = 0; p < P; ++p) out[c * P + p] = 0.f;
  return out;
}

Tensor garment_mask(const Tensor& classes, const std::set<int>& excluded_classes) {
  const int Ng = classes.dim(0), H = classes.dim(1), W = classes.dim(2);
  const int64_t P = static_cast<int64_t>(H) * W;
  Tensor mask({1, H, W});
  for (int64_t p = 0; p < P; ++p) {
    int best = 0;
    float bv = classes[p];
    for (int c = 1; c < Ng; ++c)
      if (classes[c * P + p] > bv) {
        bv = classes[c * P + p];
        best = c;
      }
    mask[p] = excluded_classes.count(best) ? 0.f : 1.f;
  }
  return mask;
}

Tensor make_image_residue(const Tensor& img, const Tensor& classes,
                          const std::set<int>& keep_classes, FillStrategy fill) {
  if (img.rank() != 3 || classes.rank() != 3 || img.dim(1) != classes.dim(1) ||
      img.dim(2) != classes.dim(2))
    throw ValidationError("image residue: shape mismatch");
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int Ng = classes.dim(0);
  const int64_t P = static_cast<int64_t>(H) * W;

  std::vector<char> kept(static_cast<size_t>(P), 0);
  int64_t kept_count = 0;
  for (int64_t p = 0; p < P; ++p) {
    int best = 0;
    float bv = classes[p];
    for (int c = 1; c < Ng; ++c)
      if (classes[c * P + p] > bv) {
        bv = classes[c * P + p];
        best = c;
      }
    if (keep_classes.count(best)) {
      kept[static_cast<size_t>(p)] = 1;
      ++kept_count;
    }
  }

  Tensor out = img;
  if (kept_count == P) return out;

  if (fill == FillStrategy::Mean || kept_count == 0) {
    for (int c = 0; c < C; ++c) {
      double mean = 0.0;
      if (kept_count > 0) {
        for (int64_t p = 0; p < P; ++p)
          if (kept[static_cast<size_t>(p)]) mean += img[c * P + p];
        mean /= static_cast<double>(kept_count);
      }
      for (int64_t p = 0; p < P; ++p)
        if (!kept[static_cast<size_t>(p)]) out[c * P + p] = static_cast<float>(mean);
    }
    return out;
  }

  // Jacobi iteration toward the harmonic fill; kept pixels are Dirichlet
  // boundary values. Deterministic and dependency-free.
  for (int c = 0; c < C; ++c) {
    std::vector<float> cur(static_cast<size_t>(P)), next(static_cast<size_t>(P));
    for (int64_t p = 0; p < P; ++p)
      cur[static_cast<size_t>(p)] = kept[static_cast<size_t>(p)] ? img[c * P + p] : 0.f;
    const int max_iters = 4 * (H + W);
    for (int it = 0; it < max_iters; ++it) {
      float max_delta = 0.f;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int64_t p = static_cast<int64_t>(y) * W + x;
          if (kept[static_cast<size_t>(p)]) {
            next[static_cast<size_t>(p)] = cur[static_cast<size_t>(p)];
            continue;
          }
          float acc = 0.f;
          int n = 0;
          if (y > 0) acc += cur[static_cast<size_t>(p - W)], ++n;
          if (y + 1 < H) acc += cur[static_cast<size_t>(p + W)], ++n;
          if (x > 0) acc += cur[static_cast<size_t>(p - 1)], ++n;
          if (x + 1 < W) acc += cur[static_cast<size_t>(p + 1)], ++n;
          const float v = n ? acc / static_cast<float>(n) : 0.f;
          max_delta = std::max(max_delta, std::fabs(v - cur[static_cast<size_t>(p)]));
          next[static_cast<size_t>(p)] = v;
        }
      cur.swap(next);
      if (max_delta < 1e-5f) break;
    }
    for (int64_t p = 0; p < P; ++p)
      if (!kept[static_cast<size_t>(p)]) out[c * P + p] = cur[static_cast<size_t>(p)];
  }
  return out;
}

Residues make_residues(const Image& img, const GarmentParsing& g,
                       const std::set<int>& kept_background_classes, FillStrategy fill) {
  // The classes kept in the image residue (background/face/hair) are exactly
  // the channels zeroed in the garment residue.
  Residues r;
  r.image_residue =
      Image{make_image_residue(img.data, g.classes, kept_background_classes, fill)};
  r.garment_residue = make_garment_residue(g.classes, kept_background_classes);
  return r;
}

namespace {

bool report(ValidationReport* r, const std::string& msg) {
  r->ok = false;
  r->violation = msg;
  return false;
}

bool check_image(const Image& im, const char* name, ValidationReport* r) {
  const Tensor& t = im.data;
  if (t.rank() != 3 || t.dim(0) != 3) return report(r, std::string(name) + ": not [3,H,W]");
  if (t.dim(1) % 64 || t.dim(2) % 64)
    return report(r, std::string(name) + ": dims not divisible by 64");
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i]) || t[i] < -1.f || t[i] > 1.f)
      return report(r, std::string(name) + ": value outside [-1,1]");
  return true;
}

}  // namespace

ValidationReport validate_pair(const SamplePair& p) {
  ValidationReport r;
  const int H = p.source_image.data.rank() == 3 ? p.source_image.data.dim(1) : -1;
  const int W = p.source_image.data.rank() == 3 ? p.source_image.data.dim(2) : -1;

  if (!check_image(p.source_image, "source image", &r)) return r;
  if (!check_image(p.target_image, "target image", &r)) return r;

  struct Named {
    const Tensor* t;
    const char* name;
    bool allow_zero;
    bool onehot;
  };
  const Named rasters[] = {
      {&p.source_pose.parts, "source pose parts", false, true},
      {&p.source_pose.uv, "source pose uv", false, false},
      {&p.source_garment.classes, "source garment", false, true},
      {&p.target_pose.parts, "target pose parts", false, true},
      {&p.target_pose.uv, "target pose uv", false, false},
      {&p.target_garment.classes, "target garment", false, true},
      {&p.target_residues.garment_residue, "garment residue", true, true},
  };
  for (const Named& n : rasters) {
    if (n.t->rank() != 3 || n.t->dim(1) != H || n.t->dim(2) != W)
      return report(&r, std::string(n.name) + ": dimension mismatch"), r;
    if (n.onehot) {
      if (!onehot_ok(*n.t, n.allow_zero))
        return report(&r, std::string(n.name) + ": one-hot violation"), r;
    } else {
      for (int64_t i = 0; i < n.t->numel(); ++i)
        if (!std::isfinite((*n.t)[i]) || (*n.t)[i] < 0.f || (*n.t)[i] > 1.f)
          return report(&r, std::string(n.name) + ": uv outside [0,1]"), r;
    }
  }
  if (!check_image(p.target_residues.image_residue, "image residue", &r)) return r;
  if (p.target_image.data.dim(1) != H || p.target_image.data.dim(2) != W)
    return report(&r, "target image: dimension mismatch"), r;
  return r;
}

}  // namespace poseflow
