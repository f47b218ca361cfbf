#include "poseflow/augment.hpp"

#include <algorithm>
#include <cmath>

#include "poseflow/errors.hpp"

namespace poseflow {

void AugRanges::validate() const {
  if (rotation_deg < 0.f) throw ConfigError("aug: rotation_deg must be >= 0");
  if (!(scale_lo > 0.f) || scale_lo > scale_hi)
    throw ConfigError("aug: need 0 < scale_lo <= scale_hi");
  if (translate_frac < 0.f || translate_frac > 1.f)
    throw ConfigError("aug: translate_frac must be in [0,1]");
  if (flip_p < 0.f || flip_p > 1.f)
    throw ConfigError("aug: flip_p must be in [0,1]");
  if (!(crop_min_frac > 0.f) || crop_min_frac > 1.f)
    throw ConfigError("aug: crop_min_frac must be in (0,1]");
}

AugTheta sample_theta(const AugRanges& r, int height, int width, Rng& rng) {
  r.validate();
  AugTheta t;
  t.rotation_deg = rng.uniform(-r.rotation_deg, r.rotation_deg);
  t.scale = rng.uniform(r.scale_lo, r.scale_hi);
  t.translate_x = rng.uniform(-r.translate_frac, r.translate_frac) * float(width);
  t.translate_y = rng.uniform(-r.translate_frac, r.translate_frac) * float(height);
  t.flip = rng.uniform(0.f, 1.f) < r.flip_p;
  if (r.crop_min_frac < 1.f) {
    t.crop_w = rng.uniform(r.crop_min_frac, 1.f) * float(width);
    t.crop_h = rng.uniform(r.crop_min_frac, 1.f) * float(height);
    t.crop_x = rng.uniform(0.f, float(width) - t.crop_w);
    t.crop_y = rng.uniform(0.f, float(height) - t.crop_h);
  }
  return t;
}

namespace {

inline int clampi(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

inline float sample_bilinear(const Tensor& r, int c, float xs, float ys,
                             int H, int W) {
  const int x0 = static_cast<int>(std::floor(xs));
  const int y0 = static_cast<int>(std::floor(ys));
  const float fx = xs - x0, fy = ys - y0;
  const int x0c = clampi(x0, W - 1), x1c = clampi(x0 + 1, W - 1);
  const int y0c = clampi(y0, H - 1), y1c = clampi(y0 + 1, H - 1);
  const float v00 = r.at(c, y0c, x0c), v01 = r.at(c, y0c, x1c);
  const float v10 = r.at(c, y1c, x0c), v11 = r.at(c, y1c, x1c);
  return (1.f - fy) * ((1.f - fx) * v00 + fx * v01) +
         fy * ((1.f - fx) * v10 + fx * v11);
}

}  // namespace

Tensor apply_aug(const Tensor& raster, const AugTheta& th, ResampleKind kind) {
  if (raster.rank() != 3)
    throw ValidationError("apply_aug: raster must be rank 3 (CHW)");
  const int C = raster.dim(0), H = raster.dim(1), W = raster.dim(2);
  const float cw = th.crop_w > 0.f ? th.crop_w : float(W);
  const float ch = th.crop_h > 0.f ? th.crop_h : float(H);
  const float rad = th.rotation_deg * 3.14159265358979323846f / 180.f;
  const float cs = std::cos(rad), sn = std::sin(rad);
  const float cx = 0.5f * float(W - 1), cy = 0.5f * float(H - 1);
  if (!(th.scale > 0.f)) throw ValidationError("apply_aug: scale must be > 0");
  const float inv_s = 1.f / th.scale;
  Tensor out({C, H, W});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const float xo = th.flip ? float(W - 1 - x) : float(x);
      // invert the affine part about the image center
      const float dx = xo - cx - th.translate_x;
      const float dy = float(y) - cy - th.translate_y;
      const float xa = (cs * dx + sn * dy) * inv_s + cx;
      const float ya = (-sn * dx + cs * dy) * inv_s + cy;
      // the crop box is what the full frame shows: map into it
      const float xs = th.crop_x + (xa + 0.5f) * (cw / float(W)) - 0.5f;
      const float ys = th.crop_y + (ya + 0.5f) * (ch / float(H)) - 0.5f;
      if (kind == ResampleKind::Nearest) {
        const int xi = clampi(static_cast<int>(std::lrintf(xs)), W - 1);
        const int yi = clampi(static_cast<int>(std::lrintf(ys)), H - 1);
        for (int c = 0; c < C; ++c) out.at(c, y, x) = raster.at(c, yi, xi);
      } else {
        for (int c = 0; c < C; ++c)
          out.at(c, y, x) = sample_bilinear(raster, c, xs, ys, H, W);
      }
    }
  }
  return out;
}

Image apply_aug(const Image& img, const AugTheta& theta) {
  return Image::make(apply_aug(img.data, theta, ResampleKind::Bilinear));
}

PoseMap apply_aug(const PoseMap& pose, const AugTheta& theta) {
  return PoseMap::make(apply_aug(pose.parts, theta, ResampleKind::Nearest),
                       apply_aug(pose.uv, theta, ResampleKind::Bilinear));
}

GarmentParsing apply_aug(const GarmentParsing& g, const AugTheta& theta) {
  return GarmentParsing::make(apply_aug(g.classes, theta, ResampleKind::Nearest));
}

SamplePair maybe_substitute(const SamplePair& sample, const SelfSupConfig& cfg,
                            Rng& rng) {
  if (cfg.ratio < 0.f || cfg.ratio > 1.f)
    throw ConfigError("selfsup: ratio must be in [0,1]");
  const float eps = rng.uniform(0.f, 1.f);
  if (eps >= cfg.ratio) return sample;
  SamplePair out = sample;
  if (cfg.direction == SubstituteDirection::TargetFromSource) {
    const AugTheta theta = sample_theta(cfg.ranges, sample.source_image.height(),
                                        sample.source_image.width(), rng);
    out.target_image = apply_aug(sample.source_image, theta);
    out.target_pose = apply_aug(sample.source_pose, theta);
    out.target_garment = apply_aug(sample.source_garment, theta);
    out.target_residues = make_residues(out.target_image, out.target_garment,
                                        cfg.residue_background_classes, cfg.fill);
  } else {
    const AugTheta theta = sample_theta(cfg.ranges, sample.target_image.height(),
                                        sample.target_image.width(), rng);
    out.source_image = apply_aug(sample.target_image, theta);
    out.source_pose = apply_aug(sample.target_pose, theta);
    out.source_garment = apply_aug(sample.target_garment, theta);
  }
  return out;
}

}  // namespace poseflow
