#include <array>
#include <cmath>
#include <vector>

#include "poseflow/errors.hpp"
#include "poseflow/toydata.hpp"

namespace poseflow {

namespace {

constexpr float kPi = 3.14159265358979323846f;
constexpr int kBodyParts = 6;  // torso, head, left/right arm, left/right leg

struct Rect {
  float x0, y0, x1, y1;
  bool contains(float x, float y) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }
  float edge_distance(float x, float y) const {
    return std::min(std::min(x - x0, x1 - x), std::min(y - y0, y1 - y));
  }
};

// p' = (a x + b y + tx, c x + d y + ty).
struct Affine {
  float a = 1.f, b = 0.f, tx = 0.f;
  float c = 0.f, d = 1.f, ty = 0.f;
  void apply(float x, float y, float& ox, float& oy) const {
    ox = a * x + b * y + tx;
    oy = c * x + d * y + ty;
  }
};

// Rotation by deg about (ax, ay), then translation by (tx, ty).
Affine rotate_about(float ax, float ay, float deg, float tx, float ty) {
  const float r = deg * kPi / 180.f;
  const float co = std::cos(r), si = std::sin(r);
  Affine m;
  m.a = co;
  m.b = -si;
  m.c = si;
  m.d = co;
  m.tx = ax - co * ax + si * ay + tx;
  m.ty = ay - si * ax - co * ay + ty;
  return m;
}

struct PartLayout {
  Rect rect;            // source quad, base-64 units
  float ax, ay;         // anchor joint, base-64 units
  int pose_channel;     // part index + 1 (0 is background)
};

// Base-64 figure: torso with head above, arms at the sides, legs below.
const std::array<PartLayout, kBodyParts>& base_layout() {
  static const std::array<PartLayout, kBodyParts> parts = {{
      {{24.f, 18.f, 40.f, 38.f}, 32.f, 28.f, 1},  // torso
      {{27.f, 6.f, 37.f, 17.f}, 32.f, 17.f, 2},   // head
      {{18.f, 19.f, 24.f, 35.f}, 24.f, 20.f, 3},  // left arm
      {{40.f, 19.f, 46.f, 35.f}, 40.f, 20.f, 4},  // right arm
      {{25.f, 38.f, 31.5f, 56.f}, 28.f, 38.f, 5}, // left leg
      {{32.5f, 38.f, 39.f, 56.f}, 36.f, 38.f, 6}, // right leg
  }};
  return parts;
}

// Overlaps go to head, then arms, then legs, then torso.
constexpr std::array<int, kBodyParts> kPriority = {1, 2, 3, 4, 5, 0};

// Garment class per part and part-local position. Head splits into hair on
// top and face below; the torso's bottom band is the lower-body garment.
int garment_class(int part, float local_y01) {
  switch (part) {
    case 0: return local_y01 >= 0.8f ? 4 : 3;  // lower / upper
    case 1: return local_y01 < 0.35f ? 2 : 1;  // hair / face
    case 2:
    case 3: return 6;                          // arms
    default: return 7;                         // legs
  }
}

struct Textures {
  // Per part and channel: base color, two frequencies, two phases.
  std::array<std::array<std::array<float, 5>, 3>, kBodyParts> part;
  std::array<float, 3> bg_phase_x, bg_phase_y;
};

Textures draw_textures(Rng& rng, float scale) {
  Textures t;
  for (int k = 0; k < kBodyParts; ++k)
    for (int c = 0; c < 3; ++c) {
      auto& e = t.part[static_cast<size_t>(k)][static_cast<size_t>(c)];
      e[0] = rng.uniform(-0.25f, 0.55f);                 // base
      // Frequencies are capped at 0.5 rad/px so the bilinear resampling
      // error of a ground-truth warp (~ A*f^2/8 at the worst cell) keeps the
      // in-figure mean absolute error of warp-vs-target under 2/255.
      e[1] = rng.uniform(0.2f, 0.5f) / scale;            // fx
      e[2] = rng.uniform(0.2f, 0.5f) / scale;            // fy
      e[3] = rng.uniform(0.f, 2.f * kPi);                // px
      e[4] = rng.uniform(0.f, 2.f * kPi);                // py
    }
  for (int c = 0; c < 3; ++c) {
    t.bg_phase_x[static_cast<size_t>(c)] = rng.uniform(0.f, 2.f * kPi);
    t.bg_phase_y[static_cast<size_t>(c)] = rng.uniform(0.f, 2.f * kPi);
  }
  return t;
}

float background_color(const Textures& t, int c, float x, float y, int size) {
  const float fx = 2.f * kPi / float(size);
  return -0.2f +
         0.15f * std::sin(fx * x + t.bg_phase_x[static_cast<size_t>(c)]) +
         0.15f * std::cos(fx * y + t.bg_phase_y[static_cast<size_t>(c)]);
}

// Part color at source-local point q: the plaid pattern tapered into the
// background within `margin` of the quad edge, so the source raster is
// continuous and bilinear warps stay within interpolation error.
float part_color(const Textures& t, const Rect& rect, int part, int c,
                 float qx, float qy, float margin, int size) {
  const auto& e = t.part[static_cast<size_t>(part)][static_cast<size_t>(c)];
  const float plaid =
      e[0] + 0.35f * std::sin(e[1] * qx + e[3]) * std::sin(e[2] * qy + e[4]);
  const float bg = background_color(t, c, qx, qy, size);
  float w = rect.edge_distance(qx, qy) / margin;
  if (w > 1.f) w = 1.f;
  return bg + w * (plaid - bg);
}

struct Deform {
  std::array<Affine, kBodyParts> fwd;  // source -> target
  std::array<Affine, kBodyParts> inv;  // target -> source
};

Deform build_deform(const ToyDeformation& def,
                    const std::array<PartLayout, kBodyParts>& parts,
                    float scale, Rng& rng) {
  std::array<float, kBodyParts> angles{};
  float tx = 0.f, ty = 0.f;
  switch (def.kind) {
    case ToyDeformation::Kind::Identity:
      break;
    case ToyDeformation::Kind::Translation:
      // The deformation parameter is the backward displacement: target
      // pixels sample the source at p + (dx, dy).
      tx = -def.dx;
      ty = -def.dy;
      break;
    case ToyDeformation::Kind::PerPartRotation:
      for (int k = 0; k < kBodyParts; ++k)
        if (static_cast<size_t>(k) < def.part_angles_deg.size())
          angles[static_cast<size_t>(k)] =
              def.part_angles_deg[static_cast<size_t>(k)];
      break;
    case ToyDeformation::Kind::Random:
      for (int k = 0; k < kBodyParts; ++k)
        angles[static_cast<size_t>(k)] =
            rng.uniform(-def.max_angle_deg, def.max_angle_deg);
      tx = rng.uniform(-2.f, 2.f) * scale;
      ty = rng.uniform(-2.f, 2.f) * scale;
      break;
  }
  Deform d;
  for (int k = 0; k < kBodyParts; ++k) {
    const float ax = parts[static_cast<size_t>(k)].ax * scale;
    const float ay = parts[static_cast<size_t>(k)].ay * scale;
    const float deg = angles[static_cast<size_t>(k)];
    d.fwd[static_cast<size_t>(k)] = rotate_about(ax, ay, deg, tx, ty);
    // Exact inverse: undo the translation, then rotate back about the anchor.
    Affine back = rotate_about(ax, ay, -deg, 0.f, 0.f);
    Affine& inv = d.inv[static_cast<size_t>(k)];
    inv = back;
    inv.tx = back.a * -tx + back.b * -ty + back.tx;
    inv.ty = back.c * -tx + back.d * -ty + back.ty;
  }
  return d;
}

// Which part claims the continuous target point (x, y); -1 for background.
// Also yields the source-local point for the claiming part.
int resolve_part(const std::array<Rect, kBodyParts>& rects,
                 const std::array<Affine, kBodyParts>& inv, float x, float y,
                 float& qx, float& qy) {
  for (int k : kPriority) {
    float sx, sy;
    inv[static_cast<size_t>(k)].apply(x, y, sx, sy);
    if (rects[static_cast<size_t>(k)].contains(sx, sy)) {
      qx = sx;
      qy = sy;
      return k;
    }
  }
  return -1;
}

}  // namespace

ToySample generate_toy_sample(uint64_t seed, int size,
                              const ToyDeformation& def) {
  if (size <= 0 || size % 64 != 0)
    throw ValidationError("toy sample: size must be a positive multiple of 64");
  const float scale = float(size) / 64.f;
  const float margin = 2.f * scale;
  const auto& layout = base_layout();
  std::array<Rect, kBodyParts> rects;
  for (int k = 0; k < kBodyParts; ++k) {
    const Rect& r = layout[static_cast<size_t>(k)].rect;
    rects[static_cast<size_t>(k)] =
        Rect{r.x0 * scale, r.y0 * scale, r.x1 * scale, r.y1 * scale};
  }

  Rng rng(seed);
  Rng tex_rng = rng.fork();
  Rng def_rng = rng.fork();
  const Textures tex = draw_textures(tex_rng, scale);
  const Deform deform = build_deform(def, layout, scale, def_rng);

  std::array<Affine, kBodyParts> identity{};

  // Renders one side; `inv` maps that side's pixels to source-local points.
  auto render = [&](const std::array<Affine, kBodyParts>& inv, Image& img,
                    PoseMap& pose, GarmentParsing& garment, Tensor* ids) {
    Tensor image({3, size, size});
    Tensor parts({kToyParts, size, size});
    Tensor uv({2, size, size});
    Tensor classes({kToyClasses, size, size});
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        float qx, qy;
        const int k =
            resolve_part(rects, inv, float(x), float(y), qx, qy);
        if (k < 0) {
          for (int c = 0; c < 3; ++c)
            image.at(c, y, x) =
                background_color(tex, c, float(x), float(y), size);
          parts.at(0, y, x) = 1.f;
          classes.at(0, y, x) = 1.f;
          if (ids) ids->at(0, y, x) = -1.f;
          continue;
        }
        const Rect& r = rects[static_cast<size_t>(k)];
        for (int c = 0; c < 3; ++c)
          image.at(c, y, x) = part_color(tex, r, k, c, qx, qy, margin, size);
        parts.at(layout[static_cast<size_t>(k)].pose_channel, y, x) = 1.f;
        const float ly = (qy - r.y0) / (r.y1 - r.y0);
        uv.at(0, y, x) = (qx - r.x0) / (r.x1 - r.x0);
        uv.at(1, y, x) = ly;
        classes.at(garment_class(k, ly), y, x) = 1.f;
        if (ids) ids->at(0, y, x) = float(k);
      }
    img = Image::make(std::move(image));
    pose = PoseMap::make(std::move(parts), std::move(uv));
    garment = GarmentParsing::make(std::move(classes));
  };

  ToySample out;
  out.part_ids = Tensor({1, size, size});
  render(identity, out.pair.source_image, out.pair.source_pose,
         out.pair.source_garment, nullptr);
  render(deform.inv, out.pair.target_image, out.pair.target_pose,
         out.pair.target_garment, &out.part_ids);

  out.figure_mask = Tensor({1, size, size});
  for (int64_t i = 0; i < out.part_ids.numel(); ++i)
    out.figure_mask[i] = out.part_ids[i] >= 0.f ? 1.f : 0.f;

  for (int k = 0; k < kBodyParts; ++k) {
    const Affine& m = deform.fwd[static_cast<size_t>(k)];
    out.part_affines[static_cast<size_t>(k)] = {m.a, m.b, m.tx,
                                                m.c, m.d, m.ty};
  }

  // Exact backward flow at every level, evaluated at that level's pixel
  // centers mapped into full resolution.
  std::vector<Tensor> levels;
  for (int l = 0; l < FlowPyramid::kLevels; ++l) {
    const int hs = size >> l;
    const float step = float(1 << l);
    Tensor flow({2, hs, hs});
    for (int y = 0; y < hs; ++y)
      for (int x = 0; x < hs; ++x) {
        const float fx = (float(x) + 0.5f) * step - 0.5f;
        const float fy = (float(y) + 0.5f) * step - 0.5f;
        float qx, qy;
        const int k = resolve_part(rects, deform.inv, fx, fy, qx, qy);
        if (k >= 0) {
          flow.at(0, y, x) = (qx - fx) / step;
          flow.at(1, y, x) = (qy - fy) / step;
        }
      }
    levels.push_back(std::move(flow));
  }
  out.gt_flow = FlowPyramid::make(std::move(levels));

  out.pair.target_residues =
      make_residues(out.pair.target_image, out.pair.target_garment, {0},
                    FillStrategy::Diffusion);
  return out;
}

}  // namespace poseflow
