#include "poseflow/losses.hpp"

#include <cmath>

#include "poseflow/errors.hpp"
#include "poseflow/warp.hpp"

namespace poseflow {

void CharbonnierParams::validate() const {
  if (!(eps > 0.f)) throw ConfigError("charbonnier: eps must be > 0");
  if (!(alpha > 0.f && alpha <= 1.f))
    throw ConfigError("charbonnier: alpha must be in (0, 1]");
}

void StageOneWeights::validate() const {
  for (int l = 0; l < 6; ++l)
    if (s[l] < 0.f || beta[l] < 0.f || gamma[l] < 0.f)
      throw ConfigError("stage-one weights must be non-negative");
}

Var photometric_loss(Var target, Var warped_src, const CharbonnierParams& cp) {
  cp.validate();
  if (!target.tape->val(target).same_shape(warped_src.tape->val(warped_src)))
    throw ValidationError("photometric_loss: shape mismatch");
  return charbonnier_loss(target, warped_src, cp.eps, cp.alpha);
}

Var tv_loss(Var flow) { return tv_loss_v(flow); }

Var gram(Var features) { return gram_v(features); }

std::vector<Var> texture_loss(Var target, Var warped_src,
                              const FeatureExtractor& fx) {
  std::vector<Var> ft = fx.features(target);
  std::vector<Var> fw = fx.features(warped_src);
  std::vector<Var> out;
  out.reserve(ft.size());
  for (size_t l = 0; l < ft.size(); ++l)
    out.push_back(mean_all(abs_v(sub(gram_v(ft[l]), gram_v(fw[l])))));
  return out;
}

Var vgg_feature_loss(Var a, Var b, const FeatureExtractor& fx) {
  if (!a.tape->val(a).same_shape(b.tape->val(b)))
    throw ValidationError("vgg_feature_loss: shape mismatch");
  if (fx.num_taps() < 4)
    throw ValidationError("vgg_feature_loss: extractor has no L3 tap");
  std::vector<Var> fa = fx.features(a);
  std::vector<Var> fb = fx.features(b);
  return l1_loss(fa[3], fb[3]);
}

LsganPair lsgan_losses(Var d_real, Var d_fake) {
  LsganPair p;
  p.disc = add(mse_to(d_real, 1.f), mse_to(d_fake, 0.f));
  p.gen = mse_to(d_fake, 1.f);
  return p;
}

StageOneBreakdown stage1_loss(const Tensor& i_s, const Tensor& i_t,
                              const std::vector<Var>& flows,
                              const StageOneWeights& w,
                              const CharbonnierParams& cp,
                              const FeatureExtractor& fx) {
  w.validate();
  cp.validate();
  if (flows.size() != 6)
    throw ValidationError("stage1_loss: expected a 6-level flow pyramid");
  if (!i_s.same_shape(i_t) || i_s.rank() != 3)
    throw ValidationError("stage1_loss: image shape mismatch");
  Tape& tape = *flows[0].tape;
  const int H = i_s.dim(1), W = i_s.dim(2);
  for (int l = 0; l < 6; ++l) {
    if (flows[l].tape != &tape)
      throw ValidationError("stage1_loss: flows must share one tape");
    const Tensor& f = tape.val(flows[l]);
    if (f.rank() != 3 || f.dim(0) != 2 || f.dim(1) != (H >> l) ||
        f.dim(2) != (W >> l))
      throw ValidationError("stage1_loss: flow level " + std::to_string(l) +
                            " has shape " + Tensor::shape_str(f.shape()));
  }

  StageOneBreakdown out;
  Var total;
  auto accumulate = [&](Var term, float weight) {
    Var weighted = mul_scalar(term, weight);
    total = total.valid() ? add(total, weighted) : weighted;
  };

  bool any_texture = false;
  Var warped0;  // full-resolution warp, shared with the texture term
  for (int l = 0; l < 6; ++l) {
    if (w.beta[l] != 0.f && w.s[l] != 0.f) any_texture = true;
    if (w.s[l] == 0.f) continue;
    Tensor src_l = resize_bilinear(i_s, H >> l, W >> l);
    Tensor tgt_l = resize_bilinear(i_t, H >> l, W >> l);
    Var warped = inverse_warp_v(tape.constant(src_l), flows[l],
                                WarpPadding::Border);
    if (l == 0) warped0 = warped;
    Var photo = photometric_loss(tape.constant(tgt_l), warped, cp);
    out.photometric[l] = tape.val(photo).data()[0];
    accumulate(photo, w.s[l]);
    if (w.gamma[l] != 0.f) {
      Var tv = tv_loss(flows[l]);
      out.tv[l] = tape.val(tv).data()[0];
      accumulate(tv, w.s[l] * w.gamma[l]);
    }
  }

  if (any_texture) {
    // One warp at full resolution feeds every texture tap; tap l is paired
    // with weight beta[l].
    if (!warped0.valid())
      warped0 =
          inverse_warp_v(tape.constant(i_s), flows[0], WarpPadding::Border);
    std::vector<Var> tex = texture_loss(tape.constant(i_t), warped0, fx);
    for (int l = 0; l < 6 && l < static_cast<int>(tex.size()); ++l) {
      out.texture[l] = tape.val(tex[l]).data()[0];
      if (w.s[l] != 0.f && w.beta[l] != 0.f)
        accumulate(tex[l], w.s[l] * w.beta[l]);
    }
  }

  if (!total.valid()) total = tape.constant(Tensor::full({}, 0.f));
  out.total = total;
  out.total_value = tape.val(total).data()[0];
  return out;
}

double photometric_loss(const Tensor& target, const Tensor& warped_src,
                        const CharbonnierParams& cp) {
  Tape tape;
  Var v = photometric_loss(tape.constant(target), tape.constant(warped_src), cp);
  return tape.val(v).data()[0];
}

double tv_loss(const Tensor& flow) {
  Tape tape;
  return tape.val(tv_loss(tape.constant(flow))).data()[0];
}

Tensor gram(const Tensor& features) {
  Tape tape;
  return tape.val(gram_v(tape.constant(features)));
}

std::vector<double> texture_loss(const Tensor& target,
                                 const Tensor& warped_src,
                                 const FeatureExtractor& fx) {
  Tape tape;
  std::vector<Var> taps =
      texture_loss(tape.constant(target), tape.constant(warped_src), fx);
  std::vector<double> out;
  out.reserve(taps.size());
  for (Var v : taps) out.push_back(tape.val(v).data()[0]);
  return out;
}

}  // namespace poseflow
