#include "poseflow/synthesis.hpp"

#include <algorithm>
#include <cmath>

#include "poseflow/errors.hpp"
#include "poseflow/warp.hpp"

namespace poseflow {

void SynthConfig::validate() const {
  if (src_channels <= 0 || tgt_channels <= 0 || out_channels <= 0)
    throw ConfigError("synth config: channel counts must be > 0");
  if (width <= 0) throw ConfigError("synth config: width must be > 0");
}

SynthConfig garment_net_config(int num_garment_classes, int num_parts,
                               int width) {
  SynthConfig c;
  c.src_channels = num_garment_classes + num_parts + 2;
  c.tgt_channels = num_parts + 2;
  c.out_channels = num_garment_classes;
  c.width = width;
  c.validate();
  return c;
}

SynthConfig synthesis_net_config(int num_garment_classes, int num_parts,
                                 int width) {
  SynthConfig c;
  c.src_channels = 3 + num_parts + 2;
  c.tgt_channels = num_garment_classes + num_parts + 2;
  c.out_channels = 3;
  c.width = width;
  c.validate();
  return c;
}

namespace {

void add_conv(std::vector<std::pair<std::string, Param*>>& out,
              const std::string& n, ConvParam& c) {
  out.emplace_back(n + ".w", &c.w);
  out.emplace_back(n + ".b", &c.b);
}

void add_norm(std::vector<std::pair<std::string, Param*>>& out,
              const std::string& n, NormParam& m, bool use_norm) {
  if (!use_norm) return;
  out.emplace_back(n + ".gamma", &m.gamma);
  out.emplace_back(n + ".beta", &m.beta);
}

}  // namespace

std::vector<std::pair<std::string, Param*>> SynthParams::named() {
  std::vector<std::pair<std::string, Param*>> out;
  const bool n = cfg.use_norm;
  for (int l = 0; l < 6; ++l) {
    std::string base = "src_enc" + std::to_string(l);
    add_conv(out, base, src_enc[l].conv);
    add_norm(out, base, src_enc[l].norm, n);
  }
  for (int k = 0; k < 7; ++k) {
    std::string base = "res" + std::to_string(k);
    add_conv(out, base + ".c1", res[k].conv1);
    add_norm(out, base + ".n1", res[k].norm1, n);
    add_conv(out, base + ".c2", res[k].conv2);
    add_norm(out, base + ".n2", res[k].norm2, n);
  }
  for (int l = 0; l < 6; ++l) {
    std::string base = "tgt_enc" + std::to_string(l);
    add_conv(out, base, tgt_enc[l].conv);
    add_norm(out, base, tgt_enc[l].norm, n);
  }
  for (int l = 0; l < 6; ++l)
    out.emplace_back("att" + std::to_string(l) + ".w", &att_w[l]);
  for (int l = 0; l < 6; ++l) {
    std::string base = "dec" + std::to_string(l);
    add_conv(out, base, dec[l].conv);
    add_norm(out, base, dec[l].norm, n);
  }
  add_conv(out, "head_fg", head_fg);
  add_conv(out, "head_mask", head_mask);
  return out;
}

void SynthParams::validate() const {
  cfg.validate();
  auto* self = const_cast<SynthParams*>(this);
  for (auto& [name, p] : self->named()) {
    if (p->value.empty())
      throw ValidationError("synth params: " + name + " is empty");
    if (!p->value.all_finite())
      throw ValidationError("synth params: " + name + " is not finite");
  }
  for (int l = 0; l < 6; ++l) {
    const Tensor& w = att_w[l].value;
    if (w.rank() != 4 || w.dim(0) != cfg.width || w.dim(1) != cfg.width ||
        w.dim(2) != 1 || w.dim(3) != 1)
      throw ValidationError("synth params: attention matrix must be CsxCs");
  }
  if (src_enc[0].conv.w.value.dim(1) != cfg.src_channels ||
      tgt_enc[0].conv.w.value.dim(1) != cfg.tgt_channels)
    throw ValidationError("synth params: encoder input channels disagree");
}

void SynthParams::zero_grad() {
  for (auto& [name, p] : named()) p->zero_grad();
}

namespace {

ConvParam kaiming_conv(Rng& rng, int ci, int co, int k, bool transposed) {
  ConvParam c;
  const float stdev = std::sqrt(2.f / (float(ci) * float(k) * float(k)));
  std::vector<int> shape =
      transposed ? std::vector<int>{ci, co, k, k} : std::vector<int>{co, ci, k, k};
  c.w.value = random_normal(rng, shape, 0.f, stdev);
  c.b.value = Tensor::full({co}, 0.f);
  return c;
}

NormParam affine_norm(int c) {
  NormParam m;
  m.gamma.value = Tensor::full({c}, 1.f);
  m.beta.value = Tensor::full({c}, 0.f);
  return m;
}

// Instance statistics are degenerate on a single pixel, so normalization is
// skipped there instead of erasing the activation.
Var maybe_norm(Tape& tape, Var x, NormParam& m, bool use_norm) {
  if (!use_norm) return x;
  const Tensor& v = tape.val(x);
  if (v.dim(1) * v.dim(2) <= 1) return x;
  return instance_norm(x, tape.param(m.gamma), tape.param(m.beta));
}

std::vector<Var> run_encoder(Tape& tape, std::array<SynthStage, 6>& stages,
                             std::array<SynthResBlock, 7>* res_blocks,
                             bool use_norm, Var x) {
  std::vector<Var> feats;
  feats.reserve(6);
  for (int l = 0; l < 6; ++l) {
    x = conv2d(x, tape.param(stages[l].conv.w), tape.param(stages[l].conv.b),
               2, 1);
    x = maybe_norm(tape, x, stages[l].norm, use_norm);
    x = leaky_relu(x, 0.2f);
    if (l == 5 && res_blocks != nullptr) {
      for (auto& rb : *res_blocks) {
        Var y = conv2d(x, tape.param(rb.conv1.w), tape.param(rb.conv1.b), 1, 1);
        y = maybe_norm(tape, y, rb.norm1, use_norm);
        y = relu(y);
        y = conv2d(y, tape.param(rb.conv2.w), tape.param(rb.conv2.b), 1, 1);
        y = maybe_norm(tape, y, rb.norm2, use_norm);
        x = add(x, y);
      }
    }
    feats.push_back(x);
  }
  return feats;
}

}  // namespace

SynthParams init_synth_params(const SynthConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  SynthParams p;
  p.cfg = cfg;
  const int w = cfg.width;
  for (int l = 0; l < 6; ++l) {
    p.src_enc[l].conv =
        kaiming_conv(rng, l == 0 ? cfg.src_channels : w, w, 4, false);
    p.src_enc[l].norm = affine_norm(w);
  }
  for (int k = 0; k < 7; ++k) {
    p.res[k].conv1 = kaiming_conv(rng, w, w, 3, false);
    p.res[k].norm1 = affine_norm(w);
    p.res[k].conv2 = kaiming_conv(rng, w, w, 3, false);
    p.res[k].norm2 = affine_norm(w);
  }
  for (int l = 0; l < 6; ++l) {
    p.tgt_enc[l].conv =
        kaiming_conv(rng, l == 0 ? cfg.tgt_channels : w, w, 4, false);
    p.tgt_enc[l].norm = affine_norm(w);
  }
  // small attention init keeps every gate near 0.5 at the start of training
  for (int l = 0; l < 6; ++l)
    p.att_w[l].value = random_normal(rng, {w, w, 1, 1}, 0.f, 0.01f);
  for (int l = 0; l < 6; ++l) {
    p.dec[l].conv = kaiming_conv(rng, l == 0 ? 2 * w : 3 * w, w, 4, true);
    p.dec[l].norm = affine_norm(w);
  }
  p.head_fg = kaiming_conv(rng, w, cfg.out_channels, 3, false);
  p.head_mask = kaiming_conv(rng, w, 1, 3, false);
  return p;
}

std::vector<Var> encode_source(Tape& tape, SynthParams& params, Var in_s) {
  const Tensor& v = tape.val(in_s);
  if (v.rank() != 3 || v.dim(0) != params.cfg.src_channels)
    throw ValidationError("encode_source: input has " +
                          Tensor::shape_str(v.shape()) + ", expected " +
                          std::to_string(params.cfg.src_channels) +
                          " channels");
  if (v.dim(1) % 64 != 0 || v.dim(2) % 64 != 0)
    throw ValidationError("encode_source: H and W must be divisible by 64");
  return run_encoder(tape, params.src_enc, &params.res, params.cfg.use_norm,
                     in_s);
}

std::vector<Var> encode_target(Tape& tape, SynthParams& params, Var in_t) {
  const Tensor& v = tape.val(in_t);
  if (v.rank() != 3 || v.dim(0) != params.cfg.tgt_channels)
    throw ValidationError("encode_target: input has " +
                          Tensor::shape_str(v.shape()) + ", expected " +
                          std::to_string(params.cfg.tgt_channels) +
                          " channels");
  if (v.dim(1) % 64 != 0 || v.dim(2) % 64 != 0)
    throw ValidationError("encode_target: H and W must be divisible by 64");
  return run_encoder(tape, params.tgt_enc, nullptr, params.cfg.use_norm, in_t);
}

GatedAttention gated_attention(Var f_warp, Var f_t, Var w) {
  Tape& tape = *f_warp.tape;
  const Tensor& a = tape.val(f_warp);
  const Tensor& b = tape.val(f_t);
  const Tensor& wv = tape.val(w);
  if (a.rank() != 3 || !a.same_shape(b))
    throw ValidationError("gated attention: feature shapes must match");
  if (wv.rank() != 4 || wv.dim(2) != 1 || wv.dim(3) != 1 ||
      wv.dim(1) != a.dim(0))
    throw ValidationError("gated attention: W must be a 1x1 conv over C");
  Var proj = conv2d(f_warp, w, Var{}, 1, 0);
  Var gate = sigmoid_v(sum_channels(mul(proj, f_t)));
  return GatedAttention{mul_cbroadcast(f_warp, gate), gate};
}

Var decode(Tape& tape, SynthParams& params, const std::vector<Var>& filtered,
           const std::vector<Var>& target_feats) {
  if (filtered.size() != 6 || target_feats.size() != 6)
    throw ValidationError("decode: expects six levels per stream");
  Var d;
  for (int k = 0; k < 6; ++k) {
    const int l = 5 - k;  // encoder level consumed by this stage
    Var in = k == 0 ? concat_c({filtered[5], target_feats[5]})
                    : concat_c({d, filtered[l], target_feats[l]});
    d = deconv2d(in, tape.param(params.dec[k].conv.w),
                 tape.param(params.dec[k].conv.b), 2, 1);
    d = maybe_norm(tape, d, params.dec[k].norm, params.cfg.use_norm);
    d = relu(d);
  }
  return d;
}

SynthOutputVars heads_and_blend(Tape& tape, SynthParams& params, Var f_dec,
                                Var residue) {
  const Tensor& rv = tape.val(residue);
  const Tensor& fv = tape.val(f_dec);
  if (rv.rank() != 3 || rv.dim(0) != params.cfg.out_channels ||
      rv.dim(1) != fv.dim(1) || rv.dim(2) != fv.dim(2))
    throw ValidationError("heads_and_blend: residue dims must match output");
  SynthOutputVars o;
  o.fg = conv2d(f_dec, tape.param(params.head_fg.w),
                tape.param(params.head_fg.b), 1, 1);
  o.mask = sigmoid_v(conv2d(f_dec, tape.param(params.head_mask.w),
                            tape.param(params.head_mask.b), 1, 1));
  Var inv_mask = add_scalar(mul_scalar(o.mask, -1.f), 1.f);
  o.out = add(mul_cbroadcast(o.fg, o.mask), mul_cbroadcast(residue, inv_mask));
  return o;
}

SynthOutputVars synth_forward_vars(Tape& tape, SynthParams& params,
                                   const Tensor& in_s, const Tensor& in_t,
                                   const FlowPyramid& flows,
                                   const Tensor& residue) {
  params.validate();
  if (in_s.rank() != 3 || in_t.rank() != 3 || in_s.dim(1) != in_t.dim(1) ||
      in_s.dim(2) != in_t.dim(2))
    throw ValidationError("synth forward: stream rasters must share H and W");
  const int H = in_s.dim(1), W = in_s.dim(2);
  if (int(flows.levels.size()) != FlowPyramid::kLevels ||
      flows.levels[0].dim(1) != H || flows.levels[0].dim(2) != W)
    throw ValidationError("synth forward: pyramid does not match raster dims");

  std::vector<Var> f_s = encode_source(tape, params, tape.constant(in_s));
  std::vector<Var> f_t = encode_target(tape, params, tape.constant(in_t));

  std::vector<Var> filtered(6);
  std::vector<Var> gates(6);
  for (int l = 0; l < 6; ++l) {
    const int fh = H >> (l + 1), fw = W >> (l + 1);
    const Tensor& fl = flows.levels[std::min(l + 1, 5)];
    Tensor resized = (fl.dim(1) == fh && fl.dim(2) == fw)
                         ? fl
                         : resize_flow(fl, fh, fw);
    Var warped = inverse_warp_v(f_s[l], tape.constant(std::move(resized)));
    GatedAttention ga =
        gated_attention(warped, f_t[l], tape.param(params.att_w[l]));
    filtered[l] = ga.filtered;
    gates[l] = ga.gate;
  }

  Var f_dec = decode(tape, params, filtered, f_t);
  SynthOutputVars o = heads_and_blend(tape, params, f_dec,
                                      tape.constant(residue));
  o.gates = std::move(gates);
  return o;
}

namespace {

SynthOutput collect_diag(Tape& tape, const SynthOutputVars& v) {
  SynthOutput d;
  d.out = tape.val(v.out);
  d.fg = tape.val(v.fg);
  d.mask = tape.val(v.mask);
  for (Var g : v.gates) d.attention_gates.push_back(tape.val(g));
  return d;
}

}  // namespace

Var garment_forward_vars(Tape& tape, SynthParams& params,
                         const GarmentParsing& g_s, const PoseMap& p_s,
                         const PoseMap& p_t, const FlowPyramid& flows,
                         const Tensor& garment_residue,
                         SynthOutputVars* diag) {
  Tensor in_s =
      concat_tensors_c({&g_s.classes, &p_s.parts, &p_s.uv});
  Tensor in_t = concat_tensors_c({&p_t.parts, &p_t.uv});
  SynthOutputVars o =
      synth_forward_vars(tape, params, in_s, in_t, flows, garment_residue);
  if (diag != nullptr) *diag = o;
  return softmax_c(o.out);
}

Tensor garmentnet_forward(SynthParams& params, const GarmentParsing& g_s,
                          const PoseMap& p_s, const PoseMap& p_t,
                          const FlowPyramid& flows,
                          const Tensor& garment_residue, SynthOutput* diag) {
  Tape tape;
  SynthOutputVars vars;
  Var out = garment_forward_vars(tape, params, g_s, p_s, p_t, flows,
                                 garment_residue, &vars);
  if (diag != nullptr) *diag = collect_diag(tape, vars);
  return tape.val(out);
}

Var synthesis_forward_vars(Tape& tape, SynthParams& params, const Image& i_s,
                           const PoseMap& p_s, const Tensor& g_t,
                           const PoseMap& p_t, const FlowPyramid& flows,
                           const Image& image_residue, SynthOutputVars* diag) {
  if (g_t.rank() != 3 || g_t.dim(1) != i_s.height() ||
      g_t.dim(2) != i_s.width())
    throw ValidationError("synthesis forward: garment raster dims mismatch");
  Tensor in_s = concat_tensors_c({&i_s.data, &p_s.parts, &p_s.uv});
  Tensor in_t = concat_tensors_c({&g_t, &p_t.parts, &p_t.uv});
  SynthOutputVars o = synth_forward_vars(tape, params, in_s, in_t, flows,
                                         image_residue.data);
  if (diag != nullptr) *diag = o;
  return tanh_v(o.out);
}

Image synthesisnet_forward(SynthParams& params, const Image& i_s,
                           const PoseMap& p_s, const Tensor& g_t,
                           const PoseMap& p_t, const FlowPyramid& flows,
                           const Image& image_residue, SynthOutput* diag) {
  Tape tape;
  SynthOutputVars vars;
  Var out = synthesis_forward_vars(tape, params, i_s, p_s, g_t, p_t, flows,
                                   image_residue, &vars);
  if (diag != nullptr) *diag = collect_diag(tape, vars);
  return Image::make(tape.val(out));
}

}  // namespace poseflow
