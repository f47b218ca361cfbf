#include "poseflow/flow_net.hpp"

#include <cmath>

#include "poseflow/errors.hpp"
#include "poseflow/warp.hpp"

namespace poseflow {

std::vector<std::pair<std::string, Param*>> FlowNetParams::named() {
  std::vector<std::pair<std::string, Param*>> out;
  auto add = [&](const std::string& n, ConvParam& c) {
    out.emplace_back(n + ".w", &c.w);
    out.emplace_back(n + ".b", &c.b);
  };
  add("conv1", conv1);
  add("conv2", conv2);
  add("conv3", conv3);
  add("conv4", conv4);
  add("conv5", conv5);
  add("conv6", conv6);
  add("deconv5", deconv5);
  add("deconv4", deconv4);
  add("deconv3", deconv3);
  add("deconv2", deconv2);
  add("up1", up1);
  add("up0", up0);
  add("head5", head5);
  add("head4", head4);
  add("head3", head3);
  add("head2", head2);
  add("head1", head1);
  add("head0", head0);
  return out;
}

void FlowNetParams::validate() const {
  if (in_channels <= 0 || width <= 0)
    throw ValidationError("flow net: uninitialized params");
  auto* self = const_cast<FlowNetParams*>(this);
  for (auto& [name, p] : self->named()) {
    if (p->value.empty())
      throw ValidationError("flow net: parameter " + name + " is empty");
    if (!p->value.all_finite())
      throw ValidationError("flow net: parameter " + name + " is not finite");
  }
  if (conv1.w.value.dim(1) != in_channels)
    throw ValidationError("flow net: conv1 input channels disagree with config");
}

void FlowNetParams::zero_grad() {
  for (auto& [name, p] : named()) p->zero_grad();
}

namespace {

ConvParam make_conv(Rng& rng, int ci, int co, int k, bool zero) {
  ConvParam c;
  if (zero) {
    c.w.value = Tensor::full({co, ci, k, k}, 0.f);
  } else {
    const float stdev = std::sqrt(2.f / (float(ci) * float(k) * float(k)));
    c.w.value = random_normal(rng, {co, ci, k, k}, 0.f, stdev);
  }
  c.b.value = Tensor::full({co}, 0.f);
  return c;
}

// Deconv weights are [Ci,Co,kh,kw]; fan-in per output element is Ci*k*k/s^2,
// the plain Ci*k*k scaling is close enough for a trainable start.
ConvParam make_deconv(Rng& rng, int ci, int co, int k) {
  ConvParam c;
  const float stdev = std::sqrt(2.f / (float(ci) * float(k) * float(k)));
  c.w.value = random_normal(rng, {ci, co, k, k}, 0.f, stdev);
  c.b.value = Tensor::full({co}, 0.f);
  return c;
}

}  // namespace

FlowNetParams init_flow_params(int num_parts, uint64_t seed, int width) {
  if (num_parts <= 0) throw ConfigError("flow net: num_parts must be > 0");
  if (width <= 0) throw ConfigError("flow net: width must be > 0");
  Rng rng(seed);
  FlowNetParams p;
  const int cin = 3 + 2 * (num_parts + 2);
  p.in_channels = cin;
  p.width = width;
  const int w = width;
  p.conv1 = make_conv(rng, cin, w, 7, false);
  p.conv2 = make_conv(rng, w, w, 5, false);
  p.conv3 = make_conv(rng, w, w, 5, false);
  p.conv4 = make_conv(rng, w, w, 3, false);
  p.conv5 = make_conv(rng, w, w, 3, false);
  p.conv6 = make_conv(rng, w, w, 3, false);
  p.deconv5 = make_deconv(rng, w, w, 4);            // from e6
  p.deconv4 = make_deconv(rng, 2 * w, w, 4);        // from [d5; e5]
  p.deconv3 = make_deconv(rng, 2 * w + 2, w, 4);    // from [d4; e4; upflow]
  p.deconv2 = make_deconv(rng, 2 * w + 2, w, 4);
  p.up1 = make_conv(rng, 3 * w + 4, w, 3, false);   // [up2(cat2); e1; upflow2]
  p.up0 = make_conv(rng, w + cin + 2, w, 3, false); // [up2(m1); input; upflow1]
  p.head5 = make_conv(rng, 2 * w, 2, 3, true);
  p.head4 = make_conv(rng, 2 * w + 2, 2, 3, true);
  p.head3 = make_conv(rng, 2 * w + 2, 2, 3, true);
  p.head2 = make_conv(rng, 2 * w + 2, 2, 3, true);
  p.head1 = make_conv(rng, w, 2, 3, true);
  p.head0 = make_conv(rng, w, 2, 3, true);
  return p;
}

Tensor flow_input(const Image& i_s, const PoseMap& p_s, const PoseMap& p_t) {
  const int H = i_s.height(), W = i_s.width();
  for (const Tensor* t : {&p_s.parts, &p_s.uv, &p_t.parts, &p_t.uv})
    if (t->dim(1) != H || t->dim(2) != W)
      throw ValidationError("flow input: rasters must share H and W");
  if (p_s.parts.dim(0) != p_t.parts.dim(0))
    throw ValidationError("flow input: source/target part counts differ");
  return concat_tensors_c({&i_s.data, &p_s.parts, &p_s.uv, &p_t.parts, &p_t.uv});
}

std::vector<Var> flow_forward_vars(Tape& tape, FlowNetParams& params,
                                   const Tensor& input) {
  params.validate();
  if (input.rank() != 3 || input.dim(0) != params.in_channels)
    throw ValidationError("flow forward: input has " +
                          Tensor::shape_str(input.shape()) + ", expected " +
                          std::to_string(params.in_channels) + " channels");
  const int H = input.dim(1), W = input.dim(2);
  if (H % 64 != 0 || W % 64 != 0)
    throw ValidationError("flow forward: H and W must be divisible by 64");

  const float slope = 0.1f;
  auto enc = [&](Var x, ConvParam& c, int stride, int pad) {
    return leaky_relu(
        conv2d(x, tape.param(c.w), tape.param(c.b), stride, pad), slope);
  };
  auto dec = [&](Var x, ConvParam& c) {
    return leaky_relu(deconv2d(x, tape.param(c.w), tape.param(c.b), 2, 1),
                      slope);
  };
  auto head = [&](Var x, ConvParam& c) {
    return conv2d(x, tape.param(c.w), tape.param(c.b), 1, 1);
  };

  Var in = tape.constant(input);
  Var e1 = enc(in, params.conv1, 2, 3);  // H/2
  Var e2 = enc(e1, params.conv2, 2, 2);  // H/4
  Var e3 = enc(e2, params.conv3, 2, 2);  // H/8
  Var e4 = enc(e3, params.conv4, 2, 1);  // H/16
  Var e5 = enc(e4, params.conv5, 2, 1);  // H/32
  Var e6 = enc(e5, params.conv6, 2, 1);  // H/64

  // refinement: deconv up, concat skip (+ upsampled coarser flow), predict
  Var d5 = dec(e6, params.deconv5);
  Var cat5 = concat_c({d5, e5});
  Var flow5 = head(cat5, params.head5);

  Var d4 = dec(cat5, params.deconv4);
  Var up5 = resize_flow_v(flow5, H >> 4, W >> 4);
  Var cat4 = concat_c({d4, e4, up5});
  Var flow4 = add(head(cat4, params.head4), up5);

  Var d3 = dec(cat4, params.deconv3);
  Var up4 = resize_flow_v(flow4, H >> 3, W >> 3);
  Var cat3 = concat_c({d3, e3, up4});
  Var flow3 = add(head(cat3, params.head3), up4);

  Var d2 = dec(cat3, params.deconv2);
  Var up3 = resize_flow_v(flow3, H >> 2, W >> 2);
  Var cat2 = concat_c({d2, e2, up3});
  Var flow2 = add(head(cat2, params.head2), up3);

  // two x2 U-Net upsampling modules instead of a final x4 bilinear resize
  Var up2f = resize_flow_v(flow2, H >> 1, W >> 1);
  Var m1in = concat_c({resize_bilinear_v(cat2, H >> 1, W >> 1), e1, up2f});
  Var m1 = enc(m1in, params.up1, 1, 1);
  Var flow1 = add(head(m1, params.head1), up2f);

  Var up1f = resize_flow_v(flow1, H, W);
  Var m0in = concat_c({resize_bilinear_v(m1, H, W), in, up1f});
  Var m0 = enc(m0in, params.up0, 1, 1);
  Var flow0 = add(head(m0, params.head0), up1f);

  return {flow0, flow1, flow2, flow3, flow4, flow5};
}

FlowPyramid flow_forward(FlowNetParams& params, const Image& i_s,
                         const PoseMap& p_s, const PoseMap& p_t) {
  Tape tape;
  std::vector<Var> flows =
      flow_forward_vars(tape, params, flow_input(i_s, p_s, p_t));
  std::vector<Tensor> levels;
  levels.reserve(flows.size());
  for (Var v : flows) levels.push_back(tape.val(v));
  return FlowPyramid::make(std::move(levels));
}

}  // namespace poseflow
