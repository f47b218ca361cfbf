#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "poseflow/autograd.hpp"
#include "poseflow/core_data.hpp"
#include "poseflow/errors.hpp"
#include "poseflow/synthesis.hpp"
#include "poseflow/warp.hpp"

using namespace poseflow;

namespace {

constexpr int kNp = 7;
constexpr int kNg = 8;
constexpr int kCs = 16;  // toy width

Image rand_image(Rng& rng, int h, int w) {
  return Image::make(random_uniform(rng, {3, h, w}, -1.f, 1.f));
}

PoseMap rand_pose(Rng& rng, int h, int w) {
  Tensor parts = Tensor::full({kNp, h, w}, 0.f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) parts.at(rng.uniform_int(0, kNp - 1), y, x) = 1.f;
  Tensor uv({2, h, w});
  for (int i = 0; i < uv.numel(); ++i) uv.data()[i] = rng.uniform(0.f, 1.f);
  return PoseMap::make(parts, uv);
}

GarmentParsing rand_garment(Rng& rng, int h, int w) {
  Tensor cls = Tensor::full({kNg, h, w}, 0.f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) cls.at(rng.uniform_int(0, kNg - 1), y, x) = 1.f;
  return GarmentParsing::make(cls);
}

// Fractional displacements; for parameter-space probes the flow is constant,
// so the warp stays linear in the source values.
FlowPyramid rand_pyramid(Rng& rng, int h, int w) {
  std::vector<Tensor> levels;
  for (int l = 0; l < 6; ++l) {
    Tensor f({2, h >> l, w >> l});
    for (int i = 0; i < f.numel(); ++i)
      f.data()[i] = rng.uniform(-1.f, 1.f) + (rng.uniform(0.f, 1.f) < 0.5f
                                                  ? 0.37f
                                                  : -0.41f);
    levels.push_back(std::move(f));
  }
  return FlowPyramid::make(std::move(levels));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

void zero_all(SynthParams& p) {
  for (auto& [name, q] : p.named()) q->value.fill_(0.f);
}

}  // namespace

TEST_SUITE("synthesis") {

TEST_CASE("sum_channels forward and adjoint") {
  Tape tape;
  Rng rng(3);
  Tensor x = random_uniform(rng, {4, 3, 5}, -2.f, 2.f);
  Var xv = tape.leaf(x);
  Var s = sum_channels(xv);
  const Tensor& sv = tape.val(s);
  REQUIRE(sv.dim(0) == 1);
  REQUIRE(sv.dim(1) == 3);
  REQUIRE(sv.dim(2) == 5);
  for (int y = 0; y < 3; ++y)
    for (int xx = 0; xx < 5; ++xx) {
      double acc = 0;
      for (int c = 0; c < 4; ++c) acc += x.at(c, y, xx);
      CHECK(sv.at(0, y, xx) == doctest::Approx(acc).epsilon(1e-6));
    }
  // adjoint: d(mean)/dx is uniform 1/(H*W)
  tape.backward(mean_all(s));
  const Tensor* gx = tape.grad_of(xv);
  REQUIRE(gx != nullptr);
  for (int i = 0; i < gx->numel(); ++i)
    CHECK(gx->data()[i] == doctest::Approx(1.0 / 15.0).epsilon(1e-6));
}

TEST_CASE("encoder shape contract, determinism, zero params") {
  SynthConfig cfg = garment_net_config(kNg, kNp, kCs);
  SynthParams params = init_synth_params(cfg, 11);
  Rng rng(5);
  Tensor in_s = random_uniform(rng, {cfg.src_channels, 64, 64}, -1.f, 1.f);
  Tensor in_t = random_uniform(rng, {cfg.tgt_channels, 64, 64}, -1.f, 1.f);

  Tape t1;
  std::vector<Var> fs = encode_source(t1, params, t1.constant(in_s));
  std::vector<Var> ft = encode_target(t1, params, t1.constant(in_t));
  REQUIRE(fs.size() == 6);
  REQUIRE(ft.size() == 6);
  for (int l = 0; l < 6; ++l) {
    CHECK(t1.val(fs[l]).dim(0) == kCs);
    CHECK(t1.val(fs[l]).dim(1) == (64 >> (l + 1)));
    CHECK(t1.val(fs[l]).dim(2) == (64 >> (l + 1)));
    CHECK(t1.val(ft[l]).dim(1) == (64 >> (l + 1)));
  }

  // determinism across tapes and across re-initialization from one seed
  SynthParams params2 = init_synth_params(cfg, 11);
  Tape t2;
  std::vector<Var> fs2 = encode_source(t2, params2, t2.constant(in_s));
  for (int l = 0; l < 6; ++l)
    CHECK(bitwise_equal(t1.val(fs[l]), t2.val(fs2[l])));

  // all-zero parameters propagate exactly zero features
  zero_all(params2);
  Tape t3;
  std::vector<Var> fz = encode_source(t3, params2, t3.constant(in_s));
  std::vector<Var> fzt = encode_target(t3, params2, t3.constant(in_t));
  for (int l = 0; l < 6; ++l) {
    CHECK(t3.val(fz[l]).max_abs() == 0.f);
    CHECK(t3.val(fzt[l]).max_abs() == 0.f);
  }

  Tensor bad = random_uniform(rng, {cfg.src_channels + 1, 64, 64}, -1.f, 1.f);
  Tape t4;
  CHECK_THROWS_AS((void)encode_source(t4, params, t4.constant(bad)),
                  ValidationError);
}

TEST_CASE("gated attention closed forms and oracle") {
  Tape tape;
  Rng rng(21);
  Tensor fw = random_uniform(rng, {3, 2, 2}, -2.f, 2.f);
  Tensor ft = random_uniform(rng, {3, 2, 2}, -2.f, 2.f);
  Tensor w = random_uniform(rng, {3, 3, 1, 1}, -0.7f, 0.7f);

  Var vfw = tape.constant(fw), vft = tape.constant(ft);

  SUBCASE("zero W gives the half gate") {
    Var g = tape.constant(Tensor::full({3, 3, 1, 1}, 0.f));
    GatedAttention ga = gated_attention(vfw, vft, g);
    const Tensor& gate = tape.val(ga.gate);
    const Tensor& out = tape.val(ga.filtered);
    for (int i = 0; i < gate.numel(); ++i) CHECK(gate.data()[i] == 0.5f);
    for (int i = 0; i < out.numel(); ++i)
      CHECK(out.data()[i] == doctest::Approx(0.5f * fw.data()[i]));
  }

  SUBCASE("zero target features give the half gate") {
    Var zft = tape.constant(Tensor::full({3, 2, 2}, 0.f));
    GatedAttention ga = gated_attention(vfw, zft, tape.constant(w));
    const Tensor& gate = tape.val(ga.gate);
    for (int i = 0; i < gate.numel(); ++i) CHECK(gate.data()[i] == 0.5f);
  }

  SUBCASE("per-pixel dot-product oracle") {
    GatedAttention ga = gated_attention(vfw, vft, tape.constant(w));
    const Tensor& gate = tape.val(ga.gate);
    const Tensor& out = tape.val(ga.filtered);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        double dot = 0;
        for (int c = 0; c < 3; ++c) {
          double proj = 0;
          for (int k = 0; k < 3; ++k) proj += double(w.at4(c, k, 0, 0)) * fw.at(k, y, x);
          dot += proj * ft.at(c, y, x);
        }
        const double g = 1.0 / (1.0 + std::exp(-dot));
        CHECK(gate.at(0, y, x) == doctest::Approx(g).epsilon(1e-6));
        CHECK(gate.at(0, y, x) > 0.f);
        CHECK(gate.at(0, y, x) < 1.f);
        for (int c = 0; c < 3; ++c) {
          CHECK(out.at(c, y, x) ==
                doctest::Approx(fw.at(c, y, x) * g).epsilon(1e-6));
          CHECK(std::abs(out.at(c, y, x)) <= std::abs(fw.at(c, y, x)));
        }
      }
  }

  SUBCASE("shape validation") {
    Var small = tape.constant(Tensor::full({3, 2, 1}, 0.f));
    CHECK_THROWS_AS((void)gated_attention(vfw, small, tape.constant(w)),
                    ValidationError);
    Var badw = tape.constant(Tensor::full({3, 4, 1, 1}, 0.f));
    CHECK_THROWS_AS((void)gated_attention(vfw, vft, badw), ValidationError);
  }
}

TEST_CASE("decoder shape contract, zero propagation, determinism") {
  SynthConfig cfg = garment_net_config(kNg, kNp, kCs);
  SynthParams params = init_synth_params(cfg, 9);
  Rng rng(13);
  auto mk_feats = [&](Tape& t, bool zero) {
    std::vector<Var> fs;
    for (int l = 0; l < 6; ++l) {
      Tensor f = zero ? Tensor::full({kCs, 64 >> (l + 1), 64 >> (l + 1)}, 0.f)
                      : random_uniform(rng, {kCs, 64 >> (l + 1), 64 >> (l + 1)},
                                       -1.f, 1.f);
      fs.push_back(t.constant(std::move(f)));
    }
    return fs;
  };

  Tape t1;
  Rng save = rng;
  std::vector<Var> fa = mk_feats(t1, false);
  std::vector<Var> fb = mk_feats(t1, false);
  Var d = decode(t1, params, fa, fb);
  CHECK(t1.val(d).dim(0) == kCs);
  CHECK(t1.val(d).dim(1) == 64);
  CHECK(t1.val(d).dim(2) == 64);

  rng = save;
  Tape t2;
  std::vector<Var> fa2 = mk_feats(t2, false);
  std::vector<Var> fb2 = mk_feats(t2, false);
  CHECK(bitwise_equal(t1.val(d), t2.val(decode(t2, params, fa2, fb2))));

  zero_all(params);
  Tape t3;
  Var dz = decode(t3, params, mk_feats(t3, true), mk_feats(t3, true));
  CHECK(t3.val(dz).max_abs() == 0.f);

  Tape t4;
  std::vector<Var> five = mk_feats(t4, true);
  five.pop_back();
  CHECK_THROWS_AS((void)decode(t4, params, five, mk_feats(t4, true)),
                  ValidationError);
}

TEST_CASE("heads and blend: forced masks and the blend identity") {
  SynthConfig cfg = garment_net_config(kNg, kNp, kCs);
  SynthParams params = init_synth_params(cfg, 17);
  Rng rng(29);
  Tensor fdec = random_uniform(rng, {kCs, 64, 64}, -1.f, 1.f);
  Tensor residue = random_uniform(rng, {kNg, 64, 64}, 0.f, 1.f);

  SUBCASE("saturated mask logits select fg or residue exactly") {
    params.head_mask.w.value.fill_(0.f);
    params.head_mask.b.value.fill_(40.f);  // sigmoid(40) == 1 in float
    Tape t;
    SynthOutputVars o =
        heads_and_blend(t, params, t.constant(fdec), t.constant(residue));
    CHECK(bitwise_equal(t.val(o.out), t.val(o.fg)));
    for (int i = 0; i < t.val(o.mask).numel(); ++i)
      CHECK(t.val(o.mask).data()[i] == 1.f);

    params.head_mask.b.value.fill_(-40.f);  // sigmoid(-40) == 0 in float
    Tape t2;
    SynthOutputVars o2 =
        heads_and_blend(t2, params, t2.constant(fdec), t2.constant(residue));
    // blend consistency: out - residue identically 0 where the mask is 0
    for (int i = 0; i < residue.numel(); ++i)
      CHECK(t2.val(o2.out).data()[i] == residue.data()[i]);
  }

  SUBCASE("random instance satisfies the elementwise blend identity") {
    Tape t;
    SynthOutputVars o =
        heads_and_blend(t, params, t.constant(fdec), t.constant(residue));
    const Tensor& out = t.val(o.out);
    const Tensor& fg = t.val(o.fg);
    const Tensor& m = t.val(o.mask);
    const int P = 64 * 64;
    for (int c = 0; c < kNg; ++c)
      for (int p = 0; p < P; ++p) {
        const double expect =
            double(m.data()[p]) * fg.data()[c * P + p] +
            (1.0 - double(m.data()[p])) * residue.data()[c * P + p];
        CHECK(out.data()[c * P + p] == doctest::Approx(expect).epsilon(1e-6));
        CHECK(m.data()[p] >= 0.f);
        CHECK(m.data()[p] <= 1.f);
      }
  }

  SUBCASE("residue dims must match") {
    Tape t;
    Tensor bad = Tensor::full({kNg, 32, 64}, 0.f);
    CHECK_THROWS_AS(
        (void)heads_and_blend(t, params, t.constant(fdec), t.constant(bad)),
        ValidationError);
  }
}

TEST_CASE("garment network output is a categorical distribution") {
  Rng rng(41);
  GarmentParsing g_s = rand_garment(rng, 64, 64);
  PoseMap p_s = rand_pose(rng, 64, 64), p_t = rand_pose(rng, 64, 64);
  FlowPyramid pyr = rand_pyramid(rng, 64, 64);
  Tensor residue = make_garment_residue(g_s.classes, {0});

  SynthParams params = init_synth_params(garment_net_config(kNg, kNp, kCs), 7);
  SynthOutput diag;
  Tensor out = garmentnet_forward(params, g_s, p_s, p_t, pyr, residue, &diag);
  REQUIRE(out.dim(0) == kNg);
  REQUIRE(out.dim(1) == 64);
  REQUIRE(out.dim(2) == 64);
  const int P = 64 * 64;
  for (int p = 0; p < P; ++p) {
    double sum = 0;
    for (int c = 0; c < kNg; ++c) {
      const float v = out.data()[c * P + p];
      CHECK(v >= 0.f);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  REQUIRE(diag.attention_gates.size() == 6);
  for (const Tensor& g : diag.attention_gates)
    for (int i = 0; i < g.numel(); ++i) {
      CHECK(g.data()[i] > 0.f);
      CHECK(g.data()[i] < 1.f);
    }

  Tensor out2 = garmentnet_forward(params, g_s, p_s, p_t, pyr, residue);
  CHECK(bitwise_equal(out, out2));
}

TEST_CASE("synthesis network output stays in range") {
  Rng rng(43);
  Image i_s = rand_image(rng, 64, 64);
  PoseMap p_s = rand_pose(rng, 64, 64), p_t = rand_pose(rng, 64, 64);
  GarmentParsing g_t = rand_garment(rng, 64, 64);
  FlowPyramid pyr = rand_pyramid(rng, 64, 64);
  Image residue = Image::make(random_uniform(rng, {3, 64, 64}, -1.f, 1.f));

  SynthParams params =
      init_synth_params(synthesis_net_config(kNg, kNp, kCs), 19);
  SynthOutput diag;
  Image out = synthesisnet_forward(params, i_s, p_s, g_t.classes, p_t, pyr,
                                   residue, &diag);
  REQUIRE(out.data.dim(0) == 3);
  REQUIRE(out.data.dim(1) == 64);
  for (int i = 0; i < out.data.numel(); ++i) {
    CHECK(out.data.data()[i] >= -1.f);
    CHECK(out.data.data()[i] <= 1.f);
  }
  // pre-activation blend identity from the diagnostics
  const int P = 64 * 64;
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < P; ++p) {
      const double expect =
          double(diag.mask.data()[p]) * diag.fg.data()[c * P + p] +
          (1.0 - double(diag.mask.data()[p])) * residue.data.data()[c * P + p];
      CHECK(diag.out.data()[c * P + p] ==
            doctest::Approx(expect).epsilon(1e-6));
    }

  Image out2 =
      synthesisnet_forward(params, i_s, p_s, g_t.classes, p_t, pyr, residue);
  CHECK(bitwise_equal(out.data, out2.data));

  // pyramid at the wrong base resolution is rejected
  FlowPyramid small = rand_pyramid(rng, 32, 32);
  CHECK_THROWS_AS((void)synthesisnet_forward(params, i_s, p_s, g_t.classes,
                                             p_t, small, residue),
                  ValidationError);
}

TEST_CASE("end-to-end gradients match finite differences") {
  Rng rng(47);
  Image i_s = rand_image(rng, 64, 64);
  PoseMap p_s = rand_pose(rng, 64, 64), p_t = rand_pose(rng, 64, 64);
  GarmentParsing g_t = rand_garment(rng, 64, 64);
  FlowPyramid pyr = rand_pyramid(rng, 64, 64);
  Image residue = Image::make(random_uniform(rng, {3, 64, 64}, -1.f, 1.f));
  Tensor target = random_uniform(rng, {3, 64, 64}, -0.8f, 0.8f);

  SynthParams params =
      init_synth_params(synthesis_net_config(kNg, kNp, kCs), 23);

  auto loss_value = [&]() -> double {
    Tape t;
    Var out = synthesis_forward_vars(t, params, i_s, p_s, g_t.classes, p_t,
                                     pyr, residue);
    Var diff = sub(out, t.constant(target));
    return t.val(mean_all(mul(diff, diff))).data()[0];
  };

  params.zero_grad();
  Tape t;
  Var out = synthesis_forward_vars(t, params, i_s, p_s, g_t.classes, p_t, pyr,
                                   residue);
  Var diff = sub(out, t.constant(target));
  t.backward(mean_all(mul(diff, diff)));

  Rng pick(59);
  double worst = 0;
  int checked = 0;
  for (auto& [name, p] : params.named()) {
    const int idx = pick.uniform_int(0, int(p->value.numel()) - 1);
    const float orig = p->value.data()[idx];
    const float eps = std::max(3e-3f, 5e-3f * std::abs(orig));
    p->value.data()[idx] = orig + eps;
    const float hi = p->value.data()[idx];
    const double lp = loss_value();
    p->value.data()[idx] = orig - eps;
    const float lo = p->value.data()[idx];
    const double lm = loss_value();
    p->value.data()[idx] = orig;
    const double fd = (lp - lm) / double(hi - lo);
    const double g = p->grad.data()[idx];
    const double err = std::abs(fd - g);
    const double tol = 1e-2 * std::max(std::abs(fd), std::abs(g)) + 2e-4;
    CHECK_MESSAGE(err <= tol, name, "[", idx, "]: fd=", fd, " grad=", g);
    if (err / (std::max(std::abs(fd), std::abs(g)) + 1e-12) > worst)
      worst = err / (std::max(std::abs(fd), std::abs(g)) + 1e-12);
    ++checked;
  }
  CHECK(checked > 100);  // every tensor in the model was probed
}

TEST_CASE("norm-free configuration trains end to end") {
  SynthConfig cfg = synthesis_net_config(kNg, kNp, kCs);
  cfg.use_norm = false;
  SynthParams params = init_synth_params(cfg, 31);
  CHECK(params.named().size() ==
        size_t(6 * 2 + 7 * 4 + 6 * 2 + 6 + 6 * 2 + 4));

  Rng rng(61);
  Image i_s = rand_image(rng, 64, 64);
  PoseMap p_s = rand_pose(rng, 64, 64), p_t = rand_pose(rng, 64, 64);
  GarmentParsing g_t = rand_garment(rng, 64, 64);
  FlowPyramid pyr = rand_pyramid(rng, 64, 64);
  Image residue = Image::make(random_uniform(rng, {3, 64, 64}, -1.f, 1.f));

  params.zero_grad();
  Tape t;
  Var out = synthesis_forward_vars(t, params, i_s, p_s, g_t.classes, p_t, pyr,
                                   residue);
  t.backward(mean_all(mul(out, out)));
  for (auto& [name, p] : params.named()) {
    REQUIRE(!p->grad.empty());
    CHECK(p->grad.all_finite());
  }
  CHECK(params.src_enc[0].conv.w.grad.max_abs() > 0.f);
  CHECK(params.tgt_enc[0].conv.w.grad.max_abs() > 0.f);
  CHECK(params.att_w[3].grad.max_abs() > 0.f);
}

}  // TEST_SUITE
