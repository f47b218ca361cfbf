#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "poseflow/errors.hpp"
#include "poseflow/warp.hpp"

using namespace poseflow;

namespace {

// Flow whose fractional parts stay in [0.2, 0.8], away from bilinear kinks.
Tensor safe_flow(Rng& rng, int h, int w, float mag) {
  Tensor f({2, h, w});
  for (int64_t i = 0; i < f.numel(); ++i) {
    float whole = static_cast<float>(rng.uniform_int(-static_cast<int>(mag), static_cast<int>(mag)));
    f[i] = whole + rng.uniform(0.2f, 0.8f);
  }
  return f;
}

}  // namespace

TEST_SUITE("warp") {

TEST_CASE("zero flow is the exact identity") {
  Rng rng(31);
  Tensor src = random_uniform(rng, {3, 7, 9}, -1.f, 1.f);
  Tensor flow({2, 7, 9});
  Tensor out = inverse_warp(src, flow);
  for (int64_t i = 0; i < src.numel(); ++i) REQUIRE(out[i] == src[i]);
}

TEST_CASE("unit horizontal flow on a ramp shifts by one in the interior") {
  const int H = 6, W = 8;
  Tensor src({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) src.at(0, y, x) = static_cast<float>(x);
  Tensor flow({2, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) flow.at(0, y, x) = 1.f;
  Tensor out = inverse_warp(src, flow);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x + 1 < W; ++x) CHECK(out.at(0, y, x) == doctest::Approx(x + 1.0).epsilon(1e-6));
}

TEST_CASE("random warps match the four-corner oracle in both padding modes") {
  Rng rng(32);
  for (int rep = 0; rep < 20; ++rep) {
    const int h = rng.uniform_int(5, 16), w = rng.uniform_int(5, 16);
    const int c = rng.uniform_int(1, 4);
    Tensor src = random_uniform(rng, {c, h, w}, -1.f, 1.f);
    Tensor flow = safe_flow(rng, h, w, 3.f);
    for (WarpPadding mode : {WarpPadding::Border, WarpPadding::Zeros}) {
      Tensor out = inverse_warp(src, flow, mode);
      auto ref = oracle::warp(src, flow, mode == WarpPadding::Zeros);
      double max_err = 0.0;
      for (int64_t i = 0; i < out.numel(); ++i)
        max_err = std::max(max_err, std::fabs(out[i] - ref[static_cast<size_t>(i)]));
      CHECK(max_err < 1e-6);
    }
  }
}

TEST_CASE("linearity in src") {
  Rng rng(33);
  Tensor a = random_uniform(rng, {2, 6, 6}, -1.f, 1.f);
  Tensor b = random_uniform(rng, {2, 6, 6}, -1.f, 1.f);
  Tensor flow = safe_flow(rng, 6, 6, 2.f);
  const float ca = 0.7f, cb = -1.3f;
  Tensor mix({2, 6, 6});
  for (int64_t i = 0; i < mix.numel(); ++i) mix[i] = ca * a[i] + cb * b[i];
  Tensor wa = inverse_warp(a, flow), wb = inverse_warp(b, flow), wm = inverse_warp(mix, flow);
  for (int64_t i = 0; i < wm.numel(); ++i)
    CHECK(std::fabs(wm[i] - (ca * wa[i] + cb * wb[i])) < 1e-6);
}

TEST_CASE("shape mismatch raises") {
  Tensor src({3, 6, 6});
  Tensor flow({2, 5, 6});
  CHECK_THROWS_AS(inverse_warp(src, flow), ValidationError);
}

TEST_CASE("gradient check: 4x4 case under eps=1e-3") {
  Rng rng(34);
  Tensor src = random_uniform(rng, {2, 4, 4}, -1.f, 1.f);
  Tensor flow = safe_flow(rng, 4, 4, 1.f);
  CHECK(grad_check_warp(src, flow, 1e-3) < 1e-3);
  CHECK(grad_check_warp(src, flow, 1e-3, WarpPadding::Zeros) < 1e-3);
}

TEST_CASE("zero src gives zero flow gradient") {
  Rng rng(35);
  Tensor src({2, 5, 5});
  Tensor flow = safe_flow(rng, 5, 5, 1.f);
  CHECK(grad_check_warp(src, flow, 1e-3) < 1e-3);

  Tape t;
  Var sv = t.leaf(src), fv = t.leaf(flow);
  t.backward(mean_all(inverse_warp_v(sv, fv)));
  const Tensor* gf = t.grad_of(fv);
  REQUIRE(gf != nullptr);
  CHECK(gf->max_abs() == 0.f);
}

TEST_CASE("constant src with border padding gives ~zero flow gradient") {
  Rng rng(36);
  Tensor src = Tensor::full({3, 5, 5}, 0.4f);
  Tensor flow = safe_flow(rng, 5, 5, 2.f);
  Tape t;
  Var sv = t.leaf(src), fv = t.leaf(flow);
  t.backward(mean_all(inverse_warp_v(sv, fv)));
  const Tensor* gf = t.grad_of(fv);
  REQUIRE(gf != nullptr);
  CHECK(gf->max_abs() < 1e-7);
}

TEST_CASE("warp gradients also pass FD against the double oracle") {
  Rng rng(37);
  Tensor src = random_uniform(rng, {2, 5, 6}, -1.f, 1.f);
  Tensor flow = safe_flow(rng, 5, 6, 2.f);
  Tensor proj = random_uniform(rng, {2, 5, 6}, -1.f, 1.f);
  for (WarpPadding mode : {WarpPadding::Border, WarpPadding::Zeros}) {
    Tape t;
    Var sv = t.leaf(src), fv = t.leaf(flow);
    Var out = inverse_warp_v(sv, fv, mode);
    t.backward(sum_all(mul(out, t.constant(proj))));
    auto lossfn = [&]() {
      auto o = oracle::warp(src, flow, mode == WarpPadding::Zeros);
      double acc = 0.0;
      for (size_t i = 0; i < o.size(); ++i) acc += o[i] * proj[static_cast<int64_t>(i)];
      return acc;
    };
    double err =
        oracle::fd_max_rel_err({{&src, t.grad_of(sv)}, {&flow, t.grad_of(fv)}}, 1e-3, lossfn);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("resize_flow scaling rules") {
  // identical size: unchanged
  Rng rng(38);
  Tensor f = random_uniform(rng, {2, 8, 8}, -3.f, 3.f);
  Tensor same = resize_flow(f, 8, 8);
  for (int64_t i = 0; i < f.numel(); ++i) REQUIRE(same[i] == f[i]);

  // constant (2,4) halved -> (1,2)
  Tensor cf({2, 8, 8});
  for (int i = 0; i < 64; ++i) {
    cf[i] = 2.f;
    cf[64 + i] = 4.f;
  }
  Tensor half = resize_flow(cf, 4, 4);
  for (int i = 0; i < 16; ++i) {
    CHECK(half[i] == doctest::Approx(1.f).epsilon(1e-6));
    CHECK(half[16 + i] == doctest::Approx(2.f).epsilon(1e-6));
  }

  // down then up on constants is identity
  Tensor up = resize_flow(half, 8, 8);
  for (int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(cf[i]).epsilon(1e-6));

  // linear field x2 upsample matches bilinear-then-scale oracle
  Tensor lin({2, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      lin.at(0, y, x) = 0.5f * x - 0.25f * y;
      lin.at(1, y, x) = 0.1f * x + 0.3f * y;
    }
  Tensor up2 = resize_flow(lin, 8, 8);
  auto ref = oracle::resize_bilinear(lin, 8, 8);
  for (int64_t i = 0; i < up2.numel(); ++i)
    CHECK(std::fabs(up2[i] - 2.0 * ref[static_cast<size_t>(i)]) < 1e-6);
}

TEST_CASE("resize_flow_v gradient flows through scale") {
  Rng rng(39);
  Tensor f = random_uniform(rng, {2, 4, 4}, -2.f, 2.f);
  Tape t;
  Var fv = t.leaf(f);
  Var r = resize_flow_v(fv, 8, 8);
  Tensor proj = random_uniform(rng, {2, 8, 8}, -1.f, 1.f);
  t.backward(sum_all(mul(r, t.constant(proj))));
  auto lossfn = [&]() {
    Tensor rr = resize_flow(f, 8, 8);
    double acc = 0.0;
    for (int64_t i = 0; i < rr.numel(); ++i)
      acc += static_cast<double>(rr[i]) * proj[i];
    return acc;
  };
  double err = oracle::fd_max_rel_err({{&f, t.grad_of(fv)}}, 1e-3, lossfn);
  CHECK(err < 2e-3);
}

}  // TEST_SUITE
