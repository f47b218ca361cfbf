#include "poseflow/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "poseflow/errors.hpp"
#include "poseflow/warp.hpp"

namespace poseflow {

void TrainConfig::validate() const {
  if (lr_gen <= 0.f || lr_disc <= 0.f)
    throw ConfigError("train config: learning rates must be > 0");
  if (adam_beta1 <= 0.f || adam_beta1 >= 1.f || adam_beta2 <= 0.f ||
      adam_beta2 >= 1.f)
    throw ConfigError("train config: adam betas must be in (0,1)");
  if (epochs_flow < 0 || epochs_garment < 0 || epochs_synthesis < 0)
    throw ConfigError("train config: epochs must be >= 0");
  if (batch_size <= 0) throw ConfigError("train config: batch size must be > 0");
  if (flow_width <= 0 || synth_width <= 0 || disc_width <= 0)
    throw ConfigError("train config: widths must be > 0");
  for (float l : lambda)
    if (l < 0.f || !std::isfinite(l))
      throw ConfigError("train config: lambda weights must be >= 0");
  stage1.validate();
  charbonnier.validate();
}

void write_loss_csv(const LossHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("loss csv: cannot open " + path);
  out << "step,term,value\n";
  char buf[64];
  for (const LogRow& r : history) {
    std::snprintf(buf, sizeof(buf), "%.10g", r.value);
    out << r.step << ',' << r.term << ',' << buf << '\n';
  }
  if (!out) throw DataError("loss csv: write failed for " + path);
}

// ---- Adam ----

void adam_step(const std::vector<std::pair<std::string, Param*>>& params,
               AdamState& state, float lr, float beta1, float beta2,
               float eps) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(double(beta1), double(state.t));
  const double bc2 = 1.0 - std::pow(double(beta2), double(state.t));
  for (const auto& [name, p] : params) {
    p->ensure_grad();
    auto& [m, v] = state.moments[name];
    if (!m.same_shape(p->value)) {
      m = Tensor::zeros_like(p->value);
      v = Tensor::zeros_like(p->value);
    }
    float* w = p->value.data();
    const float* g = p->grad.data();
    float* md = m.data();
    float* vd = v.data();
    const int64_t n = p->value.numel();
    for (int64_t i = 0; i < n; ++i) {
      md[i] = beta1 * md[i] + (1.f - beta1) * g[i];
      vd[i] = beta2 * vd[i] + (1.f - beta2) * g[i] * g[i];
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      w[i] -= float(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---- spectral normalization ----

namespace {

std::pair<int, int> unroll_dims(const Tensor& w) {
  if (w.rank() < 2) throw ValidationError("spectral norm: rank-2+ weight required");
  const int rows = w.dim(0);
  const int cols = int(w.numel() / rows);
  return {rows, cols};
}

void normalize_vec(Tensor& x) {
  double n = 0;
  for (int64_t i = 0; i < x.numel(); ++i) n += double(x[i]) * x[i];
  n = std::sqrt(n);
  if (n < 1e-12) return;
  x.scale_(float(1.0 / n));
}

}  // namespace

void spectral_power_iterate(const Tensor& w, Tensor& u, Tensor& v, int iters) {
  auto [rows, cols] = unroll_dims(w);
  if (u.numel() != rows || v.numel() != cols)
    throw ValidationError("spectral norm: buffer sizes disagree with weight");
  const float* wd = w.data();
  for (int it = 0; it < iters; ++it) {
    for (int j = 0; j < cols; ++j) {
      double acc = 0;
      for (int i = 0; i < rows; ++i) acc += double(u[i]) * wd[i * cols + j];
      v[j] = float(acc);
    }
    normalize_vec(v);
    for (int i = 0; i < rows; ++i) {
      double acc = 0;
      for (int j = 0; j < cols; ++j) acc += double(wd[i * cols + j]) * v[j];
      u[i] = float(acc);
    }
    normalize_vec(u);
  }
}

float spectral_sigma_estimate(const Tensor& w, const Tensor& u,
                              const Tensor& v) {
  auto [rows, cols] = unroll_dims(w);
  const float* wd = w.data();
  double acc = 0;
  for (int i = 0; i < rows; ++i) {
    double row = 0;
    for (int j = 0; j < cols; ++j) row += double(wd[i * cols + j]) * v[j];
    acc += double(u[i]) * row;
  }
  return float(acc);
}

Tensor spectral_normalize(const Tensor& w, int power_iters, uint64_t seed) {
  if (power_iters < 1)
    throw ConfigError("spectral norm: power_iters must be >= 1");
  auto [rows, cols] = unroll_dims(w);
  Rng rng(seed);
  Tensor u = random_normal(rng, {rows}, 0.f, 1.f);
  normalize_vec(u);
  Tensor v({cols});
  spectral_power_iterate(w, u, v, power_iters);
  const float sigma = spectral_sigma_estimate(w, u, v);
  Tensor out = w;
  out.scale_(1.f / std::max(sigma, 1e-12f));
  return out;
}

Var spectral_scale(Tape& tape, Var w, const Tensor& u, const Tensor& v) {
  const Tensor& wv = tape.val(w);
  auto [rows, cols] = unroll_dims(wv);
  if (u.numel() != rows || v.numel() != cols)
    throw ValidationError("spectral scale: buffer sizes disagree with weight");
  Tensor outer(wv.shape());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) outer[i * cols + j] = u[i] * v[j];
  Var sigma = sum_all(mul(w, tape.constant(std::move(outer))));
  return scale_by(w, pow_scalar(sigma, -1.f));
}

// ---- discriminator ----

namespace {

// Iterate until the sigma estimate stops improving. Plain fixed-count
// iteration converges at sigma2/sigma1 per step, which is slow when the top
// singular values cluster (typical for freshly initialized convs).
void power_iterate_to_convergence(const Tensor& w, Tensor& u, Tensor& v,
                                  int max_iters) {
  float prev = -1.f;
  for (int k = 0; k < max_iters; ++k) {
    spectral_power_iterate(w, u, v, 1);
    const float cur = spectral_sigma_estimate(w, u, v);
    if (k > 0 && std::abs(cur - prev) <= 1e-5f * std::max(cur, 1e-6f)) return;
    prev = cur;
  }
}

SnConv make_sn_conv(Rng& rng, int ci, int co, int k) {
  SnConv c;
  const float stdev = std::sqrt(2.f / (float(ci) * float(k) * float(k)));
  c.conv.w.value = random_normal(rng, {co, ci, k, k}, 0.f, stdev);
  c.conv.b.value = Tensor::full({co}, 0.f);
  c.u = random_normal(rng, {co}, 0.f, 1.f);
  normalize_vec(c.u);
  c.v = Tensor({ci * k * k});
  // warm up so the sigma estimate is already accurate at the first step
  power_iterate_to_convergence(c.conv.w.value, c.u, c.v, 500);
  return c;
}

}  // namespace

std::vector<std::pair<std::string, Param*>> DiscriminatorParams::named() {
  std::vector<std::pair<std::string, Param*>> out;
  for (int i = 0; i < 4; ++i) {
    out.emplace_back("disc" + std::to_string(i) + ".w", &convs[i].conv.w);
    out.emplace_back("disc" + std::to_string(i) + ".b", &convs[i].conv.b);
  }
  out.emplace_back("head.w", &head.conv.w);
  out.emplace_back("head.b", &head.conv.b);
  return out;
}

void DiscriminatorParams::validate() const {
  if (in_channels <= 0 || width <= 0)
    throw ValidationError("discriminator: uninitialized params");
  auto* self = const_cast<DiscriminatorParams*>(this);
  for (auto& [name, p] : self->named()) {
    if (p->value.empty())
      throw ValidationError("discriminator: " + name + " is empty");
    if (!p->value.all_finite())
      throw ValidationError("discriminator: " + name + " is not finite");
  }
  if (convs[0].conv.w.value.dim(1) != in_channels)
    throw ValidationError("discriminator: input channels disagree");
}

void DiscriminatorParams::zero_grad() {
  for (auto& [name, p] : named()) p->zero_grad();
}

DiscriminatorParams init_disc_params(int in_channels, uint64_t seed,
                                     int width) {
  if (in_channels <= 0) throw ConfigError("discriminator: in_channels must be > 0");
  if (width <= 0) throw ConfigError("discriminator: width must be > 0");
  Rng rng(seed);
  DiscriminatorParams d;
  d.in_channels = in_channels;
  d.width = width;
  int ci = in_channels;
  for (int i = 0; i < 4; ++i) {
    const int co = width << i;
    d.convs[i] = make_sn_conv(rng, ci, co, 4);
    ci = co;
  }
  d.head = make_sn_conv(rng, ci, 1, 1);
  return d;
}

Var disc_forward_vars(Tape& tape, DiscriminatorParams& params, Var input,
                      bool update_power, bool freeze) {
  params.validate();
  const Tensor& iv = tape.val(input);
  if (iv.rank() != 3 || iv.dim(0) != params.in_channels)
    throw ValidationError("discriminator: input has " +
                          Tensor::shape_str(iv.shape()) + ", expected " +
                          std::to_string(params.in_channels) + " channels");
  auto layer = [&](Var x, SnConv& c, int stride, int pad) {
    if (update_power) spectral_power_iterate(c.conv.w.value, c.u, c.v, 1);
    Var w = freeze ? tape.constant(c.conv.w.value) : tape.param(c.conv.w);
    Var wbar = spectral_scale(tape, w, c.u, c.v);
    Var b = freeze ? tape.constant(c.conv.b.value) : tape.param(c.conv.b);
    return conv2d(x, wbar, b, stride, pad);
  };
  Var x = input;
  for (int i = 0; i < 4; ++i) x = leaky_relu(layer(x, params.convs[i], 2, 1), 0.2f);
  return layer(x, params.head, 1, 0);
}

void disc_refresh_power(DiscriminatorParams& params, int iters) {
  for (SnConv& c : params.convs)
    power_iterate_to_convergence(c.conv.w.value, c.u, c.v, iters);
  power_iterate_to_convergence(params.head.conv.w.value, params.head.u,
                               params.head.v, iters);
}

float disc_max_normalized_sigma(const DiscriminatorParams& params) {
  float worst = 0.f;
  auto probe = [&](const SnConv& c) {
    // divide by the running sigma estimate, then measure the true spectral
    // norm of the result with a long, freshly seeded power iteration
    const float est = spectral_sigma_estimate(c.conv.w.value, c.u, c.v);
    Tensor wn = c.conv.w.value;
    wn.scale_(1.f / std::max(est, 1e-12f));
    auto [rows, cols] = unroll_dims(wn);
    Rng rng(7);
    Tensor u = random_normal(rng, {rows}, 0.f, 1.f);
    normalize_vec(u);
    Tensor v({cols});
    spectral_power_iterate(wn, u, v, 50);
    worst = std::max(worst, spectral_sigma_estimate(wn, u, v));
  };
  for (const SnConv& c : params.convs) probe(c);
  probe(params.head);
  return worst;
}

// ---- shared loop plumbing ----

namespace {

void check_dataset(const std::vector<SamplePair>& ds) {
  if (ds.empty()) throw ConfigError("training: dataset is empty");
  for (size_t i = 0; i < ds.size(); ++i) {
    ValidationReport r = validate_pair(ds[i]);
    if (!r.ok)
      throw DataError("training: pair " + std::to_string(i) + ": " +
                      r.violation);
  }
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[size_t(i)], idx[size_t(rng.uniform_int(0, i))]);
  return idx;
}

std::string batch_desc(const std::vector<int>& order, size_t b0, size_t b1) {
  std::ostringstream os;
  for (size_t k = b0; k < b1; ++k) os << (k > b0 ? "," : "") << order[k];
  return os.str();
}

[[noreturn]] void abort_nonfinite(const char* stage, int step,
                                  const std::string& batch) {
  throw TrainError(std::string(stage) + " training: non-finite loss at step " +
                   std::to_string(step) + " (batch samples " + batch + ")");
}

Var disc_input(Tape& tape, Var image, const PoseMap& pose, bool use_pose) {
  if (!use_pose) return image;
  return concat_c({image, tape.constant(pose.parts), tape.constant(pose.uv)});
}

}  // namespace

// ---- stage loops ----

LossHistory train_flow(const std::vector<SamplePair>& dataset,
                       FlowNetParams& params, const FeatureExtractor& fx,
                       const TrainConfig& cfg, const EpochHook& hook) {
  cfg.validate();
  check_dataset(dataset);
  params.validate();
  const int np = dataset[0].source_pose.num_parts();
  if (params.in_channels != 3 + 2 * (np + 2))
    throw ConfigError("flow training: params built for a different part count");

  SelfSupConfig ss = cfg.selfsup;
  ss.direction = SubstituteDirection::TargetFromSource;
  Rng rng(cfg.seed);
  AdamState adam;
  LossHistory hist;
  int step = 0;
  const int n = int(dataset.size());
  for (int epoch = 0; epoch < cfg.epochs_flow; ++epoch) {
    std::vector<int> order = shuffled_indices(n, rng);
    double epoch_sum = 0;
    int epoch_steps = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += size_t(cfg.batch_size)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch_size));
      Tape tape;
      Var total;
      double photo0 = 0;
      for (size_t k = b0; k < b1; ++k) {
        SamplePair p = maybe_substitute(dataset[size_t(order[k])], ss, rng);
        Tensor in = flow_input(p.source_image, p.source_pose, p.target_pose);
        std::vector<Var> flows = flow_forward_vars(tape, params, in);
        StageOneBreakdown bd =
            stage1_loss(p.source_image.data, p.target_image.data, flows,
                        cfg.stage1, cfg.charbonnier, fx);
        total = total.valid() ? add(total, bd.total) : bd.total;
        photo0 += bd.photometric[0];
      }
      total = mul_scalar(total, 1.f / float(b1 - b0));
      const double lv = tape.val(total)[0];
      if (!std::isfinite(lv))
        abort_nonfinite("flow", step, batch_desc(order, b0, b1));
      params.zero_grad();
      tape.backward(total);
      adam_step(params.named(), adam, cfg.lr_gen, cfg.adam_beta1,
                cfg.adam_beta2);
      hist.push_back({step, "stage1_total", lv});
      hist.push_back({step, "photometric0", photo0 / double(b1 - b0)});
      epoch_sum += lv;
      ++epoch_steps;
      ++step;
    }
    hist.push_back({step - 1, "epoch_mean", epoch_sum / std::max(1, epoch_steps)});
    if (hook) hook(epoch, hist);
  }
  return hist;
}

LossHistory train_garment(const std::vector<SamplePair>& dataset,
                          FlowNetParams& flow, SynthParams& params,
                          const TrainConfig& cfg, const EpochHook& hook) {
  cfg.validate();
  check_dataset(dataset);
  flow.validate();
  params.validate();
  const int np = dataset[0].source_pose.num_parts();
  const int ng = dataset[0].source_garment.num_classes();
  if (params.cfg.src_channels != ng + np + 2 ||
      params.cfg.tgt_channels != np + 2 || params.cfg.out_channels != ng)
    throw ConfigError("garment training: params do not match the dataset");
  for (const SamplePair& p : dataset)
    if (p.target_residues.garment_residue.empty())
      throw DataError("garment training: pair lacks a garment residue");

  Rng rng(cfg.seed);
  AdamState adam;
  LossHistory hist;
  int step = 0;
  const int n = int(dataset.size());
  for (int epoch = 0; epoch < cfg.epochs_garment; ++epoch) {
    std::vector<int> order = shuffled_indices(n, rng);
    double epoch_sum = 0;
    int epoch_steps = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += size_t(cfg.batch_size)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch_size));
      Tape tape;
      Var total;
      for (size_t k = b0; k < b1; ++k) {
        const SamplePair& p = dataset[size_t(order[k])];
        FlowPyramid pyr =
            flow_forward(flow, p.source_image, p.source_pose, p.target_pose);
        SynthOutputVars diag;
        (void)garment_forward_vars(tape, params, p.source_garment,
                                   p.source_pose, p.target_pose, pyr,
                                   p.target_residues.garment_residue, &diag);
        Var ce = ce_with_logits(diag.out, p.target_garment.classes);
        total = total.valid() ? add(total, ce) : ce;
      }
      total = mul_scalar(total, 1.f / float(b1 - b0));
      const double lv = tape.val(total)[0];
      if (!std::isfinite(lv))
        abort_nonfinite("garment", step, batch_desc(order, b0, b1));
      params.zero_grad();
      tape.backward(total);
      adam_step(params.named(), adam, cfg.lr_gen, cfg.adam_beta1,
                cfg.adam_beta2);
      hist.push_back({step, "garment_ce", lv});
      epoch_sum += lv;
      ++epoch_steps;
      ++step;
    }
    hist.push_back({step - 1, "epoch_mean", epoch_sum / std::max(1, epoch_steps)});
    if (hook) hook(epoch, hist);
  }
  return hist;
}

LossHistory train_synthesis(const std::vector<SamplePair>& dataset,
                            FlowNetParams& flow, SynthParams& garment,
                            SynthParams& params, DiscriminatorParams& disc,
                            const FeatureExtractor& fx, const TrainConfig& cfg,
                            const EpochHook& hook) {
  cfg.validate();
  check_dataset(dataset);
  flow.validate();
  garment.validate();
  params.validate();
  const int np = dataset[0].source_pose.num_parts();
  const int ng = dataset[0].source_garment.num_classes();
  if (params.cfg.src_channels != 3 + np + 2 ||
      params.cfg.tgt_channels != ng + np + 2 || params.cfg.out_channels != 3)
    throw ConfigError("synthesis training: params do not match the dataset");
  const bool use_gan = cfg.lambda[3] > 0.f;
  if (use_gan) {
    disc.validate();
    const int expect = cfg.disc_use_pose ? 3 + np + 2 : 3;
    if (disc.in_channels != expect)
      throw ConfigError("synthesis training: discriminator input channels "
                        "do not match the configuration");
  }
  for (const SamplePair& p : dataset)
    if (p.target_residues.garment_residue.empty() ||
        p.target_residues.image_residue.data.empty())
      throw DataError("synthesis training: pair lacks residues");

  SelfSupConfig ss = cfg.selfsup;
  ss.direction = SubstituteDirection::SourceFromTarget;
  Rng rng(cfg.seed);
  AdamState adam_g, adam_d;
  LossHistory hist;
  int step = 0;
  const int n = int(dataset.size());

  struct Prep {
    SamplePair p;
    FlowPyramid pyr;
    Tensor g_hat;
  };

  for (int epoch = 0; epoch < cfg.epochs_synthesis; ++epoch) {
    std::vector<int> order = shuffled_indices(n, rng);
    double epoch_sum = 0;
    int epoch_steps = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += size_t(cfg.batch_size)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch_size));
      const float inv_b = 1.f / float(b1 - b0);

      std::vector<Prep> preps;
      preps.reserve(b1 - b0);
      for (size_t k = b0; k < b1; ++k) {
        Prep pr;
        pr.p = maybe_substitute(dataset[size_t(order[k])], ss, rng);
        pr.pyr = flow_forward(flow, pr.p.source_image, pr.p.source_pose,
                              pr.p.target_pose);
        pr.g_hat = cfg.teacher_forcing
                       ? pr.p.target_garment.classes
                       : garmentnet_forward(garment, pr.p.source_garment,
                                            pr.p.source_pose, pr.p.target_pose,
                                            pr.pyr,
                                            pr.p.target_residues.garment_residue);
        preps.push_back(std::move(pr));
      }

      if (use_gan) {
        Tape td;
        Var dloss;
        bool first = true;
        for (const Prep& pr : preps) {
          Image fake = synthesisnet_forward(
              params, pr.p.source_image, pr.p.source_pose, pr.g_hat,
              pr.p.target_pose, pr.pyr, pr.p.target_residues.image_residue);
          Var dr = disc_forward_vars(
              td, disc,
              disc_input(td, td.constant(pr.p.target_image.data),
                         pr.p.target_pose, cfg.disc_use_pose),
              first, false);
          Var df = disc_forward_vars(
              td, disc,
              disc_input(td, td.constant(fake.data), pr.p.target_pose,
                         cfg.disc_use_pose),
              false, false);
          first = false;
          Var term = lsgan_losses(dr, df).disc;
          dloss = dloss.valid() ? add(dloss, term) : term;
        }
        dloss = mul_scalar(dloss, inv_b);
        const double dv = td.val(dloss)[0];
        if (!std::isfinite(dv))
          abort_nonfinite("discriminator", step, batch_desc(order, b0, b1));
        disc.zero_grad();
        td.backward(dloss);
        adam_step(disc.named(), adam_d, cfg.lr_disc, cfg.adam_beta1,
                  cfg.adam_beta2);
        disc_refresh_power(disc);
        hist.push_back({step, "disc", dv});
      }

      Tape tg;
      Var gtotal;
      double l1_sum = 0, feat_sum = 0, tex_sum = 0, gan_sum = 0;
      for (const Prep& pr : preps) {
        Var ihat = synthesis_forward_vars(tg, params, pr.p.source_image,
                                          pr.p.source_pose, pr.g_hat,
                                          pr.p.target_pose, pr.pyr,
                                          pr.p.target_residues.image_residue);
        Var timg = tg.constant(pr.p.target_image.data);
        Var sample;
        Var l1 = l1_loss(ihat, timg);
        l1_sum += tg.val(l1)[0];
        if (cfg.lambda[0] > 0.f) sample = mul_scalar(l1, cfg.lambda[0]);
        if (cfg.lambda[1] > 0.f) {
          Var feat = vgg_feature_loss(ihat, timg, fx);
          feat_sum += tg.val(feat)[0];
          Var term = mul_scalar(feat, cfg.lambda[1]);
          sample = sample.valid() ? add(sample, term) : term;
        }
        if (cfg.lambda[2] > 0.f) {
          std::vector<Var> taps = texture_loss(ihat, timg, fx);
          Var tex;
          for (Var t : taps) tex = tex.valid() ? add(tex, t) : t;
          tex_sum += tg.val(tex)[0];
          Var term = mul_scalar(tex, cfg.lambda[2]);
          sample = sample.valid() ? add(sample, term) : term;
        }
        if (use_gan) {
          Var dg = disc_forward_vars(
              tg, disc,
              disc_input(tg, ihat, pr.p.target_pose, cfg.disc_use_pose),
              false, true);
          Var gan = mse_to(dg, 1.f);
          gan_sum += tg.val(gan)[0];
          Var term = mul_scalar(gan, cfg.lambda[3]);
          sample = sample.valid() ? add(sample, term) : term;
        }
        if (!sample.valid()) sample = mul_scalar(l1, 0.f);  // all-zero lambdas
        gtotal = gtotal.valid() ? add(gtotal, sample) : sample;
      }
      gtotal = mul_scalar(gtotal, inv_b);
      const double gv = tg.val(gtotal)[0];
      if (!std::isfinite(gv))
        abort_nonfinite("synthesis", step, batch_desc(order, b0, b1));
      params.zero_grad();
      tg.backward(gtotal);
      adam_step(params.named(), adam_g, cfg.lr_gen, cfg.adam_beta1,
                cfg.adam_beta2);
      hist.push_back({step, "gen_total", gv});
      hist.push_back({step, "l1", l1_sum * inv_b});
      hist.push_back({step, "feature", feat_sum * inv_b});
      hist.push_back({step, "texture", tex_sum * inv_b});
      hist.push_back({step, "gan_gen", gan_sum * inv_b});
      epoch_sum += gv;
      ++epoch_steps;
      ++step;
    }
    hist.push_back({step - 1, "epoch_mean", epoch_sum / std::max(1, epoch_steps)});
    if (hook) hook(epoch, hist);
  }
  return hist;
}

}  // namespace poseflow
