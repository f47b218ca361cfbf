#include <doctest.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "poseflow/config.hpp"
#include "poseflow/core_data.hpp"
#include "poseflow/dataio.hpp"
#include "poseflow/errors.hpp"
#include "poseflow/flow_net.hpp"
#include "poseflow/gradcheck.hpp"
#include "poseflow/toydata.hpp"
#include "poseflow/warp.hpp"

using namespace poseflow;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("poseflow_dataio_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<uint32_t>(a[i]) != std::bit_cast<uint32_t>(b[i]))
      return false;
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

Checkpoint small_checkpoint() {
  Rng rng(21);
  Checkpoint c;
  c.meta.stage = "flow";
  c.meta.epoch = 3;
  c.meta.config_hash = "00ff00ff00ff00ff";
  c.tensors.emplace_back("enc.w", random_uniform(rng, {4, 3, 3, 3}, -1.f, 1.f));
  c.tensors.emplace_back("enc.b", random_uniform(rng, {4}, -1.f, 1.f));
  c.tensors.emplace_back("head", random_uniform(rng, {2, 4, 1, 1}, -1.f, 1.f));
  return c;
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("image png round trip") {
  const fs::path dir = fresh_dir("img");
  const ToySample s = generate_toy_sample(5, 64);
  const fs::path p = dir / "img.png";
  write_image_png(p.string(), s.pair.source_image);

  const Image back = read_image_png(p.string());
  CHECK(back.data.same_shape(s.pair.source_image.data));
  // 8-bit quantization: round-to-nearest error is at most half a step.
  CHECK(max_abs_diff(back.data, s.pair.source_image.data) <= 1.0 / 255 + 1e-6);

  // Quantization is idempotent: rewriting the loaded image reproduces the
  // file byte for byte.
  const fs::path p2 = dir / "img2.png";
  write_image_png(p2.string(), back);
  CHECK(slurp(p) == slurp(p2));

  CHECK_THROWS_AS(read_image_png((dir / "missing.png").string()), DataError);
  spit(dir / "junk.png", "not a png at all");
  CHECK_THROWS_AS(read_image_png((dir / "junk.png").string()), DataError);
}

TEST_CASE("class and uv png round trips") {
  const fs::path dir = fresh_dir("classuv");
  const ToySample s = generate_toy_sample(6, 64);

  const fs::path cp = dir / "classes.png";
  write_class_png(cp.string(), s.pair.target_garment.classes);
  const Tensor back = read_class_png(cp.string(), kToyClasses);
  CHECK(bitwise_equal(back, s.pair.target_garment.classes));

  // The toy figure always has hair pixels (class 2); reading with a class
  // budget below that must fail rather than silently fold indices.
  CHECK_THROWS_AS(read_class_png(cp.string(), 2), DataError);
  CHECK_THROWS_AS(read_class_png((dir / "none.png").string(), 8), DataError);

  const fs::path up = dir / "uv.png";
  write_uv_png(up.string(), s.pair.target_pose.uv);
  const Tensor uv = read_uv_png(up.string());
  CHECK(uv.same_shape(s.pair.target_pose.uv));
  // 16-bit quantization: half a step is ~7.6e-6.
  CHECK(max_abs_diff(uv, s.pair.target_pose.uv) <= 1e-4);

  const fs::path gp = dir / "gray.png";
  write_gray_png(gp.string(), s.figure_mask);
  CHECK(fs::exists(gp));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const fs::path dir = fresh_dir("ckpt");
  const Checkpoint c = small_checkpoint();
  const fs::path p = dir / "a.ckpt";
  save_checkpoint(p.string(), c);

  const Checkpoint back = load_checkpoint(p.string());
  CHECK(back.meta.stage == c.meta.stage);
  CHECK(back.meta.epoch == c.meta.epoch);
  CHECK(back.meta.config_hash == c.meta.config_hash);
  REQUIRE(back.tensors.size() == c.tensors.size());
  for (size_t i = 0; i < c.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == c.tensors[i].first);
    CHECK(bitwise_equal(back.tensors[i].second, c.tensors[i].second));
  }
  CHECK(back.find("enc.w") != nullptr);
  CHECK(back.find("nope") == nullptr);

  // Serialization is a pure function of the contents.
  const fs::path p2 = dir / "b.ckpt";
  save_checkpoint(p2.string(), back);
  CHECK(slurp(p) == slurp(p2));
  // Atomic write leaves no temp file behind.
  CHECK(!fs::exists(p.string() + ".tmp"));
}

TEST_CASE("checkpoint rejects malformed archives") {
  const fs::path dir = fresh_dir("ckpt_bad");
  const fs::path p = dir / "a.ckpt";
  save_checkpoint(p.string(), small_checkpoint());
  const std::string good = slurp(p);

  {  // flipped magic byte
    std::string bad = good;
    bad[0] = 'X';
    spit(dir / "magic.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint((dir / "magic.ckpt").string()),
                    CheckpointError);
  }
  {  // same family, future version
    std::string bad = good;
    bad[5] = '9';
    spit(dir / "ver.ckpt", bad);
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "ver.ckpt").string()),
                         doctest::Contains("version"), CheckpointError);
  }
  {  // truncated payload
    spit(dir / "trunc.ckpt", good.substr(0, good.size() / 2));
    CHECK_THROWS_AS(load_checkpoint((dir / "trunc.ckpt").string()),
                    CheckpointError);
  }
  {  // unknown dtype: first record is "enc.w", dtype byte right after name
    std::string bad = good;
    const size_t dtype_at = 8 + 4 + 2 + std::strlen("enc.w");
    bad[dtype_at] = 7;
    spit(dir / "dtype.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint((dir / "dtype.ckpt").string()),
                    CheckpointError);
  }
  {  // trailing garbage
    spit(dir / "tail.ckpt", good + "xx");
    CHECK_THROWS_AS(load_checkpoint((dir / "tail.ckpt").string()),
                    CheckpointError);
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()),
                  CheckpointError);
}

TEST_CASE("checkpoint restores parameters bitwise") {
  const fs::path dir = fresh_dir("ckpt_params");
  FlowNetParams trained = init_flow_params(7, 3, 16);

  Checkpoint c;
  c.meta.stage = "flow";
  for (auto& [name, param] : trained.named())
    c.tensors.emplace_back(name, param->value);
  const fs::path p = dir / "flow.ckpt";
  save_checkpoint(p.string(), c);

  FlowNetParams fresh = init_flow_params(7, 999, 16);
  const Checkpoint loaded = load_checkpoint(p.string());
  assign_from_checkpoint(loaded, fresh.named());
  for (auto& [name, param] : fresh.named()) {
    const Tensor* src = loaded.find(name);
    REQUIRE(src != nullptr);
    CHECK(bitwise_equal(param->value, *src));
  }

  // A missing parameter is an error ...
  Checkpoint partial = loaded;
  partial.tensors.erase(partial.tensors.begin());
  CHECK_THROWS_AS(assign_from_checkpoint(partial, fresh.named()),
                  CheckpointError);
  // ... and so is a shape mismatch.
  Param odd;
  odd.value = Tensor({3, 3});
  std::vector<std::pair<std::string, Param*>> wrong = {
      {loaded.tensors[0].first, &odd}};
  CHECK_THROWS_AS(assign_from_checkpoint(loaded, wrong), CheckpointError);
  // Extra checkpoint tensors (optimizer state, say) are ignored.
  std::vector<std::pair<std::string, Param*>> subset = fresh.named();
  subset.resize(subset.size() / 2);
  CHECK_NOTHROW(assign_from_checkpoint(loaded, subset));
}

TEST_CASE("flow pyramid files round trip") {
  const fs::path dir = fresh_dir("flow");
  const ToySample s = generate_toy_sample(9, 64);
  const fs::path p = dir / "f.pflow";
  save_flow_pyramid(p.string(), s.gt_flow);

  const FlowPyramid back = load_flow_pyramid(p.string());
  REQUIRE(back.levels.size() == s.gt_flow.levels.size());
  for (size_t l = 0; l < back.levels.size(); ++l)
    CHECK(bitwise_equal(back.levels[l], s.gt_flow.levels[l]));

  const std::string good = slurp(p);
  std::string bad = good;
  bad[2] = 'x';
  spit(dir / "magic.pflow", bad);
  CHECK_THROWS_AS(load_flow_pyramid((dir / "magic.pflow").string()),
                  CheckpointError);
  spit(dir / "trunc.pflow", good.substr(0, good.size() - 7));
  CHECK_THROWS_AS(load_flow_pyramid((dir / "trunc.pflow").string()),
                  CheckpointError);
}

TEST_CASE("pair lists parse and reject malformed lines") {
  const fs::path dir = fresh_dir("pairs");
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"a/source", "a/target"}, {"b/source", "b/target"}};
  const fs::path p = dir / "pairs.txt";
  save_pair_list(p.string(), pairs);
  CHECK(load_pair_list(p.string()) == pairs);

  spit(dir / "blanks.txt", "x\ty\n\nz\tw\n");
  const auto loaded = load_pair_list((dir / "blanks.txt").string());
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[1].first == "z");

  spit(dir / "bad.txt", "x\ty\nno tab here\n");
  CHECK_THROWS_WITH_AS(load_pair_list((dir / "bad.txt").string()),
                       doctest::Contains("line 2"), DataError);
  CHECK_THROWS_AS(load_pair_list((dir / "missing.txt").string()), DataError);
}

TEST_CASE("config snapshot and parse are inverse") {
  RunConfig cfg;
  cfg.train.lr_gen = 3e-4f;
  cfg.train.seed = 42;
  cfg.train.teacher_forcing = true;
  cfg.train.disc_use_pose = true;
  cfg.train.lambda = {2.f, 0.25f, 0.01f, 1.f};
  cfg.train.selfsup.ratio = 0.5f;
  cfg.train.selfsup.ranges.rotation_deg = 10.f;
  cfg.train.selfsup.residue_background_classes = {0, 7};
  cfg.train.selfsup.fill = FillStrategy::Mean;
  cfg.train.stage1.s = {1.f, 0.5f, 0.25f, 0.f, 0.f, 0.f};
  cfg.num_parts = 9;
  cfg.image_size = 128;
  cfg.data_dir = "data/toy";
  cfg.flow_checkpoint = "out/checkpoints/flow.ckpt";

  const std::string snap = config_snapshot(cfg);
  const RunConfig back = parse_config_json(snap);
  CHECK(config_snapshot(back) == snap);
  CHECK(back.train.lr_gen == cfg.train.lr_gen);
  CHECK(back.train.seed == cfg.train.seed);
  CHECK(back.train.selfsup.residue_background_classes ==
        cfg.train.selfsup.residue_background_classes);
  CHECK(back.train.selfsup.fill == FillStrategy::Mean);
  CHECK(back.num_parts == 9);
  CHECK(back.flow_checkpoint == cfg.flow_checkpoint);

  // Defaults round-trip too, and {} parses to the defaults.
  const RunConfig defaults;
  CHECK(config_snapshot(parse_config_json("{}")) == config_snapshot(defaults));

  // The digest is a function of the snapshot alone.
  CHECK(config_hash(cfg) == config_hash(back));
  CHECK(config_hash(cfg).size() == 16);
  RunConfig other = cfg;
  other.train.seed = 43;
  CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_WITH_AS(parse_config_json("{\"bogus\": 1}"),
                       doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_AS(
      parse_config_json("{\"selfsup\": {\"ratio\": 0.5, \"bogus\": 1}}"),
      ConfigError);
  CHECK_THROWS_AS(parse_config_json("{\"stage1\": {\"s\": [1, 2, 3]}}"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_json("{\"lambda\": [1, 2]}"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("{\"seed\": -4}"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("{\"lr_gen\": \"fast\"}"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("{\"lr_gen\": -1.0}"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("{\"image_size\": 65}"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("{\"selfsup\": {\"ratio\": 1.5}}"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_json("{\"selfsup\": {\"fill\": \"magic\"}}"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_json("not json"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("[1,2]"), ConfigError);
}

TEST_CASE("toy generator is deterministic and identity-exact") {
  const ToySample a = generate_toy_sample(12, 64);
  const ToySample b = generate_toy_sample(12, 64);
  CHECK(bitwise_equal(a.pair.source_image.data, b.pair.source_image.data));
  CHECK(bitwise_equal(a.pair.target_image.data, b.pair.target_image.data));
  CHECK(bitwise_equal(a.gt_flow.levels[0], b.gt_flow.levels[0]));
  const ToySample c = generate_toy_sample(13, 64);
  CHECK(!bitwise_equal(a.pair.source_image.data, c.pair.source_image.data));

  ToyDeformation ident;
  ident.kind = ToyDeformation::Kind::Identity;
  const ToySample id = generate_toy_sample(12, 64, ident);
  CHECK(bitwise_equal(id.pair.target_image.data, id.pair.source_image.data));
  CHECK(bitwise_equal(id.pair.target_pose.parts, id.pair.source_pose.parts));
  for (const Tensor& level : id.gt_flow.levels)
    for (int64_t i = 0; i < level.numel(); ++i) CHECK(level[i] == 0.f);

  // Mask and part ids agree; sizes must be divisible by 64.
  for (int64_t i = 0; i < id.figure_mask.numel(); ++i)
    CHECK((id.figure_mask[i] == 1.f) == (id.part_ids[i] >= 0.f));
  CHECK_THROWS_AS(generate_toy_sample(1, 60), ValidationError);
}

TEST_CASE("toy translation flow is exact and rotations match the affines") {
  ToyDeformation tr;
  tr.kind = ToyDeformation::Kind::Translation;
  tr.dx = 5.f;
  tr.dy = 0.f;
  const ToySample s = generate_toy_sample(3, 64, tr);
  const Tensor& f0 = s.gt_flow.levels[0];
  const int size = 64;
  int inside = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (s.figure_mask.at(0, y, x) == 1.f) {
        ++inside;
        CHECK(f0.at(0, y, x) == 5.f);
        CHECK(f0.at(1, y, x) == 0.f);
        // The target literally samples the source five pixels to the right.
        if (x + 5 < size)
          for (int c = 0; c < 3; ++c)
            CHECK(s.pair.target_image.data.at(c, y, x) ==
                  s.pair.source_image.data.at(c, y, x + 5));
      } else {
        CHECK(f0.at(0, y, x) == 0.f);
        CHECK(f0.at(1, y, x) == 0.f);
      }
    }
  CHECK(inside > 300);  // the figure is a substantial part of the frame
  // Downsampled levels carry the same displacement in level units.
  for (int l = 1; l < 6; ++l) {
    const Tensor& fl = s.gt_flow.levels[static_cast<size_t>(l)];
    const float expect = 5.f / float(1 << l);
    for (int64_t i = 0; i < fl.numel() / 2; ++i) {
      const bool is_zero = fl[i] == 0.f;
      CHECK((is_zero || fl[i] == expect));
    }
  }

  // Per-part rotations: the published affines are the ground truth's own
  // source of the flow, so inverting them numerically (in double) must
  // reproduce the stored flow.
  ToyDeformation rot;
  rot.kind = ToyDeformation::Kind::PerPartRotation;
  rot.part_angles_deg = {10.f, -6.f, 4.f, 0.f, -8.f, 3.f};
  const ToySample r = generate_toy_sample(3, 64, rot);
  double max_err = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int k = static_cast<int>(r.part_ids.at(0, y, x));
      if (k < 0) continue;
      const auto& m = r.part_affines[static_cast<size_t>(k)];
      const double det = double(m[0]) * m[4] - double(m[1]) * m[3];
      const double rx = x - double(m[2]), ry = y - double(m[5]);
      const double qx = (m[4] * rx - m[1] * ry) / det;
      const double qy = (-m[3] * rx + m[0] * ry) / det;
      max_err = std::max(
          max_err, std::abs(qx - x - double(r.gt_flow.levels[0].at(0, y, x))));
      max_err = std::max(
          max_err, std::abs(qy - y - double(r.gt_flow.levels[0].at(1, y, x))));
      // Pose one-hot coherence: part k renders pose channel k+1.
      CHECK(r.pair.target_pose.parts.at(k + 1, y, x) == 1.f);
    }
  CHECK(max_err < 1e-4);
}

TEST_CASE("toy warp consistency stays within resampling tolerance") {
  for (uint64_t seed : {11ull, 29ull}) {
    const ToySample s = generate_toy_sample(seed, 64);
    const Tensor warped = inverse_warp(s.pair.source_image.data,
                                       s.gt_flow.levels[0],
                                       WarpPadding::Border);
    double sum = 0;
    int count = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (s.figure_mask.at(0, y, x) == 1.f) {
            sum += std::abs(double(warped.at(c, y, x)) -
                            double(s.pair.target_image.data.at(c, y, x)));
            ++count;
          }
    REQUIRE(count > 0);
    CHECK(sum / count <= 2.0 / 255);
  }

  // Residue conventions: the stored target residues are exactly what
  // make_residues derives with background class 0 kept.
  const ToySample s = generate_toy_sample(31, 64);
  const Tensor expect =
      make_garment_residue(s.pair.target_garment.classes, {0});
  CHECK(bitwise_equal(s.pair.target_residues.garment_residue, expect));
  const ValidationReport rep = validate_pair(s.pair);
  CHECK(rep.ok);
}

TEST_CASE("sample directories round trip and assemble pairs") {
  const fs::path dir = fresh_dir("samples");
  const ToySample s = generate_toy_sample(17, 64);
  const fs::path src = dir / "a" / "source";
  const fs::path tgt = dir / "a" / "target";
  save_sample_dir(src.string(), s.pair.source_image, s.pair.source_pose,
                  s.pair.source_garment);
  save_sample_dir(tgt.string(), s.pair.target_image, s.pair.target_pose,
                  s.pair.target_garment);

  const SampleFiles back =
      load_sample_dir(src.string(), kToyParts, kToyClasses);
  CHECK(max_abs_diff(back.image.data, s.pair.source_image.data) <=
        1.0 / 255 + 1e-6);
  CHECK(bitwise_equal(back.pose.parts, s.pair.source_pose.parts));
  CHECK(max_abs_diff(back.pose.uv, s.pair.source_pose.uv) <= 1e-4);
  CHECK(bitwise_equal(back.garment.classes, s.pair.source_garment.classes));

  const SamplePair pair =
      load_sample_pair(src.string(), tgt.string(), kToyParts, kToyClasses);
  CHECK(validate_pair(pair).ok);
  CHECK(bitwise_equal(
      pair.target_residues.garment_residue,
      make_garment_residue(pair.target_garment.classes, {0})));

  CHECK_THROWS_AS(load_sample_dir((dir / "nowhere").string(), kToyParts,
                                  kToyClasses),
                  DataError);
  fs::remove(tgt / "pose_uv.png");
  CHECK_THROWS_AS(load_sample_dir(tgt.string(), kToyParts, kToyClasses),
                  DataError);
}

TEST_CASE("finite-difference gradient suite passes") {
  const std::vector<GradCheckEntry> entries = run_gradcheck(17);
  CHECK(entries.size() >= 20);
  for (const auto& e : entries) {
    INFO(e.name, " max_err=", e.max_err);
    CHECK(e.max_err <= e.tol);
    CHECK(e.pass);
  }
  CHECK(gradcheck_all_pass(entries));
}

}  // TEST_SUITE
