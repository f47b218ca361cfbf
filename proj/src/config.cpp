#include <array>
#include <cstdint>
#include <set>
#include <string>

#include "json.hpp"
#include "poseflow/config.hpp"
#include "poseflow/errors.hpp"

namespace poseflow {

namespace {

using nlohmann::json;

void require_known_keys(const json& obj, const std::set<std::string>& known,
                        const std::string& where) {
  for (const auto& [key, value] : obj.items())
    if (!known.count(key))
      throw ConfigError("config: unknown key '" + where + key + "'");
}

template <typename T>
void get_number(const json& obj, const char* key, T& out,
                const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number())
    throw ConfigError("config: '" + where + key + "' must be a number");
  out = v.get<T>();
}

void get_flag(const json& obj, const char* key, bool& out,
              const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_boolean())
    throw ConfigError("config: '" + where + key + "' must be a boolean");
  out = v.get<bool>();
}

void get_string(const json& obj, const char* key, std::string& out,
                const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_string())
    throw ConfigError("config: '" + where + key + "' must be a string");
  out = v.get<std::string>();
}

template <size_t N>
void get_float_array(const json& obj, const char* key,
                     std::array<float, N>& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != N)
    throw ConfigError("config: '" + where + key + "' must be an array of " +
                      std::to_string(N) + " numbers");
  for (size_t i = 0; i < N; ++i) {
    if (!v[i].is_number())
      throw ConfigError("config: '" + where + key + "' must hold numbers");
    out[i] = v[i].get<float>();
  }
}

void parse_selfsup(const json& obj, SelfSupConfig& ss) {
  require_known_keys(obj,
                     {"ratio", "rotation_deg", "scale_lo", "scale_hi",
                      "translate_frac", "flip_p", "crop_min_frac",
                      "residue_background_classes", "fill"},
                     "selfsup.");
  get_number(obj, "ratio", ss.ratio, "selfsup.");
  get_number(obj, "rotation_deg", ss.ranges.rotation_deg, "selfsup.");
  get_number(obj, "scale_lo", ss.ranges.scale_lo, "selfsup.");
  get_number(obj, "scale_hi", ss.ranges.scale_hi, "selfsup.");
  get_number(obj, "translate_frac", ss.ranges.translate_frac, "selfsup.");
  get_number(obj, "flip_p", ss.ranges.flip_p, "selfsup.");
  get_number(obj, "crop_min_frac", ss.ranges.crop_min_frac, "selfsup.");
  if (obj.contains("residue_background_classes")) {
    const json& v = obj.at("residue_background_classes");
    if (!v.is_array())
      throw ConfigError(
          "config: 'selfsup.residue_background_classes' must be an array");
    ss.residue_background_classes.clear();
    for (const json& e : v) {
      if (!e.is_number_integer())
        throw ConfigError(
            "config: 'selfsup.residue_background_classes' must hold integers");
      ss.residue_background_classes.insert(e.get<int>());
    }
  }
  std::string fill;
  get_string(obj, "fill", fill, "selfsup.");
  if (!fill.empty()) {
    if (fill == "diffusion")
      ss.fill = FillStrategy::Diffusion;
    else if (fill == "mean")
      ss.fill = FillStrategy::Mean;
    else
      throw ConfigError("config: 'selfsup.fill' must be 'diffusion' or 'mean'");
  }
}

}  // namespace

RunConfig parse_config_json(const std::string& json_text) {
  json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded())
    throw ConfigError("config: not valid JSON");
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  require_known_keys(
      root,
      {"lr_gen", "lr_disc", "adam_beta1", "adam_beta2", "epochs_flow",
       "epochs_garment", "epochs_synthesis", "batch_size", "seed", "lambda",
       "flow_width", "synth_width", "disc_width", "disc_use_pose",
       "teacher_forcing", "selfsup", "stage1", "charbonnier", "num_parts",
       "num_classes", "image_size", "toy_count", "toy_max_angle_deg",
       "data_dir", "out_dir", "flow_checkpoint", "garment_checkpoint",
       "synth_checkpoint"},
      "");

  RunConfig cfg;
  TrainConfig& t = cfg.train;
  get_number(root, "lr_gen", t.lr_gen, "");
  get_number(root, "lr_disc", t.lr_disc, "");
  get_number(root, "adam_beta1", t.adam_beta1, "");
  get_number(root, "adam_beta2", t.adam_beta2, "");
  get_number(root, "epochs_flow", t.epochs_flow, "");
  get_number(root, "epochs_garment", t.epochs_garment, "");
  get_number(root, "epochs_synthesis", t.epochs_synthesis, "");
  get_number(root, "batch_size", t.batch_size, "");
  if (root.contains("seed")) {
    const json& v = root.at("seed");
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<int64_t>() < 0))
      throw ConfigError("config: 'seed' must be a non-negative integer");
    t.seed = v.get<uint64_t>();
  }
  get_float_array(root, "lambda", t.lambda, "");
  get_number(root, "flow_width", t.flow_width, "");
  get_number(root, "synth_width", t.synth_width, "");
  get_number(root, "disc_width", t.disc_width, "");
  get_flag(root, "disc_use_pose", t.disc_use_pose, "");
  get_flag(root, "teacher_forcing", t.teacher_forcing, "");
  if (root.contains("selfsup")) {
    if (!root.at("selfsup").is_object())
      throw ConfigError("config: 'selfsup' must be an object");
    parse_selfsup(root.at("selfsup"), t.selfsup);
  }
  if (root.contains("stage1")) {
    const json& v = root.at("stage1");
    if (!v.is_object()) throw ConfigError("config: 'stage1' must be an object");
    require_known_keys(v, {"s", "beta", "gamma"}, "stage1.");
    get_float_array(v, "s", t.stage1.s, "stage1.");
    get_float_array(v, "beta", t.stage1.beta, "stage1.");
    get_float_array(v, "gamma", t.stage1.gamma, "stage1.");
  }
  if (root.contains("charbonnier")) {
    const json& v = root.at("charbonnier");
    if (!v.is_object())
      throw ConfigError("config: 'charbonnier' must be an object");
    require_known_keys(v, {"eps", "alpha"}, "charbonnier.");
    get_number(v, "eps", t.charbonnier.eps, "charbonnier.");
    get_number(v, "alpha", t.charbonnier.alpha, "charbonnier.");
  }
  get_number(root, "num_parts", cfg.num_parts, "");
  get_number(root, "num_classes", cfg.num_classes, "");
  get_number(root, "image_size", cfg.image_size, "");
  get_number(root, "toy_count", cfg.toy_count, "");
  get_number(root, "toy_max_angle_deg", cfg.toy_max_angle_deg, "");
  get_string(root, "data_dir", cfg.data_dir, "");
  get_string(root, "out_dir", cfg.out_dir, "");
  get_string(root, "flow_checkpoint", cfg.flow_checkpoint, "");
  get_string(root, "garment_checkpoint", cfg.garment_checkpoint, "");
  get_string(root, "synth_checkpoint", cfg.synth_checkpoint, "");

  t.validate();
  t.selfsup.ranges.validate();
  if (t.selfsup.ratio < 0.f || t.selfsup.ratio > 1.f)
    throw ConfigError("config: 'selfsup.ratio' must be in [0,1]");
  if (cfg.num_parts < 2 || cfg.num_classes < 2)
    throw ConfigError("config: part/class counts must be >= 2");
  if (cfg.image_size <= 0 || cfg.image_size % 64 != 0)
    throw ConfigError("config: 'image_size' must be a positive multiple of 64");
  if (cfg.toy_count < 1) throw ConfigError("config: 'toy_count' must be >= 1");
  return cfg;
}

std::string config_snapshot(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  json root;
  root["lr_gen"] = t.lr_gen;
  root["lr_disc"] = t.lr_disc;
  root["adam_beta1"] = t.adam_beta1;
  root["adam_beta2"] = t.adam_beta2;
  root["epochs_flow"] = t.epochs_flow;
  root["epochs_garment"] = t.epochs_garment;
  root["epochs_synthesis"] = t.epochs_synthesis;
  root["batch_size"] = t.batch_size;
  root["seed"] = t.seed;
  root["lambda"] = t.lambda;
  root["flow_width"] = t.flow_width;
  root["synth_width"] = t.synth_width;
  root["disc_width"] = t.disc_width;
  root["disc_use_pose"] = t.disc_use_pose;
  root["teacher_forcing"] = t.teacher_forcing;
  json ss;
  ss["ratio"] = t.selfsup.ratio;
  ss["rotation_deg"] = t.selfsup.ranges.rotation_deg;
  ss["scale_lo"] = t.selfsup.ranges.scale_lo;
  ss["scale_hi"] = t.selfsup.ranges.scale_hi;
  ss["translate_frac"] = t.selfsup.ranges.translate_frac;
  ss["flip_p"] = t.selfsup.ranges.flip_p;
  ss["crop_min_frac"] = t.selfsup.ranges.crop_min_frac;
  ss["residue_background_classes"] = t.selfsup.residue_background_classes;
  ss["fill"] =
      t.selfsup.fill == FillStrategy::Diffusion ? "diffusion" : "mean";
  root["selfsup"] = ss;
  json s1;
  s1["s"] = t.stage1.s;
  s1["beta"] = t.stage1.beta;
  s1["gamma"] = t.stage1.gamma;
  root["stage1"] = s1;
  json cb;
  cb["eps"] = t.charbonnier.eps;
  cb["alpha"] = t.charbonnier.alpha;
  root["charbonnier"] = cb;
  root["num_parts"] = cfg.num_parts;
  root["num_classes"] = cfg.num_classes;
  root["image_size"] = cfg.image_size;
  root["toy_count"] = cfg.toy_count;
  root["toy_max_angle_deg"] = cfg.toy_max_angle_deg;
  root["data_dir"] = cfg.data_dir;
  root["out_dir"] = cfg.out_dir;
  root["flow_checkpoint"] = cfg.flow_checkpoint;
  root["garment_checkpoint"] = cfg.garment_checkpoint;
  root["synth_checkpoint"] = cfg.synth_checkpoint;
  return root.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = config_snapshot(cfg);
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace poseflow
