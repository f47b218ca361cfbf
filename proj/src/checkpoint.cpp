#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "poseflow/dataio.hpp"
#include "poseflow/errors.hpp"

namespace poseflow {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace {

constexpr char kCkptMagic[8] = {'P', 'F', 'C', 'K', '0', '1', '\0', '\0'};
constexpr char kFlowMagic[8] = {'P', 'F', 'L', 'O', 'W', '0', '1', '\0'};
constexpr uint8_t kDtypeF32 = 0;

// ---- little-endian stream helpers ----

void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}
template <typename T>
void put_scalar(std::string& out, T v) {
  put_bytes(out, &v, sizeof v);
}

struct ByteReader {
  const uint8_t* p = nullptr;
  size_t n = 0, pos = 0;
  std::string what;
  void need(size_t k) const {
    if (pos + k > n)
      throw CheckpointError(what + ": truncated archive");
  }
  void read(void* dst, size_t k) {
    need(k);
    std::memcpy(dst, p + pos, k);
    pos += k;
  }
  template <typename T>
  T scalar() {
    T v;
    read(&v, sizeof v);
    return v;
  }
};

std::string read_file_bytes(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(std::string(what) + ": cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Single-writer atomicity: stage into a temp file, then rename into place.
void write_file_atomic(const std::string& path, const std::string& bytes,
                       const char* what) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(std::string(what) + ": cannot open " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError(std::string(what) + ": short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw CheckpointError(std::string(what) + ": rename failed: " +
                          ec.message());
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // Pass 1: the table size, so payload offsets are known up front.
  size_t table_size = 8 + 4;  // magic + record count
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff)
      throw CheckpointError("checkpoint: tensor name too long");
    table_size += 2 + name.size() + 1 + 1 +
                  4 * static_cast<size_t>(t.rank()) + 8;
  }
  std::string out;
  put_bytes(out, kCkptMagic, 8);
  put_scalar<uint32_t>(out, static_cast<uint32_t>(ckpt.tensors.size()));
  uint64_t offset = table_size;
  for (const auto& [name, t] : ckpt.tensors) {
    put_scalar<uint16_t>(out, static_cast<uint16_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put_scalar<uint8_t>(out, kDtypeF32);
    put_scalar<uint8_t>(out, static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      put_scalar<uint32_t>(out, static_cast<uint32_t>(t.dim(i)));
    put_scalar<uint64_t>(out, offset);
    offset += 4 * static_cast<uint64_t>(t.numel());
  }
  for (const auto& [name, t] : ckpt.tensors)
    put_bytes(out, t.data(), 4 * static_cast<size_t>(t.numel()));

  nlohmann::json meta;
  meta["stage"] = ckpt.meta.stage;
  meta["epoch"] = ckpt.meta.epoch;
  meta["config_hash"] = ckpt.meta.config_hash;
  const std::string meta_text = meta.dump();
  put_scalar<uint32_t>(out, static_cast<uint32_t>(meta_text.size()));
  put_bytes(out, meta_text.data(), meta_text.size());

  write_file_atomic(path, out, "checkpoint");
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file_bytes(path, "checkpoint");
  ByteReader r{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size(), 0,
               "checkpoint"};
  char magic[8];
  r.read(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0) {
    if (std::memcmp(magic, "PFCK", 4) == 0)
      throw CheckpointError("checkpoint: unsupported version in " + path);
    throw CheckpointError("checkpoint: bad magic in " + path);
  }
  const uint32_t n = r.scalar<uint32_t>();
  struct Rec {
    std::string name;
    std::vector<int> shape;
    uint64_t offset;
  };
  std::vector<Rec> recs(n);
  for (auto& rec : recs) {
    const uint16_t len = r.scalar<uint16_t>();
    rec.name.resize(len);
    r.read(rec.name.data(), len);
    const uint8_t dtype = r.scalar<uint8_t>();
    if (dtype != kDtypeF32)
      throw CheckpointError("checkpoint: unknown dtype " +
                            std::to_string(dtype) + " for " + rec.name);
    const uint8_t rank = r.scalar<uint8_t>();
    if (rank > 4)
      throw CheckpointError("checkpoint: bad rank for " + rec.name);
    rec.shape.resize(rank);
    for (auto& d : rec.shape) {
      const uint32_t v = r.scalar<uint32_t>();
      if (v == 0 || v > (1u << 30))
        throw CheckpointError("checkpoint: bad dim for " + rec.name);
      d = static_cast<int>(v);
    }
    rec.offset = r.scalar<uint64_t>();
  }
  Checkpoint ckpt;
  uint64_t expect = r.pos;
  for (const auto& rec : recs) {
    if (rec.offset != expect)
      throw CheckpointError("checkpoint: payload offset mismatch for " +
                            rec.name);
    Tensor t(rec.shape);
    r.read(t.data(), 4 * static_cast<size_t>(t.numel()));
    expect = r.pos;
    ckpt.tensors.emplace_back(rec.name, std::move(t));
  }
  const uint32_t meta_len = r.scalar<uint32_t>();
  std::string meta_text(meta_len, '\0');
  r.read(meta_text.data(), meta_len);
  if (r.pos != r.n)
    throw CheckpointError("checkpoint: trailing bytes in " + path);
  nlohmann::json meta = nlohmann::json::parse(meta_text, nullptr, false);
  if (meta.is_discarded() || !meta.is_object())
    throw CheckpointError("checkpoint: corrupt metadata in " + path);
  try {
    ckpt.meta.stage = meta.at("stage").get<std::string>();
    ckpt.meta.epoch = meta.at("epoch").get<int>();
    ckpt.meta.config_hash = meta.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  return ckpt;
}

void assign_from_checkpoint(
    const Checkpoint& ckpt,
    const std::vector<std::pair<std::string, Param*>>& params) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  for (const auto& [name, p] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError("checkpoint: missing tensor " + name);
    if (!it->second->same_shape(p->value))
      throw CheckpointError(
          "checkpoint: shape mismatch for " + name + ": " +
          Tensor::shape_str(it->second->shape()) + " vs " +
          Tensor::shape_str(p->value.shape()));
    p->value = *it->second;
  }
}

// ---- flow pyramid files ----

void save_flow_pyramid(const std::string& path, const FlowPyramid& pyr) {
  std::string out;
  put_bytes(out, kFlowMagic, 8);
  for (const Tensor& level : pyr.levels) {
    const int h = level.dim(1), w = level.dim(2);
    put_scalar<uint32_t>(out, static_cast<uint32_t>(h));
    put_scalar<uint32_t>(out, static_cast<uint32_t>(w));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        put_scalar<float>(out, level.at(0, y, x));
        put_scalar<float>(out, level.at(1, y, x));
      }
  }
  write_file_atomic(path, out, "flow file");
}

FlowPyramid load_flow_pyramid(const std::string& path) {
  const std::string bytes = read_file_bytes(path, "flow file");
  ByteReader r{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size(), 0,
               "flow file"};
  char magic[8];
  r.read(magic, 8);
  if (std::memcmp(magic, kFlowMagic, 8) != 0)
    throw CheckpointError("flow file: bad magic in " + path);
  std::vector<Tensor> levels;
  while (r.pos < r.n) {
    const uint32_t h = r.scalar<uint32_t>();
    const uint32_t w = r.scalar<uint32_t>();
    if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20))
      throw CheckpointError("flow file: bad level dims in " + path);
    Tensor level({2, static_cast<int>(h), static_cast<int>(w)});
    for (uint32_t y = 0; y < h; ++y)
      for (uint32_t x = 0; x < w; ++x) {
        level.at(0, static_cast<int>(y), static_cast<int>(x)) =
            r.scalar<float>();
        level.at(1, static_cast<int>(y), static_cast<int>(x)) =
            r.scalar<float>();
      }
    levels.push_back(std::move(level));
  }
  try {
    return FlowPyramid::make(std::move(levels));
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("flow file: ") + e.what() + " in " +
                          path);
  }
}

// ---- pair lists ----

std::vector<std::pair<std::string, std::string>> load_pair_list(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("pair list: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() ||
        line.find('\t', tab + 1) != std::string::npos)
      throw DataError("pair list: line " + std::to_string(lineno) +
                      " is not 'source<TAB>target' in " + path);
    pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return pairs;
}

void save_pair_list(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("pair list: cannot open " + path);
  for (const auto& [s, t] : pairs) f << s << '\t' << t << '\n';
  if (!f) throw DataError("pair list: write failed: " + path);
}

}  // namespace poseflow
