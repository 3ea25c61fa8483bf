#pragma once

// Binary checkpoint layout, all integers little-endian:
//   "CLARCKPT" | u32 version | u64 manifest length | manifest JSON
//   | u32 parameter count | per parameter: u32 name length, name, u32 rank,
//     u64 dims[rank], f64 values[] | u64 FNV-1a of everything before it

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clarify/errors.hpp"
#include "clarify/grounding.hpp"

namespace clarify {

inline constexpr std::string_view kCheckpointMagic = "CLARCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void raw(std::string_view s) { out_.append(s); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  const std::string& bytes() const { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  std::string_view raw(std::size_t n) {
    if (n > in_.size() - pos_) throw CheckpointError("checkpoint is truncated");
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(raw(n));
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::uint64_t get(int n) {
    const auto s = raw(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Extra manifest fields (training config, metrics) are carried through untouched.
inline std::string serialize_checkpoint(GroundingModel& model, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest = extra;
  manifest["encoder"] = to_json(model.config());
  manifest["vocabulary"] = model.vocabulary().tokens();
  manifest["objectness"] = {{"score_threshold", model.objectness().score_threshold},
                            {"nms_threshold", model.objectness().nms_threshold},
                            {"deviation_threshold", model.objectness().deviation_threshold}};
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const std::string m = manifest.dump();
  w.u64(m.size());
  w.raw(m);
  const ParameterSet params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (Parameter* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) w.u64(d);
    for (double v : p->value.data()) w.f64(v);
  }
  w.u64(detail::fnv1a(w.bytes()));
  return w.bytes();
}

struct LoadedCheckpoint {
  GroundingModel model;
  nlohmann::json manifest;
};

inline LoadedCheckpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 12 || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  detail::ByteReader r(bytes);
  r.raw(kCheckpointMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 8) throw CheckpointError("checkpoint is truncated");
  const auto body = bytes.substr(0, bytes.size() - 8);
  detail::ByteReader tail(bytes.substr(bytes.size() - 8));
  if (tail.u64() != detail::fnv1a(body)) throw CheckpointError("checkpoint checksum mismatch (corrupt or truncated)");

  detail::ByteReader b(body);
  b.raw(kCheckpointMagic.size() + 4);
  LoadedCheckpoint out;
  try {
    out.manifest = nlohmann::json::parse(b.raw(b.u64()));
    const EncoderConfig cfg = encoder_config_from_json(out.manifest.at("encoder"));
    out.model = GroundingModel(cfg, Vocabulary(out.manifest.at("vocabulary").get<std::vector<std::string>>()), 0);
    const auto& obj = out.manifest.at("objectness");
    out.model.objectness().score_threshold = obj.at("score_threshold").get<double>();
    out.model.objectness().nms_threshold = obj.at("nms_threshold").get<double>();
    out.model.objectness().deviation_threshold = obj.at("deviation_threshold").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }

  const ParameterSet params = out.model.parameters();
  const std::uint32_t count = b.u32();
  if (count != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                          std::to_string(params.size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = b.str();
    Parameter* p = params.find(name);
    if (!p) throw CheckpointError("checkpoint parameter '" + name + "' is not part of the model");
    const std::uint32_t rank = b.u32();
    Shape shape(rank);
    for (auto& d : shape) d = b.u64();
    if (shape != p->value.shape()) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                            shape_string(p->value.shape()));
    }
    for (double& v : p->value.mutable_data()) v = b.f64();
  }
  if (b.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint parameters");
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, GroundingModel& model,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  const std::string bytes = serialize_checkpoint(model, extra);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace clarify
