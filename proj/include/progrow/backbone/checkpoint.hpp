#pragma once

#include <bit>
#include <fstream>
#include <map>

#include "progrow/backbone/network.hpp"

namespace progrow {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointManifest {
  BackboneSpec spec;
  std::string spec_hash;
  std::size_t stage = 1;
  std::size_t stage_count = 1;
  std::size_t active_blocks = 0;
  HeadKind head_kind = HeadKind::Standard;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  nlohmann::json extra = nlohmann::json::object();
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CheckpointManifest, spec, spec_hash, stage, stage_count, active_blocks, head_kind, seed,
                                   epoch, extra)

// Single-file weight container.
//
// Layout (all integers little-endian):
//   8 bytes  magic "PGCKPT01"
//   u64      manifest byte length, followed by the manifest as UTF-8 JSON
//   u32      tensor count
//   per tensor, in name order:
//     u32 name length, name bytes
//     u8  kind (0 = trainable parameter, 1 = buffer)
//     u32 rank, then rank x u64 dims
//     IEEE-754 binary32 values, row-major
struct Checkpoint {
  struct Entry {
    bool buffer = false;
    Tensor<float> value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  CheckpointManifest manifest;
  std::map<std::string, Entry> tensors;

  static constexpr char kMagic[9] = "PGCKPT01";

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : tensors)
      if (!e.buffer) out.push_back(name);
    return out;
  }

  void validate_against(const BackboneSpec& spec) const {
    const auto expected = to_hex(spec_hash(spec));
    if (manifest.spec_hash != expected)
      throw CheckpointError("checkpoint spec hash " + manifest.spec_hash + " (" + manifest.spec.name +
                            ") does not match requested spec " + expected + " (" + spec.name + ")");
  }

  std::string encode() const;
  static Checkpoint decode(const std::string& bytes);

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    const auto bytes = encode();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode(bytes);
  }

  std::uint64_t weights_hash() const {
    Fnv1a h;
    for (const auto& [name, e] : tensors) {
      h.update(name);
      h.update(e.value.data(), e.value.size() * sizeof(float));
    }
    return h.digest();
  }
};

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_)
      throw CheckpointError("truncated checkpoint: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                            ", have " + std::to_string(bytes_.size() - pos_));
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string Checkpoint::encode() const {
  std::string out(kMagic, 8);
  const auto manifest_json = nlohmann::json(manifest).dump();
  detail::put_u64(out, manifest_json.size());
  out += manifest_json;
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, e] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u8(out, e.buffer ? 1 : 0);
    detail::put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) detail::put_u64(out, d);
    for (float v : e.value.vec()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Checkpoint Checkpoint::decode(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.str(8) != std::string(kMagic, 8)) throw CheckpointError("not a checkpoint file (bad magic)");
  Checkpoint ck;
  const auto mlen = r.uint(8);
  try {
    ck.manifest = nlohmann::json::parse(r.str(mlen)).get<CheckpointManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("invalid checkpoint manifest: ") + e.what());
  }
  const auto count = r.uint(4);
  for (std::uint64_t t = 0; t < count; ++t) {
    auto name = r.str(r.uint(4));
    Entry e;
    e.buffer = r.uint(1) != 0;
    const auto rank = r.uint(4);
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.uint(8);
    r.need(shape_size(shape) * 4);
    std::vector<float> data(shape_size(shape));
    for (auto& v : data) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
    e.value = Tensor<float>(std::move(shape), std::move(data));
    ck.tensors.emplace(std::move(name), std::move(e));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ck;
}

template <class T>
Checkpoint capture(PrefixNetwork<T>& net, std::uint64_t seed, std::size_t epoch) {
  Checkpoint ck;
  auto& m = ck.manifest;
  m.spec = net.spec();
  m.spec_hash = to_hex(spec_hash(net.spec()));
  m.stage = net.stage();
  m.stage_count = net.plan().stage_count;
  m.active_blocks = net.active_blocks();
  m.head_kind = net.head_kind();
  m.seed = seed;
  m.epoch = epoch;
  auto c = net.collect();
  for (const auto& p : c.params) ck.tensors[p.name] = {false, p.value->template cast<float>()};
  for (const auto& b : c.buffers) ck.tensors[b.name] = {true, b.value->template cast<float>()};
  return ck;
}

namespace detail {

template <class T>
void assign(const Checkpoint& ck, const std::string& name, Tensor<T>& dst) {
  auto it = ck.tensors.find(name);
  if (it == ck.tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
  if (it->second.value.shape() != dst.shape())
    throw CheckpointError("tensor '" + name + "' has shape " + shape_str(it->second.value.shape()) + ", network expects " +
                          shape_str(dst.shape()));
  dst = it->second.value.template cast<T>();
}

}  // namespace detail

// Copies the stem and the first `block_count` blocks from `ck` into `blocks`.
template <class T>
void restore_prefix(const Checkpoint& ck, OrderedBlockList<T>& blocks, std::size_t block_count) {
  ck.validate_against(blocks.spec());
  if (block_count > ck.manifest.active_blocks)
    throw CheckpointError("checkpoint holds " + std::to_string(ck.manifest.active_blocks) + " blocks, " +
                          std::to_string(block_count) + " requested");
  nn::Collector<T> c;
  blocks.stem().collect(c, "stem");
  for (std::size_t i = 0; i < block_count; ++i) blocks.block(i).collect(c, OrderedBlockList<T>::block_prefix(i));
  for (auto& p : c.params) detail::assign(ck, p.name, *p.value);
  for (auto& b : c.buffers) detail::assign(ck, b.name, *b.value);
}

// Restores every tensor of `net` (stem, active blocks, head) from `ck`.
template <class T>
void restore(const Checkpoint& ck, PrefixNetwork<T>& net) {
  ck.validate_against(net.spec());
  if (ck.manifest.active_blocks != net.active_blocks() || ck.manifest.head_kind != net.head_kind())
    throw CheckpointError("checkpoint stage layout does not match network");
  auto c = net.collect();
  for (auto& p : c.params) detail::assign(ck, p.name, *p.value);
  for (auto& b : c.buffers) detail::assign(ck, b.name, *b.value);
}

}  // namespace progrow

namespace progrow {

// Rebuilds the network a checkpoint was taken from and loads its weights.
template <class T>
PrefixNetwork<T> network_from_checkpoint(const Checkpoint& ck) {
  const auto& m = ck.manifest;
  auto blocks = build_backbone<T>(m.spec, m.seed);
  auto net = build_prefix<T>(blocks, make_plan(m.spec.block_count, m.stage_count), m.stage, m.head_kind, m.seed);
  restore(ck, net);
  return net;
}

}  // namespace progrow
