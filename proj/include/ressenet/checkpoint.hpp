#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ressenet/arch.hpp"
#include "ressenet/common.hpp"
#include "ressenet/tensor.hpp"

// Checkpoint file: 8-byte magic, length-prefixed JSON manifest, then a flat
// sequence of named f32 arrays (u32 name length + bytes, u32 rank, i64
// extents, payload). All integers and floats are little-endian; the format
// targets the little-endian hosts this project runs on.

namespace ressenet {

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, TensorPtr<float>>> arrays;

  const TensorPtr<float>* find(const std::string& name) const {
    for (const auto& [key, t] : arrays)
      if (key == name) return &t;
    return nullptr;
  }
};

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'R', 'S', 'N', 'E', 'T', 'C', 'K', '1'};

template <typename U>
void write_pod(std::ofstream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::ifstream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw FormatError("checkpoint truncated");
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
  const std::string manifest = ck.manifest.dump();
  ckpt_detail::write_pod<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  ckpt_detail::write_pod<std::uint64_t>(os, ck.arrays.size());
  for (const auto& [name, t] : ck.arrays) {
    ckpt_detail::write_pod<std::uint32_t>(os,
                                          static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    ckpt_detail::write_pod<std::uint32_t>(
        os, static_cast<std::uint32_t>(t->shape.size()));
    for (auto d : t->shape) ckpt_detail::write_pod<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t->data.data()),
             static_cast<std::streamsize>(t->data.size() * sizeof(float)));
  }
  if (!os) throw IoError("write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[sizeof(ckpt_detail::kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, ckpt_detail::kMagic, sizeof(magic)) != 0)
    throw FormatError("'" + path + "' is not a checkpoint file (bad magic)");

  Checkpoint ck;
  const auto mlen = ckpt_detail::read_pod<std::uint64_t>(is);
  if (mlen > (1u << 20)) throw FormatError("manifest length implausible");
  std::string manifest(mlen, '\0');
  is.read(manifest.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw FormatError("checkpoint truncated in manifest");
  try {
    ck.manifest = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") +
                      e.what());
  }

  const auto count = ckpt_detail::read_pod<std::uint64_t>(is);
  if (count > (1u << 20)) throw FormatError("array count implausible");
  ck.arrays.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = ckpt_detail::read_pod<std::uint32_t>(is);
    if (nlen == 0 || nlen > 4096) throw FormatError("array name length corrupt");
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw FormatError("checkpoint truncated in array name");
    const auto rank = ckpt_detail::read_pod<std::uint32_t>(is);
    if (rank > 8) throw FormatError("array rank corrupt");
    Shape shape(rank);
    std::int64_t elems = 1;
    for (auto& d : shape) {
      d = ckpt_detail::read_pod<std::int64_t>(is);
      if (d < 1 || d > (1 << 28)) throw FormatError("array extent corrupt");
      elems *= d;
    }
    if (elems > (1LL << 31)) throw FormatError("array size implausible");
    std::vector<float> data(static_cast<std::size_t>(elems));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw FormatError("checkpoint truncated in array payload");
    ck.arrays.emplace_back(std::move(name),
                           make_tensor<float>(std::move(shape), std::move(data)));
  }
  return ck;
}

// Captures parameters and running statistics of a model as f32 arrays plus a
// manifest describing the architecture. Exact for float models.
template <typename T>
Checkpoint snapshot_model(const arch::ModelGraph<T>& m) {
  Checkpoint ck;
  ck.manifest = {{"format", 1},
                 {"variant", arch::variant_token(m.config.variant)},
                 {"depth", m.config.depth},
                 {"classes", m.config.num_classes},
                 {"r", m.config.r},
                 {"iteration", 0}};
  auto push = [&ck](const std::string& name, const TensorPtr<T>& t) {
    std::vector<float> data(t->data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      data[i] = static_cast<float>(t->data[i]);
    ck.arrays.emplace_back(name, make_tensor<float>(t->shape, std::move(data)));
  };
  for (const auto& [name, t] : m.named.params) push(name, t);
  for (const auto& [name, t] : m.named.buffers) push(name, t);
  return ck;
}

// Loads a checkpoint's arrays into a built model. The manifest must describe
// the same architecture; every model tensor must be present with the same
// shape. Arrays the model does not own (e.g. momentum state) are ignored.
template <typename T>
void fill_from_checkpoint(arch::ModelGraph<T>& m, const Checkpoint& ck) {
  const auto want = [&](const char* key, const nlohmann::json& v) {
    if (!ck.manifest.contains(key) || ck.manifest[key] != v) {
      throw FormatError("checkpoint manifest mismatch on '" + std::string(key) +
                        "': model wants " + v.dump() + ", file has " +
                        (ck.manifest.contains(key) ? ck.manifest[key].dump()
                                                   : std::string("nothing")));
    }
  };
  want("variant", arch::variant_token(m.config.variant));
  want("depth", m.config.depth);
  want("classes", m.config.num_classes);
  want("r", m.config.r);

  auto fill = [&ck](const std::string& name, const TensorPtr<T>& t) {
    const TensorPtr<float>* src = ck.find(name);
    if (!src) throw FormatError("checkpoint is missing array '" + name + "'");
    if ((*src)->shape != t->shape) {
      throw FormatError("checkpoint array '" + name + "' has shape " +
                        shape_str((*src)->shape) + ", model expects " +
                        shape_str(t->shape));
    }
    for (std::size_t i = 0; i < t->data.size(); ++i)
      t->data[i] = static_cast<T>((*src)->data[i]);
  };
  for (const auto& [name, t] : m.named.params) fill(name, t);
  for (const auto& [name, t] : m.named.buffers) fill(name, t);
}

}  // namespace ressenet
