#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ressenet/common.hpp"
#include "ressenet/rng.hpp"
#include "ressenet/tensor.hpp"

namespace ressenet::data {

// Stream tags keep the per-sample augmentation keys disjoint from the
// per-epoch shuffle keys even when (epoch, index) collide numerically.
inline constexpr std::uint64_t kAugmentStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;

inline constexpr int kImageBytes = 3 * 32 * 32;

// Raw byte storage: 3072 bytes per sample, channel-major planes, exactly the
// on-disk CIFAR layout. Floats are materialized per batch, never for the
// whole set.
struct Dataset {
  int num_classes = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::vector<int> coarse_labels;  // CIFAR-100 only, else empty

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

struct Sample {
  TensorPtr<float> image;  // [3,32,32]
  int label = -1;
  int coarse_label = -1;
  bool normalized = false;
};

// Per-channel statistics over the training pixels in [0,1] units.
struct NormStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

struct Batch {
  TensorPtr<float> images;  // [N,3,32,32]
  std::vector<int> labels;
};

namespace detail {

inline std::vector<std::uint8_t> read_whole_file(
    const std::filesystem::path& path, std::int64_t record_bytes) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open dataset file " + path.string());
  std::vector<std::uint8_t> bytes(
      (std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.empty() ||
      static_cast<std::int64_t>(bytes.size()) % record_bytes != 0) {
    throw FormatError("truncated dataset file " + path.string() + ": " +
                      std::to_string(bytes.size()) +
                      " bytes is not a positive multiple of " +
                      std::to_string(record_bytes));
  }
  return bytes;
}

inline void append_cifar10_file(Dataset& ds, const std::filesystem::path& path) {
  const auto bytes = read_whole_file(path, 3073);
  const std::size_t n = bytes.size() / 3073;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * 3073;
    if (rec[0] > 9)
      throw FormatError("corrupt record " + std::to_string(r) + " in " +
                        path.string() + ": label " + std::to_string(rec[0]) +
                        " out of range for CIFAR-10");
    ds.labels.push_back(rec[0]);
    ds.pixels.insert(ds.pixels.end(), rec + 1, rec + 3073);
  }
}

inline void append_cifar100_file(Dataset& ds,
                                 const std::filesystem::path& path) {
  const auto bytes = read_whole_file(path, 3074);
  const std::size_t n = bytes.size() / 3074;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * 3074;
    if (rec[0] > 19)
      throw FormatError("corrupt record " + std::to_string(r) + " in " +
                        path.string() + ": coarse label " +
                        std::to_string(rec[0]) + " out of range for CIFAR-100");
    if (rec[1] > 99)
      throw FormatError("corrupt record " + std::to_string(r) + " in " +
                        path.string() + ": fine label " +
                        std::to_string(rec[1]) + " out of range for CIFAR-100");
    ds.coarse_labels.push_back(rec[0]);
    ds.labels.push_back(rec[1]);
    ds.pixels.insert(ds.pixels.end(), rec + 2, rec + 3074);
  }
}

}  // namespace detail

// The standard binary layout: five train files plus one test file, 3073-byte
// records (label, then R/G/B planes of 1024 bytes each).
inline DatasetPair load_cifar10(const std::string& dir) {
  namespace fs = std::filesystem;
  DatasetPair out;
  out.train.num_classes = 10;
  out.test.num_classes = 10;
  for (int i = 1; i <= 5; ++i)
    detail::append_cifar10_file(
        out.train, fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin"));
  detail::append_cifar10_file(out.test, fs::path(dir) / "test_batch.bin");
  return out;
}

// 3074-byte records: coarse label, fine label, then the pixel planes. Fine
// labels are the classification target; coarse labels ride along.
inline DatasetPair load_cifar100(const std::string& dir) {
  namespace fs = std::filesystem;
  DatasetPair out;
  out.train.num_classes = 100;
  out.test.num_classes = 100;
  detail::append_cifar100_file(out.train, fs::path(dir) / "train.bin");
  detail::append_cifar100_file(out.test, fs::path(dir) / "test.bin");
  return out;
}

inline Sample raw_sample(const Dataset& ds, std::int64_t index) {
  if (index < 0 || index >= ds.size())
    throw ConfigError("sample index " + std::to_string(index) +
                      " out of range for dataset of size " +
                      std::to_string(ds.size()));
  Sample s;
  s.image = zeros<float>({3, 32, 32});
  const std::uint8_t* src =
      ds.pixels.data() + static_cast<std::size_t>(index) * kImageBytes;
  for (int i = 0; i < kImageBytes; ++i)
    s.image->data[static_cast<std::size_t>(i)] =
        static_cast<float>(src[i]) / 255.0f;
  s.label = ds.labels[static_cast<std::size_t>(index)];
  if (!ds.coarse_labels.empty())
    s.coarse_label = ds.coarse_labels[static_cast<std::size_t>(index)];
  return s;
}

// Mean and population standard deviation per channel, accumulated in double
// in a fixed order so the result is reproducible bit for bit.
inline NormStats compute_norm_stats(const Dataset& ds) {
  if (ds.size() == 0)
    throw ConfigError("cannot compute normalization stats on an empty dataset");
  NormStats st;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sumsq = 0.0;
    for (std::int64_t i = 0; i < ds.size(); ++i) {
      const std::uint8_t* plane = ds.pixels.data() +
                                  static_cast<std::size_t>(i) * kImageBytes +
                                  static_cast<std::size_t>(c) * 1024;
      for (int p = 0; p < 1024; ++p) {
        const double v = static_cast<double>(plane[p]) / 255.0;
        sum += v;
        sumsq += v * v;
      }
    }
    const double n = static_cast<double>(ds.size()) * 1024.0;
    st.mean[static_cast<std::size_t>(c)] = sum / n;
    const double var =
        sumsq / n - st.mean[static_cast<std::size_t>(c)] *
                        st.mean[static_cast<std::size_t>(c)];
    st.std[static_cast<std::size_t>(c)] = std::sqrt(std::max(var, 0.0));
  }
  return st;
}

inline constexpr const char* kNormStatsVersion = "ressenet-norm-stats-v1";

inline void save_norm_stats(const std::string& path, const NormStats& st) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write normalization stats to " + path);
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s\n%.17g %.17g %.17g\n%.17g %.17g %.17g\n",
                kNormStatsVersion, st.mean[0], st.mean[1], st.mean[2],
                st.std[0], st.std[1], st.std[2]);
  os << buf;
  if (!os) throw IoError("failed writing normalization stats to " + path);
}

// Missing file reads as "not cached yet"; a present but unreadable file is a
// format error so stale or foreign caches never pass silently.
inline std::optional<NormStats> load_norm_stats(const std::string& path) {
  std::ifstream is(path);
  if (!is) return std::nullopt;
  std::string version;
  if (!std::getline(is, version) || version != kNormStatsVersion)
    throw FormatError("normalization stats cache " + path +
                      " has unsupported header \"" + version + "\"");
  NormStats st;
  for (auto* arr : {&st.mean, &st.std})
    for (double& v : *arr)
      if (!(is >> v))
        throw FormatError("normalization stats cache " + path +
                          " is missing values");
  return st;
}

inline NormStats ensure_norm_stats(const Dataset& train,
                                   const std::string& cache_path) {
  if (auto cached = load_norm_stats(cache_path)) return *cached;
  NormStats st = compute_norm_stats(train);
  save_norm_stats(cache_path, st);
  return st;
}

namespace detail {

inline void check_stats(const NormStats& st) {
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(st.mean[static_cast<std::size_t>(c)]) ||
        !std::isfinite(st.std[static_cast<std::size_t>(c)]) ||
        !(st.std[static_cast<std::size_t>(c)] > 0.0))
      throw NumericError("normalization std for channel " + std::to_string(c) +
                         " must be finite and strictly positive");
  }
}

}  // namespace detail

// Training-time transform: zero-pad to 40x40, crop a 32x32 window from the
// 9x9 origin grid, flip horizontally with probability 1/2, then normalize.
// The random stream is keyed by (seed, epoch, dataset index) and consumes
// exactly three draws: crop row, crop col, flip coin.
inline Sample augment(const Sample& s, std::uint64_t epoch, std::uint64_t index,
                      std::uint64_t seed, const NormStats& st) {
  if (s.normalized)
    throw ConfigError("augment applied to an already normalized sample");
  detail::check_stats(st);
  Rng k = Rng::from(seed, epoch, index, kAugmentStream);
  const int oy = static_cast<int>(k.below(9));
  const int ox = static_cast<int>(k.below(9));
  const bool flip = k.coin();

  Sample out;
  out.image = zeros<float>({3, 32, 32});
  out.label = s.label;
  out.coarse_label = s.coarse_label;
  out.normalized = true;
  for (int c = 0; c < 3; ++c) {
    const float mean = static_cast<float>(st.mean[static_cast<std::size_t>(c)]);
    // Divide rather than multiply by a reciprocal: the rounding of these
    // float ops is part of the reproducibility contract.
    const float sd = static_cast<float>(st.std[static_cast<std::size_t>(c)]);
    const float* src = s.image->data.data() + c * 1024;
    float* dst = out.image->data.data() + c * 1024;
    for (int y = 0; y < 32; ++y) {
      const int py = y + oy - 4;
      for (int x = 0; x < 32; ++x) {
        const int px = (flip ? 31 - x : x) + ox - 4;
        const float v = (py >= 0 && py < 32 && px >= 0 && px < 32)
                            ? src[py * 32 + px]
                            : 0.0f;
        dst[y * 32 + x] = (v - mean) / sd;
      }
    }
  }
  return out;
}

// Evaluation-time transform: normalization only.
inline Sample eval_transform(const Sample& s, const NormStats& st) {
  if (s.normalized)
    throw ConfigError("eval transform applied to an already normalized sample");
  detail::check_stats(st);
  Sample out;
  out.image = zeros<float>({3, 32, 32});
  out.label = s.label;
  out.coarse_label = s.coarse_label;
  out.normalized = true;
  for (int c = 0; c < 3; ++c) {
    const float mean = static_cast<float>(st.mean[static_cast<std::size_t>(c)]);
    const float sd = static_cast<float>(st.std[static_cast<std::size_t>(c)]);
    for (int i = 0; i < 1024; ++i)
      out.image->data[static_cast<std::size_t>(c * 1024 + i)] =
          (s.image->data[static_cast<std::size_t>(c * 1024 + i)] - mean) / sd;
  }
  return out;
}

// Fisher-Yates permutation of [0, n) keyed by (seed, epoch).
inline std::vector<std::int64_t> shuffled_indices(std::int64_t n,
                                                  std::uint64_t seed,
                                                  std::uint64_t epoch) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng k = Rng::from(seed, epoch, 0, kShuffleStream);
  k.shuffle(idx);
  return idx;
}

// (start, length) pairs covering [0, n); the final short batch is kept.
inline std::vector<std::pair<std::int64_t, std::int64_t>> batch_ranges(
    std::int64_t n, std::int64_t batch_size) {
  if (batch_size <= 0)
    throw ConfigError("batch size must be positive, got " +
                      std::to_string(batch_size));
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (std::int64_t start = 0; start < n; start += batch_size)
    out.emplace_back(start, std::min(batch_size, n - start));
  return out;
}

inline Batch make_train_batch(const Dataset& ds,
                              const std::vector<std::int64_t>& indices,
                              std::uint64_t epoch, std::uint64_t seed,
                              const NormStats& st) {
  Batch b;
  const auto n = static_cast<std::int64_t>(indices.size());
  b.images = zeros<float>({n, 3, 32, 32});
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    Sample s = augment(raw_sample(ds, indices[i]), epoch,
                       static_cast<std::uint64_t>(indices[i]), seed, st);
    std::copy(s.image->data.begin(), s.image->data.end(),
              b.images->data.begin() + static_cast<std::int64_t>(i) * kImageBytes);
    b.labels.push_back(s.label);
  }
  return b;
}

inline Batch make_eval_batch(const Dataset& ds,
                             const std::vector<std::int64_t>& indices,
                             const NormStats& st) {
  Batch b;
  const auto n = static_cast<std::int64_t>(indices.size());
  b.images = zeros<float>({n, 3, 32, 32});
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    Sample s = eval_transform(raw_sample(ds, indices[i]), st);
    std::copy(s.image->data.begin(), s.image->data.end(),
              b.images->data.begin() + static_cast<std::int64_t>(i) * kImageBytes);
    b.labels.push_back(s.label);
  }
  return b;
}

}  // namespace ressenet::data
