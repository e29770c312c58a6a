#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ressenet/common.hpp"
#include "ressenet/rng.hpp"

// Deterministic synthetic datasets in the exact CIFAR binary layouts, sized
// to the real corpus: CIFAR-10 spreads 5000 train / 1000 test records per
// class over the usual six files; CIFAR-100 holds 500/100 per fine label with
// coarse = fine/5. Labels interleave (record i gets class i mod K) so every
// prefix subset is class-balanced.
//
// Pixel content differs on purpose. CIFAR-10 images carry a strong per-class,
// per-channel mean under bounded noise, so small-budget training has signal
// to learn. CIFAR-100 images are label-independent noise, so an untrained
// model's accuracy on them concentrates at chance with binomial spread.

namespace synthetic {

namespace detail {

inline void write_record(std::ofstream& os, const std::vector<std::uint8_t>& rec) {
  os.write(reinterpret_cast<const char*>(rec.data()),
           static_cast<std::streamsize>(rec.size()));
}

inline void fill_c10_pixels(std::uint8_t* dst, int label, ressenet::Rng& k) {
  for (int c = 0; c < 3; ++c) {
    const int mean = 30 + (label * 53 + c * 97) % 196;
    for (int p = 0; p < 1024; ++p) {
      const int noise = static_cast<int>(k.below(51)) - 25;
      dst[c * 1024 + p] =
          static_cast<std::uint8_t>(std::clamp(mean + noise, 0, 255));
    }
  }
}

}  // namespace detail

inline void write_cifar10(const std::string& dir, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write_split = [&](const std::string& name, int count,
                         std::uint64_t salt, int offset) {
    std::ofstream os(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
    if (!os) throw ressenet::IoError("cannot create " + name + " in " + dir);
    std::vector<std::uint8_t> rec(3073);
    for (int i = 0; i < count; ++i) {
      const int global = offset + i;
      const int label = global % 10;
      rec[0] = static_cast<std::uint8_t>(label);
      ressenet::Rng k = ressenet::Rng::from(seed, salt,
                                            static_cast<std::uint64_t>(global));
      detail::fill_c10_pixels(rec.data() + 1, label, k);
      detail::write_record(os, rec);
    }
  };
  for (int f = 0; f < 5; ++f)
    write_split("data_batch_" + std::to_string(f + 1) + ".bin", 10000, 1,
                f * 10000);
  write_split("test_batch.bin", 10000, 2, 0);
}

inline void write_cifar100(const std::string& dir, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write_split = [&](const std::string& name, int count,
                         std::uint64_t salt) {
    std::ofstream os(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
    if (!os) throw ressenet::IoError("cannot create " + name + " in " + dir);
    std::vector<std::uint8_t> rec(3074);
    for (int i = 0; i < count; ++i) {
      const int fine = i % 100;
      rec[0] = static_cast<std::uint8_t>(fine / 5);
      rec[1] = static_cast<std::uint8_t>(fine);
      ressenet::Rng k =
          ressenet::Rng::from(seed, salt, static_cast<std::uint64_t>(i));
      for (int p = 0; p < 3072; ++p)
        rec[static_cast<std::size_t>(2 + p)] =
            static_cast<std::uint8_t>(k.below(256));
      detail::write_record(os, rec);
    }
  };
  write_split("train.bin", 50000, 3);
  write_split("test.bin", 10000, 4);
}

}  // namespace synthetic
