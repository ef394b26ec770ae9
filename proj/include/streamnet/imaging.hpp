#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "streamnet/error.hpp"
#include "streamnet/rng.hpp"
#include "streamnet/tensor.hpp"

// Pixel-space transforms: [0,1] normalization, intensity-band slicing (the
// input layer of a streaming network), and reproducible random zero-noise.

namespace streamnet::imaging {

/// Half-open intensity interval [lo, hi). A pixel value v belongs to the band
/// iff lo <= v < hi. The final band of a partition ends at 1.1 rather than
/// 1.0 so that v == 1.0 is retained.
struct SliceBand {
  double lo = 0.0;
  double hi = 1.1;

  bool contains(double v) const { return lo <= v && v < hi; }

  /// Covers all of [0,1]: such a band may overlap others in a stream list.
  bool is_full() const { return lo == 0.0 && hi > 1.0; }

  void validate() const {
    if (!(lo < hi)) {
      throw ConfigError("slice band [" + std::to_string(lo) + "," +
                        std::to_string(hi) + ") is empty");
    }
    if (lo < 0.0 || lo > 1.0 || hi <= 0.0 || hi > 1.1) {
      throw ConfigError("slice band [" + std::to_string(lo) + "," +
                        std::to_string(hi) + ") outside [0,1] / (0,1.1]");
    }
  }

  bool operator==(const SliceBand&) const = default;
};

/// n equal-width bands partitioning [0,1]: [k/n,(k+1)/n) for k < n-1, then
/// [(n-1)/n, 1.1). Band boundaries are shared doubles, so membership is
/// exact: every v in [0,1] falls in exactly one band.
inline std::vector<SliceBand> make_bands(std::size_t n) {
  if (n == 0) throw ConfigError("make_bands: need at least one band");
  std::vector<SliceBand> bands(n);
  for (std::size_t k = 0; k < n; ++k) {
    bands[k].lo = static_cast<double>(k) / static_cast<double>(n);
    bands[k].hi = k + 1 == n
                      ? 1.1
                      : static_cast<double>(k + 1) / static_cast<double>(n);
  }
  return bands;
}

/// Checks that `bands` is usable as a streaming-net band list: every band
/// valid, and the non-full bands form an exact pairwise-disjoint cover of
/// [0,1]. Full bands ([0, >1)) may appear any number of times alongside; a
/// list of only full bands is also legal. Throws ConfigError otherwise.
inline void validate_band_list(const std::vector<SliceBand>& bands) {
  if (bands.empty()) throw ConfigError("band list is empty");
  std::vector<SliceBand> partial;
  for (const SliceBand& b : bands) {
    b.validate();
    if (!b.is_full()) partial.push_back(b);
  }
  if (partial.empty()) return;  // full-band streams only
  std::sort(partial.begin(), partial.end(),
            [](const SliceBand& a, const SliceBand& b) { return a.lo < b.lo; });
  if (partial.front().lo != 0.0) {
    throw ConfigError("band list does not cover 0.0");
  }
  for (std::size_t i = 0; i + 1 < partial.size(); ++i) {
    if (partial[i].hi != partial[i + 1].lo) {
      throw ConfigError("bands [" + std::to_string(partial[i].lo) + "," +
                        std::to_string(partial[i].hi) + ") and [" +
                        std::to_string(partial[i + 1].lo) + "," +
                        std::to_string(partial[i + 1].hi) +
                        ") must abut exactly (disjoint cover of [0,1])");
    }
  }
  if (!(partial.back().hi > 1.0)) {
    throw ConfigError("band list does not cover 1.0 (last band must end past 1)");
  }
}

/// Byte image -> doubles in [0,1], exactly v/255.
inline Tensor normalize(const std::vector<std::uint8_t>& raw, Shape shape) {
  if (raw.size() != shape_numel(shape)) {
    throw ShapeError("normalize: " + std::to_string(raw.size()) +
                     " bytes for shape " + shape_to_string(shape));
  }
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = static_cast<double>(raw[i]) / 255.0;
  }
  return out;
}

/// Keeps values inside the band, zeroes the rest. Membership is evaluated per
/// channel value independently; retained values are passed through unchanged.
inline Tensor slice(const Tensor& image, const SliceBand& band) {
  Tensor out(image.shape());
  const double* src = image.data();
  double* dst = out.data();
  for (std::size_t i = 0, n = image.numel(); i < n; ++i) {
    dst[i] = band.contains(src[i]) ? src[i] : 0.0;
  }
  return out;
}

/// Corruption ratio plus reproducibility seed. Exactly floor(ratio*H*W)
/// distinct spatial locations are zeroed per image.
struct NoiseSpec {
  double ratio = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
      throw ConfigError("noise ratio " + std::to_string(ratio) +
                        " outside [0,1]");
    }
  }
};

/// The spatial locations (flat h*W+w indices) a NoiseSpec zeroes on an HxW
/// image: the first floor(ratio*H*W) entries of a SplitMix64-seeded
/// Fisher-Yates shuffle of all locations.
inline std::vector<std::size_t> corruption_mask(const NoiseSpec& spec,
                                                std::size_t height,
                                                std::size_t width) {
  spec.validate();
  const std::size_t total = height * width;
  const std::size_t count = static_cast<std::size_t>(
      std::floor(spec.ratio * static_cast<double>(total)));
  SplitMix64 rng(spec.seed);
  return partial_shuffle(total, count, rng);
}

/// Sets all channel values to zero at each corrupted spatial location of a
/// normalized [C,H,W] image. Pixels outside the mask are untouched.
inline Tensor corrupt_zero_noise(const Tensor& image, const NoiseSpec& spec) {
  require_rank(image, 3, "corrupt_zero_noise image");
  const std::size_t channels = image.dim(0);
  const std::size_t height = image.dim(1), width = image.dim(2);
  Tensor out = image;
  for (std::size_t loc : corruption_mask(spec, height, width)) {
    for (std::size_t c = 0; c < channels; ++c) {
      out[c * height * width + loc] = 0.0;
    }
  }
  return out;
}

}  // namespace streamnet::imaging
