#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "streamnet/error.hpp"
#include "streamnet/imaging.hpp"
#include "streamnet/rng.hpp"
#include "streamnet/tensor.hpp"

// Dataset ingestion and batching. Loaders are byte-faithful and never
// normalize: sample images stay 8-bit until the training pipeline converts a
// batch, so normalization happens exactly once.

namespace streamnet::dataio {

struct Sample {
  std::vector<std::uint8_t> image;  // planar [C,H,W] bytes
  std::size_t label = 0;
  std::size_t id = 0;  // stable ordinal, unique across a dataset's splits
};

struct DatasetManifest {
  std::string name;
  std::vector<std::string> class_names;
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t train_count = 0, test_count = 0;
  std::string source_format;

  std::size_t class_count() const { return class_names.size(); }

  void validate() const {
    if (train_count == 0 && test_count == 0) {
      throw ConfigError("dataset '" + name + "' has no samples");
    }
    if (channels == 0 || height == 0 || width == 0) {
      throw ConfigError("dataset '" + name + "' has a zero image extent");
    }
    std::vector<std::string> names = class_names;
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
      throw ConfigError("dataset '" + name + "' has duplicate class names");
    }
  }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// ---------------------------------------------------------------------------
// CIFAR-10 published binary layout: six files of 10000 records; each record
// is 1 label byte + 3072 pixel bytes (channel-major R,G,B; row-major planes).

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;
inline constexpr std::size_t kCifarFileBytes = kCifarRecordsPerFile * kCifarRecordBytes;

/// Byte-faithful decode of one CIFAR-10 batch file's content. Sample ids
/// start at `first_id` and follow record order.
inline std::vector<Sample> decode_cifar10_records(
    std::span<const std::uint8_t> bytes, std::size_t first_id,
    const std::string& origin) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("cifar10: " + origin + " is " +
                      std::to_string(bytes.size()) +
                      " bytes, not a multiple of " +
                      std::to_string(kCifarRecordBytes));
  }
  std::vector<Sample> samples;
  samples.reserve(bytes.size() / kCifarRecordBytes);
  for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
    Sample s;
    s.label = bytes[off];
    if (s.label > 9) {
      throw FormatError("cifar10: " + origin + " record " +
                        std::to_string(off / kCifarRecordBytes) +
                        " has label byte " + std::to_string(s.label) + " > 9");
    }
    s.image.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off) + 1,
                   bytes.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecordBytes));
    s.id = first_id + off / kCifarRecordBytes;
    samples.push_back(std::move(s));
  }
  return samples;
}

/// Inverse of decode: reproduces the exact record bytes.
inline std::vector<std::uint8_t> encode_cifar10_records(
    std::span<const Sample> samples) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(samples.size() * kCifarRecordBytes);
  for (const Sample& s : samples) {
    if (s.image.size() != kCifarImageBytes) {
      throw ShapeError("cifar10: sample image must be 3072 bytes");
    }
    if (s.label > 9) throw ConfigError("cifar10: label > 9");
    bytes.push_back(static_cast<std::uint8_t>(s.label));
    bytes.insert(bytes.end(), s.image.begin(), s.image.end());
  }
  return bytes;
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace detail

inline const std::vector<std::string>& cifar10_class_names() {
  static const std::vector<std::string> names = {
      "airplane", "automobile", "bird", "cat",  "deer",
      "dog",      "frog",       "horse", "ship", "truck"};
  return names;
}

/// Loads the published CIFAR-10 binary set: five train batches plus one test
/// batch, 50,000 / 10,000 samples. Train ids 0..49999, test 50000..59999.
inline Dataset load_cifar10(const std::filesystem::path& directory) {
  Dataset ds;
  ds.manifest.name = "cifar10";
  ds.manifest.class_names = cifar10_class_names();
  ds.manifest.channels = 3;
  ds.manifest.height = 32;
  ds.manifest.width = 32;
  ds.manifest.source_format = "cifar10-binary";

  auto load_file = [&](const std::string& filename, std::size_t first_id) {
    const std::filesystem::path path = directory / filename;
    std::vector<std::uint8_t> bytes = detail::read_file(path);
    if (bytes.size() != kCifarFileBytes) {
      throw FormatError("cifar10: " + path.string() + " is " +
                        std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(kCifarFileBytes));
    }
    return decode_cifar10_records(bytes, first_id, filename);
  };

  for (int i = 1; i <= 5; ++i) {
    auto batch = load_file("data_batch_" + std::to_string(i) + ".bin",
                           static_cast<std::size_t>(i - 1) * kCifarRecordsPerFile);
    ds.train.insert(ds.train.end(), std::make_move_iterator(batch.begin()),
                    std::make_move_iterator(batch.end()));
  }
  ds.test = load_file("test_batch.bin", 5 * kCifarRecordsPerFile);
  ds.manifest.train_count = ds.train.size();
  ds.manifest.test_count = ds.test.size();
  ds.manifest.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// SNDT raw container: the codec-free interchange format converted satellite
// sets arrive in. Layout (all integers little-endian):
//   magic "SNDT", u16 version=1, u32 sample count, u16 C, u16 H, u16 W,
//   u16 class count, per class: u16 byte length + UTF-8 name,
//   per sample: u16 label + C*H*W image bytes.

inline constexpr char kSndtMagic[4] = {'S', 'N', 'D', 'T'};
inline constexpr std::uint16_t kSndtVersion = 1;

struct SndtContent {
  std::vector<std::string> class_names;
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<Sample> samples;
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size()) {
      throw FormatError(std::string("sndt: truncated file (") + what + ")");
    }
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_sndt(const SndtContent& content) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kSndtMagic, kSndtMagic + 4);
  detail::put_u16(out, kSndtVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(content.samples.size()));
  detail::put_u16(out, static_cast<std::uint16_t>(content.channels));
  detail::put_u16(out, static_cast<std::uint16_t>(content.height));
  detail::put_u16(out, static_cast<std::uint16_t>(content.width));
  detail::put_u16(out, static_cast<std::uint16_t>(content.class_names.size()));
  for (const std::string& name : content.class_names) {
    detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  const std::size_t image_bytes = content.channels * content.height * content.width;
  for (const Sample& s : content.samples) {
    if (s.image.size() != image_bytes) {
      throw ShapeError("sndt: sample " + std::to_string(s.id) + " has " +
                       std::to_string(s.image.size()) + " bytes, expected " +
                       std::to_string(image_bytes));
    }
    if (s.label >= content.class_names.size()) {
      throw ConfigError("sndt: label " + std::to_string(s.label) +
                        " out of range for " +
                        std::to_string(content.class_names.size()) + " classes");
    }
    detail::put_u16(out, static_cast<std::uint16_t>(s.label));
    out.insert(out.end(), s.image.begin(), s.image.end());
  }
  return out;
}

inline SndtContent decode_sndt(std::span<const std::uint8_t> bytes,
                               std::size_t first_id = 0) {
  detail::ByteReader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kSndtMagic, 4) != 0) {
    throw FormatError("sndt: bad magic (not an SNDT container)");
  }
  r.pos = 4;
  const std::uint16_t version = r.u16("version");
  if (version != kSndtVersion) {
    throw FormatError("sndt: unsupported version " + std::to_string(version));
  }
  SndtContent content;
  const std::uint32_t count = r.u32("sample count");
  content.channels = r.u16("channels");
  content.height = r.u16("height");
  content.width = r.u16("width");
  const std::uint16_t classes = r.u16("class count");
  for (std::uint16_t i = 0; i < classes; ++i) {
    const std::uint16_t len = r.u16("class name length");
    r.need(len, "class name");
    content.class_names.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + len));
    r.pos += len;
  }
  if (content.channels == 0 || content.height == 0 || content.width == 0) {
    throw FormatError("sndt: zero image extent in header");
  }
  const std::size_t image_bytes = content.channels * content.height * content.width;
  const std::size_t expected = r.pos + count * (2 + image_bytes);
  if (bytes.size() != expected) {
    throw FormatError("sndt: header declares " + std::to_string(count) +
                      " samples (" + std::to_string(expected) +
                      " bytes) but file has " + std::to_string(bytes.size()));
  }
  content.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample s;
    s.label = r.u16("label");
    if (s.label >= classes) {
      throw FormatError("sndt: sample " + std::to_string(i) + " label " +
                        std::to_string(s.label) + " out of range");
    }
    s.image.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                   bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + image_bytes));
    r.pos += image_bytes;
    s.id = first_id + i;
    content.samples.push_back(std::move(s));
  }
  return content;
}

inline void write_sndt(const std::filesystem::path& path, const SndtContent& content) {
  const std::vector<std::uint8_t> bytes = encode_sndt(content);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("short write to " + path.string());
}

inline SndtContent load_raw_container(const std::filesystem::path& path,
                                      std::size_t first_id = 0) {
  return decode_sndt(detail::read_file(path), first_id);
}

/// Loads a train/test pair of SNDT containers as one dataset. Test sample ids
/// continue after the train ids so ids stay unique across splits.
inline Dataset load_sndt_dataset(const std::filesystem::path& train_path,
                                 const std::filesystem::path& test_path,
                                 const std::string& name) {
  SndtContent train = load_raw_container(train_path, 0);
  SndtContent test = load_raw_container(test_path, train.samples.size());
  if (train.class_names != test.class_names || train.channels != test.channels ||
      train.height != test.height || train.width != test.width) {
    throw FormatError("sndt: train and test containers disagree on classes or shape");
  }
  Dataset ds;
  ds.manifest.name = name;
  ds.manifest.class_names = train.class_names;
  ds.manifest.channels = train.channels;
  ds.manifest.height = train.height;
  ds.manifest.width = train.width;
  ds.manifest.train_count = train.samples.size();
  ds.manifest.test_count = test.samples.size();
  ds.manifest.source_format = "sndt";
  ds.train = std::move(train.samples);
  ds.test = std::move(test.samples);
  ds.manifest.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic dataset: class k concentrates pixel energy inside band k of
// make_bands(n_classes), so intensity slicing is informative by construction
// and a trivial mean-intensity classifier can already separate the classes.

namespace detail {

inline Sample synth_sample(std::size_t label, std::size_t n_classes,
                           std::size_t side, std::size_t id, SplitMix64& rng) {
  const imaging::SliceBand band = imaging::make_bands(n_classes)[label];
  const double hi = std::min(band.hi, 1.0);
  Sample s;
  s.label = label;
  s.id = id;
  s.image.resize(3 * side * side);
  const std::size_t plane = side * side;
  for (std::size_t i = 0; i < plane; ++i) {
    // 80% of pixels inside the class band, 20% uniform background noise
    const bool in_band = rng.next_double() < 0.8;
    const double v = in_band ? rng.next_double(band.lo, hi) : rng.next_double();
    const auto byte = static_cast<std::uint8_t>(std::lround(v * 255.0));
    s.image[i] = byte;
    s.image[plane + i] = byte;
    s.image[2 * plane + i] = byte;
  }
  return s;
}

}  // namespace detail

/// Deterministic synthetic dataset with `per_class` train and test samples
/// per class. `side` must be divisible by 32 so the standard conv stack
/// type-checks.
inline Dataset synth_dataset(std::size_t n_classes, std::size_t per_class,
                             std::size_t side, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (n_classes > 255) {
    throw ConfigError("synth: " + std::to_string(n_classes) +
                      " classes exceed the available intensity bands");
  }
  if (per_class == 0) throw ConfigError("synth: per_class must be >= 1");
  if (side % 32 != 0) {
    throw ConfigError("synth: side " + std::to_string(side) +
                      " must be divisible by 32");
  }
  Dataset ds;
  ds.manifest.name = "synth";
  for (std::size_t k = 0; k < n_classes; ++k) {
    ds.manifest.class_names.push_back("band" + std::to_string(k));
  }
  ds.manifest.channels = 3;
  ds.manifest.height = side;
  ds.manifest.width = side;
  ds.manifest.source_format = "synth";

  SplitMix64 train_rng(derive_seed(seed, 0));
  SplitMix64 test_rng(derive_seed(seed, 1));
  std::size_t id = 0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ds.train.push_back(detail::synth_sample(k, n_classes, side, id++, train_rng));
    }
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ds.test.push_back(detail::synth_sample(k, n_classes, side, id++, test_rng));
    }
  }
  ds.manifest.train_count = ds.train.size();
  ds.manifest.test_count = ds.test.size();
  ds.manifest.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Batching

/// Seeded permutation of sample indices cut into batches; the final short
/// batch is kept.
inline std::vector<std::vector<std::size_t>> shuffle_and_batch(
    std::size_t sample_count, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  SplitMix64 rng(seed);
  std::vector<std::size_t> order = partial_shuffle(sample_count, sample_count, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

struct Batch {
  Tensor images;  // [N,C,H,W], normalized to [0,1]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> ids;
  bool corrupted = false;  // provenance: training asserts this stays false
};

/// Materializes samples into a normalized batch tensor. Never corrupts:
/// noise is applied only by the evaluation path.
inline Batch make_batch(std::span<const Sample> samples,
                        std::span<const std::size_t> indices,
                        std::size_t channels, std::size_t height,
                        std::size_t width) {
  Batch batch;
  batch.images = Tensor({indices.size(), channels, height, width});
  const std::size_t image_size = channels * height * width;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = samples[indices[i]];
    if (s.image.size() != image_size) {
      throw ShapeError("batch: sample " + std::to_string(s.id) + " has " +
                       std::to_string(s.image.size()) + " bytes, expected " +
                       std::to_string(image_size));
    }
    double* dst = batch.images.data() + i * image_size;
    for (std::size_t j = 0; j < image_size; ++j) {
      dst[j] = static_cast<double>(s.image[j]) / 255.0;
    }
    batch.labels.push_back(s.label);
    batch.ids.push_back(s.id);
  }
  return batch;
}

/// Deterministic stratified subset: floor(total/classes) samples per class
/// (remainder spread over the lowest class indices), chosen by per-class
/// seeded shuffles. Sample ids are preserved.
inline std::vector<Sample> stratified_subset(std::span<const Sample> samples,
                                             std::size_t total,
                                             std::size_t class_count,
                                             std::uint64_t seed) {
  if (total == 0 || total > samples.size()) {
    throw ConfigError("subset: size " + std::to_string(total) +
                      " outside 1.." + std::to_string(samples.size()));
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_class[samples[i].label].push_back(i);
  }
  std::vector<Sample> subset;
  std::size_t remainder = total % class_count;
  for (std::size_t k = 0; k < class_count; ++k) {
    auto it = by_class.find(k);
    const std::size_t want = total / class_count + (k < remainder ? 1 : 0);
    if (it == by_class.end() || it->second.size() < want) {
      throw ConfigError("subset: class " + std::to_string(k) +
                        " has too few samples for a stratified subset of " +
                        std::to_string(total));
    }
    SplitMix64 rng(derive_seed(seed, k));
    for (std::size_t pick : partial_shuffle(it->second.size(), want, rng)) {
      subset.push_back(samples[it->second[pick]]);
    }
  }
  return subset;
}

}  // namespace streamnet::dataio
