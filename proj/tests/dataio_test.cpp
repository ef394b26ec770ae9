#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "streamnet/dataio.hpp"
#include "streamnet/imaging.hpp"
#include "streamnet/rng.hpp"
#include "support/sndt_reference.hpp"

using namespace streamnet;
using streamnet_test::reference_read_sndt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "streamnet_dataio_test";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

// Builds a full synthetic CIFAR-10-format directory (correct record layout,
// arbitrary pixel content).
fs::path make_cifar_fixture(std::uint64_t seed) {
  const fs::path dir = temp_dir() / ("cifar_" + std::to_string(seed));
  fs::create_directories(dir);
  SplitMix64 rng(seed);
  auto write_file = [&](const std::string& name) {
    std::ofstream out(dir / name, std::ios::binary);
    for (std::size_t r = 0; r < dataio::kCifarRecordsPerFile; ++r) {
      out.put(static_cast<char>(rng.next_below(10)));
      for (std::size_t i = 0; i < dataio::kCifarImageBytes; ++i) {
        out.put(static_cast<char>(rng.next_below(256)));
      }
    }
  };
  for (int i = 1; i <= 5; ++i) write_file("data_batch_" + std::to_string(i) + ".bin");
  write_file("test_batch.bin");
  return dir;
}

}  // namespace

TEST(Cifar10, BatchFileSizeConstant) {
  EXPECT_EQ(dataio::kCifarFileBytes, 30730000u);  // 10000 * 3073
}

TEST(Cifar10, LoadsFixtureWithExactCountsAndIds) {
  const fs::path dir = make_cifar_fixture(1);
  const dataio::Dataset ds = dataio::load_cifar10(dir);
  EXPECT_EQ(ds.train.size(), 50000u);
  EXPECT_EQ(ds.test.size(), 10000u);
  EXPECT_EQ(ds.manifest.class_count(), 10u);
  EXPECT_EQ(ds.train.front().id, 0u);
  EXPECT_EQ(ds.train.back().id, 49999u);
  EXPECT_EQ(ds.test.front().id, 50000u);
  EXPECT_EQ(ds.test.back().id, 59999u);
  // train/test ids are disjoint
  std::set<std::size_t> train_ids;
  for (const auto& s : ds.train) train_ids.insert(s.id);
  for (const auto& s : ds.test) EXPECT_EQ(train_ids.count(s.id), 0u);
}

TEST(Cifar10, FirstRecordLabelByteMatchesDecodedLabel) {
  const fs::path dir = make_cifar_fixture(2);
  std::ifstream file(dir / "data_batch_1.bin", std::ios::binary);
  const int label_byte = file.get();
  const dataio::Dataset ds = dataio::load_cifar10(dir);
  EXPECT_EQ(ds.train.front().label, static_cast<std::size_t>(label_byte));
}

TEST(Cifar10, DecodeEncodeRoundTripsBytes) {
  SplitMix64 rng(3);
  std::vector<std::uint8_t> bytes;
  for (std::size_t r = 0; r < 7; ++r) {
    bytes.push_back(static_cast<std::uint8_t>(rng.next_below(10)));
    for (std::size_t i = 0; i < dataio::kCifarImageBytes; ++i) {
      bytes.push_back(static_cast<std::uint8_t>(rng.next_below(256)));
    }
  }
  const auto samples = dataio::decode_cifar10_records(bytes, 100, "fixture");
  ASSERT_EQ(samples.size(), 7u);
  EXPECT_EQ(samples[0].id, 100u);
  const auto encoded = dataio::encode_cifar10_records(samples);
  EXPECT_EQ(encoded, bytes);
}

TEST(Cifar10, RejectsWrongFileSizeAndBadLabel) {
  const fs::path dir = temp_dir() / "cifar_bad";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "data_batch_1.bin", std::ios::binary);
    out << "short";
  }
  EXPECT_THROW(dataio::load_cifar10(dir), FormatError);

  std::vector<std::uint8_t> record(dataio::kCifarRecordBytes, 0);
  record[0] = 11;  // label byte > 9
  EXPECT_THROW(dataio::decode_cifar10_records(record, 0, "bad"), FormatError);
}

TEST(Sndt, EmptyContainerIsValid) {
  dataio::SndtContent content;
  content.class_names = {"a", "b"};
  content.channels = 3;
  content.height = 4;
  content.width = 4;
  const auto bytes = dataio::encode_sndt(content);
  const auto decoded = dataio::decode_sndt(bytes);
  EXPECT_TRUE(decoded.samples.empty());
  EXPECT_EQ(decoded.class_names, content.class_names);
}

TEST(Sndt, HeaderPayloadDisagreementIsAnError) {
  dataio::SndtContent content;
  content.class_names = {"x"};
  content.channels = 1;
  content.height = 2;
  content.width = 2;
  dataio::Sample s;
  s.image = {1, 2, 3, 4};
  content.samples.push_back(s);
  auto bytes = dataio::encode_sndt(content);
  bytes.pop_back();  // truncate payload
  EXPECT_THROW(dataio::decode_sndt(bytes), FormatError);
  bytes.push_back(0);
  bytes.push_back(0);  // now longer than declared
  EXPECT_THROW(dataio::decode_sndt(bytes), FormatError);
}

TEST(Sndt, BadMagicIsAnError) {
  std::vector<std::uint8_t> bytes = {'X', 'N', 'D', 'T', 1, 0};
  EXPECT_THROW(dataio::decode_sndt(bytes), FormatError);
}

TEST(Sndt, RoundTripsThroughIndependentReferenceReader) {
  SplitMix64 rng(4);
  dataio::SndtContent content;
  content.class_names = {"river", "forest", "city"};
  content.channels = 3;
  content.height = 8;
  content.width = 8;
  for (std::size_t i = 0; i < 10; ++i) {
    dataio::Sample s;
    s.label = rng.next_below(3);
    s.id = i;
    s.image.resize(3 * 8 * 8);
    for (auto& byte : s.image) byte = static_cast<std::uint8_t>(rng.next_below(256));
    content.samples.push_back(std::move(s));
  }
  const fs::path path = temp_dir() / "fixture.sndt";
  dataio::write_sndt(path, content);

  const auto ref = reference_read_sndt(path);
  EXPECT_EQ(ref.class_names, content.class_names);
  EXPECT_EQ(ref.channels, 3u);
  EXPECT_EQ(ref.height, 8u);
  EXPECT_EQ(ref.width, 8u);
  ASSERT_EQ(ref.samples.size(), content.samples.size());
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    EXPECT_EQ(ref.samples[i].first, content.samples[i].label);
    EXPECT_EQ(ref.samples[i].second, content.samples[i].image);
  }

  // and back through the production reader
  const dataio::SndtContent again = dataio::load_raw_container(path);
  EXPECT_EQ(dataio::encode_sndt(again), dataio::encode_sndt(content));
}

TEST(Synth, DeterministicInSeed) {
  const auto a = dataio::synth_dataset(4, 3, 32, 99);
  const auto b = dataio::synth_dataset(4, 3, 32, 99);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].image, b.train[i].image);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
  }
  const auto c = dataio::synth_dataset(4, 3, 32, 100);
  EXPECT_NE(a.train[0].image, c.train[0].image);
}

TEST(Synth, DominantIntensityFallsInClassBand) {
  const std::size_t classes = 5;
  const auto ds = dataio::synth_dataset(classes, 4, 32, 7);
  const auto bands = imaging::make_bands(classes);
  for (const auto& s : ds.train) {
    std::vector<std::size_t> hist(classes, 0);
    const std::size_t plane = 32 * 32;
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = static_cast<double>(s.image[i]) / 255.0;
      for (std::size_t k = 0; k < classes; ++k) {
        if (bands[k].contains(v)) {
          ++hist[k];
          break;
        }
      }
    }
    const std::size_t dominant =
        std::max_element(hist.begin(), hist.end()) - hist.begin();
    EXPECT_EQ(dominant, s.label) << "sample " << s.id;
  }
}

TEST(Synth, NearestMeanIntensityClassifierExceeds90Percent) {
  const std::size_t classes = 4;
  const auto ds = dataio::synth_dataset(classes, 25, 32, 11);
  auto mean_intensity = [](const dataio::Sample& s) {
    double sum = 0.0;
    for (auto b : s.image) sum += b;
    return sum / (255.0 * static_cast<double>(s.image.size()));
  };
  std::vector<double> class_mean(classes, 0.0);
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& s : ds.train) {
    class_mean[s.label] += mean_intensity(s);
    ++counts[s.label];
  }
  for (std::size_t k = 0; k < classes; ++k) class_mean[k] /= counts[k];

  std::size_t correct = 0;
  for (const auto& s : ds.test) {
    const double m = mean_intensity(s);
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k) {
      if (std::abs(m - class_mean[k]) < std::abs(m - class_mean[best])) best = k;
    }
    if (best == s.label) ++correct;
  }
  EXPECT_GT(static_cast<double>(correct) / ds.test.size(), 0.9);
}

TEST(Synth, RejectsBadArguments) {
  EXPECT_THROW(dataio::synth_dataset(1, 5, 32, 1), ConfigError);
  EXPECT_THROW(dataio::synth_dataset(4, 0, 32, 1), ConfigError);
  EXPECT_THROW(dataio::synth_dataset(4, 5, 33, 1), ConfigError);
  EXPECT_THROW(dataio::synth_dataset(700, 5, 32, 1), ConfigError);
}

TEST(ShuffleBatch, SingleBatchIsAPermutation) {
  const auto batches = dataio::shuffle_and_batch(10, 10, 5);
  ASSERT_EQ(batches.size(), 1u);
  std::vector<std::size_t> sorted = batches[0];
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(batches[0], sorted);  // seed 5 does permute
}

TEST(ShuffleBatch, SameSeedSameOrder) {
  EXPECT_EQ(dataio::shuffle_and_batch(100, 7, 42), dataio::shuffle_and_batch(100, 7, 42));
  EXPECT_NE(dataio::shuffle_and_batch(100, 7, 42), dataio::shuffle_and_batch(100, 7, 43));
}

TEST(ShuffleBatch, EveryIdAppearsExactlyOncePerEpoch) {
  const auto batches = dataio::shuffle_and_batch(103, 8, 3);
  EXPECT_EQ(batches.size(), 13u);  // 12 full + short final batch of 7
  EXPECT_EQ(batches.back().size(), 7u);
  std::multiset<std::size_t> seen;
  for (const auto& batch : batches) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 103u);
  for (std::size_t i = 0; i < 103; ++i) EXPECT_EQ(seen.count(i), 1u) << i;
}

TEST(ShuffleBatch, RejectsZeroBatchSize) {
  EXPECT_THROW(dataio::shuffle_and_batch(10, 0, 1), ConfigError);
}

TEST(MakeBatch, NormalizesExactlyOnce) {
  dataio::Sample s;
  s.image = {0, 51, 255, 102, 10, 20, 30, 40, 50, 60, 70, 80};  // [3,2,2]
  s.label = 1;
  s.id = 9;
  std::vector<dataio::Sample> samples = {s};
  std::vector<std::size_t> indices = {0};
  const dataio::Batch batch = dataio::make_batch(samples, indices, 3, 2, 2);
  EXPECT_FALSE(batch.corrupted);
  EXPECT_DOUBLE_EQ(batch.images[0], 0.0);
  EXPECT_DOUBLE_EQ(batch.images[1], 0.2);
  EXPECT_DOUBLE_EQ(batch.images[2], 1.0);
  EXPECT_EQ(batch.labels[0], 1u);
  EXPECT_EQ(batch.ids[0], 9u);
}

TEST(StratifiedSubset, DeterministicBalancedAndIdPreserving) {
  const auto ds = dataio::synth_dataset(4, 30, 32, 2);
  const auto subset = dataio::stratified_subset(ds.train, 20, 4, 77);
  ASSERT_EQ(subset.size(), 20u);
  std::map<std::size_t, std::size_t> per_class;
  std::set<std::size_t> ids;
  for (const auto& s : subset) {
    ++per_class[s.label];
    ids.insert(s.id);
  }
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(per_class[k], 5u);
  EXPECT_EQ(ids.size(), 20u);

  const auto subset2 = dataio::stratified_subset(ds.train, 20, 4, 77);
  for (std::size_t i = 0; i < subset.size(); ++i) {
    EXPECT_EQ(subset[i].id, subset2[i].id);
  }
}
