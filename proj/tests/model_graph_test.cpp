#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "streamnet/model.hpp"
#include "streamnet/rng.hpp"

using namespace streamnet;
namespace fs = std::filesystem;

namespace {

Tensor random_batch(Shape shape, SplitMix64& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.next_double();
  return t;
}

fs::path temp_dir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "streamnet_model_test";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

}  // namespace

TEST(SimpleConvnet, Cifar10ConfigurationShape) {
  const auto spec = model::build_simple_convnet({3, 32, 32}, 10, 10, 1);
  ASSERT_EQ(spec.blocks.size(), 5u);
  EXPECT_EQ(spec.blocks[0].filters, 32u);
  EXPECT_EQ(spec.blocks[0].kernel, 7u);
  EXPECT_EQ(spec.blocks[1].filters, 64u);
  EXPECT_EQ(spec.blocks[1].kernel, 5u);
  EXPECT_EQ(spec.blocks[2].filters, 128u);
  EXPECT_EQ(spec.blocks[2].kernel, 3u);
  EXPECT_EQ(spec.blocks[3].filters, 256u);
  EXPECT_EQ(spec.blocks[4].filters, 10u);
  const auto [h, w] = model::validate_spec(spec);
  EXPECT_EQ(h, 1u);  // final feature map 10 x 1 x 1
  EXPECT_EQ(w, 1u);
}

TEST(SimpleConvnet, EurosatConfigurationShape) {
  const auto spec = model::build_simple_convnet({3, 64, 64}, 10, 4, 1);
  EXPECT_EQ(spec.blocks[4].filters, 4u);
  const auto [h, w] = model::validate_spec(spec);
  EXPECT_EQ(h, 2u);  // final feature map 4 x 2 x 2
  EXPECT_EQ(w, 2u);
}

TEST(SimpleConvnet, WidthMultiplierScalesEveryConvLayer) {
  const auto spec = model::build_simple_convnet({3, 32, 32}, 10, 10, 5);
  EXPECT_EQ(spec.blocks[0].filters, 160u);
  EXPECT_EQ(spec.blocks[1].filters, 320u);
  EXPECT_EQ(spec.blocks[2].filters, 640u);
  EXPECT_EQ(spec.blocks[3].filters, 1280u);
  EXPECT_EQ(spec.blocks[4].filters, 50u);
}

TEST(SimpleConvnet, RejectsIndivisibleInputSides) {
  EXPECT_THROW(model::build_simple_convnet({3, 48, 48}, 10, 10, 1),
               SpatialCollapseError);
  EXPECT_THROW(model::build_simple_convnet({3, 16, 16}, 10, 10, 1),
               SpatialCollapseError);
}

TEST(SpecValidation, RejectsSpatialCollapseBeforeLastBlock) {
  model::ModelSpec spec;
  spec.in_channels = 3;
  spec.in_height = 16;
  spec.in_width = 16;
  spec.num_classes = 10;
  spec.blocks = {{8, 3}, {8, 3}, {8, 3}, {8, 3}, {8, 1}};
  EXPECT_THROW(model::validate_spec(spec), SpatialCollapseError);
}

TEST(StreamingNet, FiveStreamConstruction) {
  const auto spec = model::build_streaming_net({3, 32, 32}, 10,
                                               imaging::make_bands(5), 10);
  EXPECT_EQ(spec.stream_count(), 5u);
  EXPECT_TRUE(spec.hidden_dense.empty());
  const auto state = model::init_state(spec, 1);
  // 5 * (5 conv layers * 2 tensors) + head weight + bias
  EXPECT_EQ(state.params.size(), 5u * 10u + 2u);
  EXPECT_EQ(state.params.front().key, "s0.conv0.kernel");
  EXPECT_EQ(state.params.back().key, "head.fc0.bias");
}

TEST(StreamingNet, SixthFullBandStreamIsAccepted) {
  auto bands = imaging::make_bands(5);
  bands.push_back({0.0, 1.1});
  const auto spec = model::build_streaming_net({3, 32, 32}, 10, std::move(bands), 10);
  EXPECT_EQ(spec.stream_count(), 6u);
}

TEST(StreamingNet, RejectsEmptyOrNonCoveringBands) {
  EXPECT_THROW(model::build_streaming_net({3, 32, 32}, 10, {}, 10), ConfigError);
  std::vector<imaging::SliceBand> gap = {{0.0, 0.4}, {0.5, 1.1}};
  EXPECT_THROW(model::build_streaming_net({3, 32, 32}, 10, gap, 10), ConfigError);
}

TEST(Forward, ZeroWeightsGiveZeroLogitsAndUniformSoftmax) {
  const auto spec = model::build_simple_convnet({3, 32, 32}, 10, 10, 1);
  model::ModelState state = model::init_state(spec, 3);
  for (auto& p : state.params) p.value.fill(0.0);
  SplitMix64 rng(11);
  const Tensor batch = random_batch({2, 3, 32, 32}, rng);
  const Tensor logits = model::forward(spec, state, batch);
  for (std::size_t i = 0; i < logits.numel(); ++i) EXPECT_EQ(logits[i], 0.0);
}

TEST(Forward, SingleFullBandStreamingEqualsSimpleBitForBit) {
  const auto simple = model::build_simple_convnet({3, 32, 32}, 10, 10, 1);
  const auto streaming =
      model::build_streaming_net({3, 32, 32}, 10, {{0.0, 1.1}}, 10);
  model::ModelState state = model::init_state(simple, 17);
  // identical key sets: both are one stream plus the head
  model::ModelState state2;
  for (const auto& p : state.params) state2.params.push_back(p);

  SplitMix64 rng(18);
  const Tensor batch = random_batch({3, 3, 32, 32}, rng);
  const Tensor a = model::forward(simple, state, batch);
  const Tensor b = model::forward(streaming, state2, batch);
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Forward, RejectsMismatchedBatchShape) {
  const auto spec = model::build_simple_convnet({3, 32, 32}, 10, 10, 1);
  const auto state = model::init_state(spec, 1);
  EXPECT_THROW(model::forward(spec, state, Tensor({1, 3, 64, 64})), ShapeError);
}

TEST(Forward, NonFiniteActivationIsAnError) {
  const auto spec = model::build_simple_convnet({3, 32, 32}, 10, 10, 1);
  model::ModelState state = model::init_state(spec, 1);
  state.at("head.fc0.weight")[0] = std::numeric_limits<double>::quiet_NaN();
  SplitMix64 rng(19);
  const Tensor batch = random_batch({1, 3, 32, 32}, rng);
  EXPECT_THROW(model::forward(spec, state, batch), NumericError);
}

TEST(Forward, StreamPermutationWithHeadPermutationKeepsLogits) {
  // two streams; swapping the bands together with their stream parameters and
  // the corresponding head-weight row blocks must not change the logits
  const auto bands = imaging::make_bands(2);
  const auto spec =
      model::build_streaming_net({3, 32, 32}, 4, {bands[0], bands[1]}, 6);
  model::ModelState state = model::init_state(spec, 23);

  const auto swapped_spec =
      model::build_streaming_net({3, 32, 32}, 4, {bands[1], bands[0]}, 6);
  model::ModelState swapped = model::init_state(swapped_spec, 23);
  const std::size_t per_stream = 10;  // 5 conv layers x (kernel, bias)
  for (std::size_t i = 0; i < per_stream; ++i) {
    swapped.params[i].value = state.params[per_stream + i].value;
    swapped.params[per_stream + i].value = state.params[i].value;
  }
  // head weight rows: block of stream-0 features first; swap the blocks
  const Tensor& w = state.params[2 * per_stream].value;
  Tensor& w_swapped = swapped.params[2 * per_stream].value;
  const std::size_t features = w.dim(0), classes = w.dim(1);
  const std::size_t half = features / 2;
  for (std::size_t f = 0; f < half; ++f) {
    for (std::size_t k = 0; k < classes; ++k) {
      w_swapped[f * classes + k] = w[(half + f) * classes + k];
      w_swapped[(half + f) * classes + k] = w[f * classes + k];
    }
  }
  swapped.params[2 * per_stream + 1].value = state.params[2 * per_stream + 1].value;

  SplitMix64 rng(29);
  const Tensor batch = random_batch({2, 3, 32, 32}, rng);
  const Tensor a = model::forward(spec, state, batch);
  const Tensor b = model::forward(swapped_spec, swapped, batch);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-12 * std::max(1.0, std::abs(a[i])));
  }
}

TEST(GradientIsolation, StreamsAreUncoupledThroughTheirOwnPaths) {
  // with a linear readout of the concatenated features, stream 0's parameter
  // gradients cannot depend on stream 1's input slice (the softmax head
  // couples streams by design, so the check uses the raw feature path)
  const auto spec = model::build_streaming_net({3, 32, 32}, 4,
                                               imaging::make_bands(2), 6);
  model::ModelState state = model::init_state(spec, 31);
  SplitMix64 rng(37);
  Tensor batch = random_batch({2, 3, 32, 32}, rng);

  Tensor zeroed_batch = batch;  // wipe everything stream 1 would see
  for (std::size_t i = 0; i < zeroed_batch.numel(); ++i) {
    if (spec.bands[1].contains(zeroed_batch[i])) zeroed_batch[i] = 0.0;
  }

  auto stream0_grads = [&](const Tensor& input) {
    model::ForwardPass fp = model::build_forward(spec, state, input);
    // linear readout over concatenated stream features (logits' input)
    Tensor weights(fp.graph.value(fp.logits).shape());
    weights.fill(0.5);
    fp.graph.backward(fp.graph.weighted_sum(fp.logits, std::move(weights)));
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < 10; ++i) {  // stream 0's conv parameters
      grads.push_back(fp.graph.grad(fp.param_nodes[i]));
    }
    return grads;
  };

  const auto base = stream0_grads(batch);
  const auto after = stream0_grads(zeroed_batch);
  ASSERT_EQ(base.size(), after.size());
  for (std::size_t p = 0; p < base.size(); ++p) {
    ASSERT_EQ(base[p].numel(), after[p].numel());
    for (std::size_t i = 0; i < base[p].numel(); ++i) {
      EXPECT_EQ(base[p][i], after[p][i]) << "param " << p << " coord " << i;
    }
  }
}

TEST(ParameterCount, LedgerOrderingForCifarConfig) {
  const auto simple = model::build_simple_convnet({3, 32, 32}, 10, 10, 1);
  const auto streaming = model::build_streaming_net({3, 32, 32}, 10,
                                                    imaging::make_bands(5), 10);
  const auto wide = model::build_simple_convnet({3, 32, 32}, 10, 10, 5);

  const std::size_t simple_conv = model::conv_parameter_count(simple);
  const std::size_t streaming_conv = model::conv_parameter_count(streaming);
  const std::size_t wide_conv = model::conv_parameter_count(wide);

  // hand ledger: 32*3*49+32 + 64*32*25+64 + 128*64*9+128 + 256*128+256 + 10*256+10
  EXPECT_EQ(simple_conv, 4736u + 51264u + 73856u + 33024u + 2570u);
  EXPECT_EQ(streaming_conv, 5u * simple_conv);
  EXPECT_LT(simple_conv, streaming_conv);
  EXPECT_LT(streaming_conv, wide_conv);
}

TEST(Checkpoint, RoundTripPreservesSpecAndForward) {
  const auto spec = model::build_streaming_net({3, 32, 32}, 4,
                                               imaging::make_bands(2), 6);
  model::ModelState state = model::init_state(spec, 41);
  const fs::path path = temp_dir() / "roundtrip.snet";
  model::save_checkpoint(spec, state, path);
  auto [loaded_spec, loaded_state] = model::load_checkpoint(path);
  EXPECT_EQ(loaded_spec, spec);

  SplitMix64 rng(43);
  const Tensor batch = random_batch({1, 3, 32, 32}, rng);
  const Tensor a = model::forward(spec, state, batch);
  const Tensor b = model::forward(loaded_spec, loaded_state, batch);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    // weights round through float32; logits agree to that precision
    EXPECT_NEAR(a[i], b[i], 1e-4 * std::max(1.0, std::abs(a[i])));
  }
  // loading loses only float32 rounding: saving again is a fixed point
  const fs::path path2 = temp_dir() / "roundtrip2.snet";
  model::save_checkpoint(loaded_spec, loaded_state, path2);
  auto [spec3, state3] = model::load_checkpoint(path2);
  for (std::size_t p = 0; p < state3.params.size(); ++p) {
    for (std::size_t i = 0; i < state3.params[p].value.numel(); ++i) {
      EXPECT_EQ(state3.params[p].value[i], loaded_state.params[p].value[i]);
    }
  }
}

TEST(Checkpoint, FileLengthIsHeaderPlusFloatPayloads) {
  const auto spec = model::build_simple_convnet({3, 32, 32}, 10, 10, 1);
  const auto state = model::init_state(spec, 47);
  const fs::path path = temp_dir() / "length.snet";
  model::save_checkpoint(spec, state, path);

  const std::string spec_json = [&] {
    std::ifstream file(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(file)),
                      std::istreambuf_iterator<char>());
    const std::size_t len = static_cast<std::uint8_t>(bytes[6]) |
                            (static_cast<std::size_t>(static_cast<std::uint8_t>(bytes[7])) << 8) |
                            (static_cast<std::size_t>(static_cast<std::uint8_t>(bytes[8])) << 16) |
                            (static_cast<std::size_t>(static_cast<std::uint8_t>(bytes[9])) << 24);
    return bytes.substr(10, len);
  }();
  std::size_t payload = 0;
  for (const auto& p : state.params) payload += 4 * p.value.numel();
  EXPECT_EQ(fs::file_size(path), 4 + 2 + 4 + spec_json.size() + payload);
  EXPECT_EQ(payload, 4 * model::total_parameter_count(spec));
}

TEST(Checkpoint, CorruptedMagicAndTruncationAreVersionedErrors) {
  const auto spec = model::build_simple_convnet({3, 32, 32}, 10, 10, 1);
  const auto state = model::init_state(spec, 53);
  const fs::path path = temp_dir() / "corrupt.snet";
  model::save_checkpoint(spec, state, path);

  std::string bytes;
  {
    std::ifstream file(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(file)),
                 std::istreambuf_iterator<char>());
  }
  {
    std::string bad = bytes;
    bad[0] = 'X';
    const fs::path bad_path = temp_dir() / "bad_magic.snet";
    std::ofstream out(bad_path, std::ios::binary);
    out << bad;
    out.close();
    EXPECT_THROW(model::load_checkpoint(bad_path), FormatError);
  }
  {
    std::string bad = bytes;
    bad[4] = 9;  // version
    const fs::path bad_path = temp_dir() / "bad_version.snet";
    std::ofstream out(bad_path, std::ios::binary);
    out << bad;
    out.close();
    EXPECT_THROW(model::load_checkpoint(bad_path), FormatError);
  }
  {
    const fs::path bad_path = temp_dir() / "truncated.snet";
    std::ofstream out(bad_path, std::ios::binary);
    out << bytes.substr(0, bytes.size() - 7);
    out.close();
    EXPECT_THROW(model::load_checkpoint(bad_path), FormatError);
  }
}
