#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "streamnet/error.hpp"
#include "streamnet/graph.hpp"
#include "streamnet/imaging.hpp"
#include "streamnet/rng.hpp"
#include "streamnet/tensor.hpp"

// Declarative model descriptions and their forward/parameter plumbing. All
// three experiment architectures share one description: a list of per-stream
// intensity bands (empty = one raw stream), a conv stack cloned per stream,
// and a shared fully connected head over the concatenated stream features.

namespace streamnet::model {

struct ConvBlock {
  std::size_t filters = 0;
  std::size_t kernel = 0;  // square, odd

  bool operator==(const ConvBlock&) const = default;
};

struct ModelSpec {
  std::size_t in_channels = 0;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::size_t num_classes = 0;
  /// One band per stream; empty means a single stream fed the raw image.
  std::vector<imaging::SliceBand> bands;
  /// Conv stack applied within every stream: conv -> relu -> 2x2 maxpool.
  std::vector<ConvBlock> blocks;
  /// Optional hidden dense layers (with relu) between the concatenated
  /// features and the class logits.
  std::vector<std::size_t> hidden_dense;

  std::size_t stream_count() const {
    return bands.empty() ? 1 : bands.size();
  }

  bool operator==(const ModelSpec&) const = default;
};

/// Spatial side after the conv stack, verifying no stage collapses. Throws
/// SpatialCollapseError before any training can start.
inline std::pair<std::size_t, std::size_t> validate_spec(const ModelSpec& spec) {
  if (spec.in_channels == 0 || spec.in_height == 0 || spec.in_width == 0) {
    throw ConfigError("model: input shape has a zero extent");
  }
  if (spec.num_classes < 2) {
    throw ConfigError("model: need at least 2 classes");
  }
  if (spec.blocks.empty()) {
    throw ConfigError("model: conv stack is empty");
  }
  if (!spec.bands.empty()) {
    imaging::validate_band_list(spec.bands);
  }
  std::size_t h = spec.in_height, w = spec.in_width;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const ConvBlock& b = spec.blocks[i];
    if (b.filters == 0 || b.kernel == 0 || b.kernel % 2 == 0) {
      throw ConfigError("model: block " + std::to_string(i) +
                        " needs filters > 0 and an odd kernel");
    }
    // conv is same-padded; pooling halves and needs both sides >= 2.
    if (h < 2 || w < 2) {
      throw SpatialCollapseError(
          "model: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
          " collapses at block " + std::to_string(i) +
          " (input too small for " + std::to_string(spec.blocks.size()) +
          " pooling stages)");
    }
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

/// The paper-family conv net: five same-padded conv blocks
/// (32x7x7, 64x5x5, 128x3x3, 256x1x1, final x1x1), each followed by relu and
/// 2x2 max pooling, then a dense softmax head. `width_multiplier` scales
/// every conv layer's filter count (the "wide" variant uses 5).
inline ModelSpec build_simple_convnet(std::array<std::size_t, 3> input_chw,
                                      std::size_t num_classes,
                                      std::size_t final_conv_filters,
                                      std::size_t width_multiplier = 1) {
  if (width_multiplier == 0) throw ConfigError("model: width_multiplier must be >= 1");
  if (final_conv_filters == 0) throw ConfigError("model: final_conv_filters must be >= 1");
  ModelSpec spec;
  spec.in_channels = input_chw[0];
  spec.in_height = input_chw[1];
  spec.in_width = input_chw[2];
  spec.num_classes = num_classes;
  spec.blocks = {{32 * width_multiplier, 7},
                 {64 * width_multiplier, 5},
                 {128 * width_multiplier, 3},
                 {256 * width_multiplier, 1},
                 {final_conv_filters * width_multiplier, 1}};
  if (input_chw[1] % 32 != 0 || input_chw[2] % 32 != 0) {
    throw SpatialCollapseError(
        "model: input sides " + std::to_string(input_chw[1]) + "x" +
        std::to_string(input_chw[2]) +
        " must be divisible by 32 (five pooling stages)");
  }
  validate_spec(spec);
  return spec;
}

/// Multi-stream variant: per band, a slicing input layer feeding its own
/// width-1 conv stack; stream features are concatenated into the shared head.
inline ModelSpec build_streaming_net(std::array<std::size_t, 3> input_chw,
                                     std::size_t num_classes,
                                     std::vector<imaging::SliceBand> bands,
                                     std::size_t final_conv_filters,
                                     std::vector<std::size_t> hidden_dense = {}) {
  ModelSpec spec = build_simple_convnet(input_chw, num_classes, final_conv_filters, 1);
  if (bands.empty()) {
    throw ConfigError("model: streaming net needs at least one band");
  }
  spec.bands = std::move(bands);
  spec.hidden_dense = std::move(hidden_dense);
  validate_spec(spec);
  return spec;
}

struct Parameter {
  std::string key;
  Tensor value;
};

/// All trainable tensors of a model, in a fixed key order determined by the
/// spec: per stream the conv kernels and biases block by block, then the head
/// dense layers. Stream parameters are never shared.
struct ModelState {
  std::vector<Parameter> params;

  Tensor& at(const std::string& key) {
    for (Parameter& p : params) {
      if (p.key == key) return p.value;
    }
    throw ConfigError("model: no parameter '" + key + "'");
  }
};

namespace detail {

inline std::size_t head_input_features(const ModelSpec& spec) {
  auto [h, w] = validate_spec(spec);
  return spec.stream_count() * spec.blocks.back().filters * h * w;
}

template <typename Fn>
void for_each_parameter(const ModelSpec& spec, Fn&& fn) {
  for (std::size_t s = 0; s < spec.stream_count(); ++s) {
    std::size_t channels = spec.in_channels;
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
      const ConvBlock& b = spec.blocks[i];
      const std::string base = "s" + std::to_string(s) + ".conv" + std::to_string(i);
      fn(base + ".kernel",
         Shape{b.filters, channels, b.kernel, b.kernel},
         channels * b.kernel * b.kernel);
      fn(base + ".bias", Shape{b.filters}, 0);
      channels = b.filters;
    }
  }
  std::size_t features = head_input_features(spec);
  for (std::size_t i = 0; i < spec.hidden_dense.size(); ++i) {
    const std::string base = "head.fc" + std::to_string(i);
    fn(base + ".weight", Shape{features, spec.hidden_dense[i]}, features);
    fn(base + ".bias", Shape{spec.hidden_dense[i]}, 0);
    features = spec.hidden_dense[i];
  }
  const std::string base = "head.fc" + std::to_string(spec.hidden_dense.size());
  fn(base + ".weight", Shape{features, spec.num_classes}, features);
  fn(base + ".bias", Shape{spec.num_classes}, 0);
}

}  // namespace detail

/// Kaiming-style uniform init scaled by fan-in (bound sqrt(6/fan_in)) for
/// kernels and dense weights, with each output unit's weights mean-centered;
/// biases start at zero. Each parameter draws from its own derived seed, so
/// the values do not depend on iteration order.
///
/// The centering matters: every hidden activation in these nets is
/// post-relu, hence nonnegative, so an output unit's response carries a
/// random offset of roughly mean(x) * sum(weights). At the narrow 1x1
/// layers (4-10 filters) that offset regularly exceeds the response spread
/// and an unlucky draw leaves the entire layer below zero - relu then blocks
/// all gradient flow and the network is untrainable from step one. Removing
/// each unit's weight mean zeroes the offset exactly.
inline ModelState init_state(const ModelSpec& spec, std::uint64_t seed) {
  ModelState state;
  std::size_t index = 0;
  detail::for_each_parameter(spec, [&](const std::string& key, Shape shape,
                                       std::size_t fan_in) {
    Parameter p{key, Tensor(std::move(shape))};
    if (fan_in > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      SplitMix64 rng(derive_seed(seed, index));
      const std::size_t n = p.value.numel();
      for (std::size_t i = 0; i < n; ++i) {
        p.value[i] = rng.next_double(-bound, bound);
      }
      // one weight group per output unit: kernels are [cout, fan_in] blocks,
      // dense weights are [fan_in, out] columns
      if (p.value.rank() == 4) {
        const std::size_t groups = p.value.dim(0);
        const std::size_t fan = n / groups;
        for (std::size_t g = 0; g < groups; ++g) {
          double mean = 0.0;
          for (std::size_t i = 0; i < fan; ++i) mean += p.value[g * fan + i];
          mean /= static_cast<double>(fan);
          for (std::size_t i = 0; i < fan; ++i) p.value[g * fan + i] -= mean;
        }
      } else {
        const std::size_t rows = p.value.dim(0), cols = p.value.dim(1);
        for (std::size_t c = 0; c < cols; ++c) {
          double mean = 0.0;
          for (std::size_t r = 0; r < rows; ++r) mean += p.value[r * cols + c];
          mean /= static_cast<double>(rows);
          for (std::size_t r = 0; r < rows; ++r) p.value[r * cols + c] -= mean;
        }
      }
    }
    state.params.push_back(std::move(p));
    ++index;
  });
  return state;
}

/// Trainable value count of the conv stacks only (all streams, head
/// excluded) - the quantity the stream-vs-wide parameter ledger compares.
inline std::size_t conv_parameter_count(const ModelSpec& spec) {
  std::size_t count = 0;
  detail::for_each_parameter(spec, [&](const std::string& key, Shape shape,
                                       std::size_t) {
    if (key.rfind("head.", 0) != 0) count += shape_numel(shape);
  });
  return count;
}

inline std::size_t total_parameter_count(const ModelSpec& spec) {
  std::size_t count = 0;
  detail::for_each_parameter(
      spec, [&](const std::string&, Shape shape, std::size_t) {
        count += shape_numel(shape);
      });
  return count;
}

/// A recorded forward pass: the tape, the logits node, and the parameter
/// nodes in ModelState order (for reading gradients after backward).
struct ForwardPass {
  Graph graph;
  NodeId logits = 0;
  std::vector<NodeId> param_nodes;
};

/// Builds the forward graph for a batch. Streams are evaluated independently
/// (band-list order) and concatenated; slicing happens outside the tape since
/// the input needs no gradient. Corruption, when any, must already be applied
/// to `batch` - the model itself never adds noise.
inline ForwardPass build_forward(const ModelSpec& spec, const ModelState& state,
                                 const Tensor& batch, bool recording = true) {
  require_rank(batch, 4, "model input");
  if (batch.dim(1) != spec.in_channels || batch.dim(2) != spec.in_height ||
      batch.dim(3) != spec.in_width) {
    throw ShapeError("model: batch " + shape_to_string(batch.shape()) +
                     " does not match input " +
                     std::to_string(spec.in_channels) + "x" +
                     std::to_string(spec.in_height) + "x" +
                     std::to_string(spec.in_width));
  }
  ForwardPass fp{Graph(recording)};
  Graph& g = fp.graph;

  std::size_t next_param = 0;
  auto param = [&]() {
    NodeId id = g.parameter(state.params[next_param].value);
    fp.param_nodes.push_back(id);
    ++next_param;
    return id;
  };

  std::vector<NodeId> stream_features;
  for (std::size_t s = 0; s < spec.stream_count(); ++s) {
    NodeId h = spec.bands.empty()
                   ? g.input(batch)
                   : g.input(imaging::slice(batch, spec.bands[s]));
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
      NodeId k = param();
      NodeId b = param();
      h = g.maxpool2x2(g.relu(g.conv2d(h, k, b, Padding::kSame)));
    }
    stream_features.push_back(g.flatten(h));
  }

  NodeId features = stream_features.size() == 1
                        ? stream_features[0]
                        : g.concat_features(stream_features);
  for (std::size_t i = 0; i < spec.hidden_dense.size(); ++i) {
    NodeId w = param();
    NodeId b = param();
    features = g.relu(g.dense(features, w, b));
  }
  NodeId w = param();
  NodeId b = param();
  fp.logits = g.dense(features, w, b);
  return fp;
}

/// Inference-only logits. Throws NumericError if any logit is non-finite.
inline Tensor forward(const ModelSpec& spec, const ModelState& state,
                      const Tensor& batch) {
  ForwardPass fp = build_forward(spec, state, batch, /*recording=*/false);
  Tensor logits = fp.graph.value(fp.logits);
  if (!logits.all_finite()) {
    throw NumericError("model: non-finite activation in forward pass");
  }
  return logits;
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic "SNET", u16 version, u32 length-prefixed UTF-8 JSON
// spec block, then per-parameter little-endian IEEE-754 float32 payloads in
// key order. Training math is 64-bit; checkpoints round to 32.

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size()) {
      throw FormatError(std::string("checkpoint: truncated file (") + what + ")");
    }
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(bytes[pos]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
};

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["input_shape"] = {spec.in_channels, spec.in_height, spec.in_width};
  j["num_classes"] = spec.num_classes;
  j["bands"] = nlohmann::json::array();
  for (const auto& b : spec.bands) j["bands"].push_back({b.lo, b.hi});
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : spec.blocks) {
    j["blocks"].push_back({{"filters", b.filters}, {"kernel", b.kernel}});
  }
  j["hidden_dense"] = spec.hidden_dense;
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  const auto& shape = j.at("input_shape");
  spec.in_channels = shape.at(0).get<std::size_t>();
  spec.in_height = shape.at(1).get<std::size_t>();
  spec.in_width = shape.at(2).get<std::size_t>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& b : j.at("bands")) {
    spec.bands.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
  }
  for (const auto& b : j.at("blocks")) {
    spec.blocks.push_back({b.at("filters").get<std::size_t>(),
                           b.at("kernel").get<std::size_t>()});
  }
  for (const auto& h : j.at("hidden_dense")) {
    spec.hidden_dense.push_back(h.get<std::size_t>());
  }
  return spec;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'S', 'N', 'E', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelSpec& spec, const ModelState& state,
                            const std::filesystem::path& path) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u16(out, kCheckpointVersion);
  const std::string spec_json = detail::spec_to_json(spec).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(spec_json.size()));
  out.append(spec_json);
  for (const Parameter& p : state.params) {
    for (std::size_t i = 0, n = p.value.numel(); i < n; ++i) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(
          static_cast<float>(p.value[i]));
      detail::put_u32(out, bits);
    }
  }
  // write-then-rename keeps the previous checkpoint intact if this write dies
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write checkpoint " + tmp.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::pair<ModelSpec, ModelState> load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(file)),
                    std::istreambuf_iterator<char>());
  detail::Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (not a SNET file)");
  }
  r.pos = 4;
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t spec_len = r.u32("spec length");
  r.need(spec_len, "spec block");
  nlohmann::json spec_json;
  try {
    spec_json = nlohmann::json::parse(bytes.substr(r.pos, spec_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad spec block: ") + e.what());
  }
  r.pos += spec_len;

  ModelSpec spec = detail::spec_from_json(spec_json);
  validate_spec(spec);
  ModelState state;
  detail::for_each_parameter(spec, [&](const std::string& key, Shape shape,
                                       std::size_t) {
    Parameter p{key, Tensor(std::move(shape))};
    r.need(4 * p.value.numel(), key.c_str());
    for (std::size_t i = 0, n = p.value.numel(); i < n; ++i) {
      p.value[i] = static_cast<double>(std::bit_cast<float>(r.u32(key.c_str())));
    }
    state.params.push_back(std::move(p));
  });
  if (r.pos != bytes.size()) {
    throw FormatError("checkpoint: " + std::to_string(bytes.size() - r.pos) +
                      " trailing bytes");
  }
  return {std::move(spec), std::move(state)};
}

}  // namespace streamnet::model
