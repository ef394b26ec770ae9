// streamnet command-line interface: training, evaluation, image tools,
// gradient checking, plotting, and dataset conversion.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "streamnet/dataio.hpp"
#include "streamnet/error.hpp"
#include "streamnet/gradcheck.hpp"
#include "streamnet/harness.hpp"
#include "streamnet/imaging.hpp"
#include "streamnet/model.hpp"
#include "streamnet/ppm.hpp"

namespace fs = std::filesystem;
using namespace streamnet;

namespace {

// --data references look like kind:arg, e.g. cifar10:/data/cifar,
// sndt:test.sndt, synth:4,10,32,7 (classes, per_class, side, seed).
std::vector<dataio::Sample> load_eval_samples(const std::string& ref,
                                              dataio::DatasetManifest* manifest) {
  const std::size_t colon = ref.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("data reference '" + ref + "' must be kind:argument");
  }
  const std::string kind = ref.substr(0, colon);
  const std::string arg = ref.substr(colon + 1);
  if (kind == "cifar10") {
    dataio::Dataset ds = dataio::load_cifar10(arg);
    *manifest = ds.manifest;
    return std::move(ds.test);
  }
  if (kind == "sndt") {
    dataio::SndtContent content = dataio::load_raw_container(arg);
    manifest->name = "sndt";
    manifest->class_names = content.class_names;
    manifest->channels = content.channels;
    manifest->height = content.height;
    manifest->width = content.width;
    manifest->test_count = content.samples.size();
    return std::move(content.samples);
  }
  if (kind == "synth") {
    std::vector<std::size_t> nums;
    std::size_t start = 0;
    while (start <= arg.size()) {
      std::size_t comma = arg.find(',', start);
      if (comma == std::string::npos) comma = arg.size();
      nums.push_back(std::stoull(arg.substr(start, comma - start)));
      start = comma + 1;
    }
    if (nums.size() != 4) {
      throw ConfigError("synth reference needs classes,per_class,side,seed");
    }
    dataio::Dataset ds = dataio::synth_dataset(nums[0], nums[1], nums[2], nums[3]);
    *manifest = ds.manifest;
    return std::move(ds.test);
  }
  throw ConfigError("unknown data kind '" + kind + "'");
}

int cmd_train(const std::string& config_path) {
  harness::ExperimentConfig config = harness::load_experiment_config(config_path);
  harness::RunResult result = harness::run_experiment(
      config, [](const std::string& line) { std::cout << line << "\n"; });
  std::cout << "metrics: " << result.metrics_path.string() << "\n";
  std::cout << "checkpoint: " << result.checkpoint_path.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_ref,
             double noise_ratio, std::uint64_t noise_seed) {
  auto [spec, state] = model::load_checkpoint(checkpoint);
  dataio::DatasetManifest manifest;
  std::vector<dataio::Sample> samples = load_eval_samples(data_ref, &manifest);
  std::optional<imaging::NoiseSpec> noise;
  if (noise_ratio > 0.0) noise = imaging::NoiseSpec{noise_ratio, noise_seed};
  const double accuracy = harness::evaluate(spec, state, samples, noise);
  std::printf("accuracy %.6f (%zu samples, noise %.2f)\n", accuracy,
              samples.size(), noise_ratio);
  return 0;
}

int cmd_slice(const std::string& input, std::size_t bands, const std::string& out_dir) {
  const ppm::Image image = ppm::read(input);
  const std::vector<std::uint8_t> chw = ppm::to_chw(image);
  const auto band_list = imaging::make_bands(bands);
  fs::create_directories(out_dir);
  for (std::size_t k = 0; k < band_list.size(); ++k) {
    std::vector<std::uint8_t> sliced(chw.size(), 0);
    for (std::size_t i = 0; i < chw.size(); ++i) {
      // keep the original byte when its normalized value is in the band
      if (band_list[k].contains(static_cast<double>(chw[i]) / 255.0)) {
        sliced[i] = chw[i];
      }
    }
    const fs::path out = fs::path(out_dir) / ("band_" + std::to_string(k) + ".ppm");
    ppm::write(out, ppm::from_chw(sliced, image.height, image.width));
    std::cout << out.string() << "\n";
  }
  return 0;
}

int cmd_corrupt(const std::string& input, double ratio, std::uint64_t seed,
                const std::string& output) {
  const ppm::Image image = ppm::read(input);
  ppm::Image out = image;
  const imaging::NoiseSpec spec{ratio, seed};
  const auto mask = imaging::corruption_mask(spec, image.height, image.width);
  for (std::size_t loc : mask) {
    out.pixels[3 * loc] = 0;
    out.pixels[3 * loc + 1] = 0;
    out.pixels[3 * loc + 2] = 0;
  }
  ppm::write(output, out);
  std::printf("zeroed %zu of %zu locations\n", mask.size(),
              image.width * image.height);
  return 0;
}

int cmd_gradcheck() {
  const auto reports = gradcheck::run_standard_suite();
  bool ok = true;
  for (const auto& r : reports) {
    const bool pass = r.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-28s max_rel_error %.3e over %zu coordinates  %s\n",
                r.name.c_str(), r.max_rel_error, r.checked,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_plot(const std::string& metrics, const std::string& output) {
  harness::emit_plot(metrics, output);
  fs::path csv = fs::path(output);
  csv.replace_extension(".csv");
  std::cout << output << "\n" << csv.string() << "\n";
  return 0;
}

dataio::SndtContent sndt_from_samples(std::vector<dataio::Sample> samples,
                                      const dataio::DatasetManifest& manifest) {
  dataio::SndtContent content;
  content.class_names = manifest.class_names;
  content.channels = manifest.channels;
  content.height = manifest.height;
  content.width = manifest.width;
  content.samples = std::move(samples);
  return content;
}

int cmd_convert(const std::string& from, const std::string& input,
                const std::string& output, double split, std::uint64_t split_seed) {
  if (from == "cifar10") {
    dataio::Dataset ds = dataio::load_cifar10(input);
    dataio::write_sndt(output + ".train.sndt",
                       sndt_from_samples(std::move(ds.train), ds.manifest));
    dataio::write_sndt(output + ".test.sndt",
                       sndt_from_samples(std::move(ds.test), ds.manifest));
    std::cout << output << ".train.sndt\n" << output << ".test.sndt\n";
    return 0;
  }
  if (from != "imagedir-raw") {
    throw ConfigError("convert: --from must be cifar10 or imagedir-raw");
  }
  // input directory: one subdirectory per class, PPM images inside.
  std::vector<std::string> class_names;
  for (const auto& entry : fs::directory_iterator(input)) {
    if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
  }
  std::sort(class_names.begin(), class_names.end());
  if (class_names.empty()) {
    throw ConfigError("convert: no class subdirectories under " + input);
  }
  dataio::DatasetManifest manifest;
  manifest.name = fs::path(input).filename().string();
  manifest.class_names = class_names;
  manifest.channels = 3;
  std::vector<dataio::Sample> train, test;
  std::size_t next_id = 0;
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(fs::path(input) / class_names[k])) {
      if (entry.path().extension() == ".ppm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      throw ConfigError("convert: class '" + class_names[k] + "' has no .ppm files");
    }
    std::vector<dataio::Sample> class_samples;
    for (const fs::path& file : files) {
      const ppm::Image image = ppm::read(file);
      if (manifest.height == 0) {
        manifest.height = image.height;
        manifest.width = image.width;
      } else if (image.height != manifest.height || image.width != manifest.width) {
        throw FormatError("convert: " + file.string() + " is " +
                          std::to_string(image.width) + "x" +
                          std::to_string(image.height) + ", expected uniform " +
                          std::to_string(manifest.width) + "x" +
                          std::to_string(manifest.height));
      }
      dataio::Sample s;
      s.image = ppm::to_chw(image);
      s.label = k;
      s.id = next_id++;
      class_samples.push_back(std::move(s));
    }
    // stratified split: per-class seeded shuffle, first floor(n*split) train
    SplitMix64 rng(derive_seed(split_seed, k));
    const auto order = partial_shuffle(class_samples.size(), class_samples.size(), rng);
    const auto train_count = static_cast<std::size_t>(
        std::floor(static_cast<double>(class_samples.size()) * split));
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto& dst = i < train_count ? train : test;
      dst.push_back(std::move(class_samples[order[i]]));
    }
  }
  manifest.train_count = train.size();
  manifest.test_count = test.size();
  std::cout << "split " << split << " seed " << split_seed << ": " << train.size()
            << " train / " << test.size() << " test\n";
  dataio::write_sndt(output + ".train.sndt", sndt_from_samples(std::move(train), manifest));
  dataio::write_sndt(output + ".test.sndt", sndt_from_samples(std::move(test), manifest));
  std::cout << output << ".train.sndt\n" << output << ".test.sndt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streamnet: multi-stream intensity-slice convnet laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "run a training experiment from a JSON config");
  train->add_option("--config", config_path, "experiment config file")->required();

  std::string checkpoint, data_ref;
  double noise_ratio = 0.0;
  std::uint64_t noise_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "SNET checkpoint file")->required();
  eval->add_option("--data", data_ref, "dataset reference kind:arg")->required();
  eval->add_option("--noise", noise_ratio, "zero-noise ratio in [0,1]");
  eval->add_option("--seed", noise_seed, "noise realization seed");

  std::string slice_input, slice_out;
  std::size_t slice_bands = 5;
  auto* slice = app.add_subcommand("slice", "write one intensity slice PPM per band");
  slice->add_option("--input", slice_input, "input PPM (P6)")->required();
  slice->add_option("--bands", slice_bands, "number of bands")->required();
  slice->add_option("--out", slice_out, "output directory")->required();

  std::string corrupt_input, corrupt_output;
  double corrupt_ratio = 0.0;
  std::uint64_t corrupt_seed = 0;
  auto* corrupt = app.add_subcommand("corrupt", "apply random zero-noise to a PPM");
  corrupt->add_option("--input", corrupt_input, "input PPM (P6)")->required();
  corrupt->add_option("--ratio", corrupt_ratio, "fraction of pixels to zero")->required();
  corrupt->add_option("--seed", corrupt_seed, "mask seed");
  corrupt->add_option("--out", corrupt_output, "output PPM")->required();

  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "finite-difference check of every layer and the composed net");

  std::string metrics_path, plot_output;
  auto* plot = app.add_subcommand("plot", "render accuracy curves (SVG + CSV)");
  plot->add_option("--metrics", metrics_path, "metrics JSONL file")->required();
  plot->add_option("--out", plot_output, "output SVG path")->required();

  std::string convert_from, convert_to = "sndt", convert_input, convert_output;
  double convert_split = 0.8;
  std::uint64_t convert_split_seed = 7;
  auto* convert = app.add_subcommand("convert", "convert datasets to SNDT containers");
  convert->add_option("--from", convert_from, "cifar10 | imagedir-raw")->required();
  convert->add_option("--to", convert_to, "target format (sndt)");
  convert->add_option("--input", convert_input, "source directory")->required();
  convert->add_option("--output", convert_output, "output base path")->required();
  convert->add_option("--split", convert_split, "train fraction for imagedir-raw");
  convert->add_option("--split-seed", convert_split_seed, "split shuffle seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) return cmd_eval(checkpoint, data_ref, noise_ratio, noise_seed);
    if (slice->parsed()) return cmd_slice(slice_input, slice_bands, slice_out);
    if (corrupt->parsed()) {
      return cmd_corrupt(corrupt_input, corrupt_ratio, corrupt_seed, corrupt_output);
    }
    if (gradcheck_cmd->parsed()) return cmd_gradcheck();
    if (plot->parsed()) return cmd_plot(metrics_path, plot_output);
    if (convert->parsed()) {
      if (convert_to != "sndt") throw ConfigError("convert: --to must be sndt");
      return cmd_convert(convert_from, convert_input, convert_output,
                         convert_split, convert_split_seed);
    }
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
