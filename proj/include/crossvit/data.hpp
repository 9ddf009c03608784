#pragma once

// Image classification datasets: CIFAR-10 binary files and a synthetic
// class-conditional blob generator.
//
// CIFAR-10 binary record: one label byte followed by 3 * side * side pixel
// bytes, channel-planar (all R, then G, then B), each plane row-major.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "crossvit/config.hpp"
#include "crossvit/interp.hpp"
#include "crossvit/rng.hpp"
#include "crossvit/tensor.hpp"

namespace crossvit {

struct Dataset {
  std::size_t side = 0;
  std::size_t num_classes = 10;
  std::vector<double> pixels;  // n images, each [3 x side x side]
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return 3 * side * side; }

  std::span<const double> image_data(std::size_t i) const {
    return std::span<const double>(pixels).subspan(i * image_size(), image_size());
  }
  Tensor image(std::size_t i) const {
    const auto d = image_data(i);
    return Tensor::from({3, side, side}, std::vector<double>(d.begin(), d.end()));
  }

  void validate() const {
    if (pixels.size() != labels.size() * image_size())
      throw FormatError("dataset holds " + std::to_string(pixels.size()) + " pixel values for " +
                        std::to_string(labels.size()) + " images of side " + std::to_string(side));
    for (std::size_t l : labels)
      if (l >= num_classes)
        throw FormatError("label " + std::to_string(l) + " outside [0, " +
                          std::to_string(num_classes) + ")");
  }

  // Bilinear resize of every image.
  void resize_to(std::size_t new_side) {
    if (new_side == side) return;
    std::vector<double> out;
    out.reserve(size() * 3 * new_side * new_side);
    for (std::size_t i = 0; i < size(); ++i) {
      const auto r = interp::resize_image_bilinear(image_data(i), 3, side, new_side);
      out.insert(out.end(), r.begin(), r.end());
    }
    pixels = std::move(out);
    side = new_side;
  }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    Dataset d{side, num_classes, {}, {}};
    for (std::size_t i : indices) {
      const auto img = image_data(i);
      d.pixels.insert(d.pixels.end(), img.begin(), img.end());
      d.labels.push_back(labels[i]);
    }
    return d;
  }
};

struct CifarOptions {
  std::size_t record_side = 32;
  std::size_t target_side = 0;  // 0 keeps record_side
  std::string split = "train";  // for directories: train | test | all
  bool normalize = false;
  std::array<double, 3> mean{0.4914, 0.4822, 0.4465};
  std::array<double, 3> std{0.2470, 0.2435, 0.2616};
};

namespace detail {

inline void append_cifar_file(const std::filesystem::path& file, std::size_t record_side,
                              Dataset& out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + file.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  const std::size_t record = 1 + 3 * record_side * record_side;
  if (bytes.size() % record)
    throw FormatError("'" + file.string() + "' has " + std::to_string(bytes.size()) +
                      " bytes, not a multiple of the " + std::to_string(record) + "-byte record");
  for (std::size_t off = 0; off < bytes.size(); off += record) {
    if (bytes[off] > 9)
      throw FormatError("'" + file.string() + "': label byte " + std::to_string(bytes[off]) +
                        " at record " + std::to_string(off / record) + " exceeds 9");
    out.labels.push_back(bytes[off]);
    for (std::size_t i = 1; i < record; ++i) out.pixels.push_back(bytes[off + i] / 255.0);
  }
}

}  // namespace detail

// `path` is a single binary file or a directory. For directories the
// split selects data_batch_*.bin (train) or test_batch.bin (test); when no
// such files exist, or split is "all", every *.bin file is read in
// lexicographic order.
inline Dataset load_cifar10_binary(const std::string& path, const CifarOptions& opts = {}) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    std::vector<fs::path> all;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".bin") all.push_back(e.path());
    std::sort(all.begin(), all.end());
    for (const auto& f : all) {
      const std::string name = f.filename().string();
      if ((opts.split == "train" && name.rfind("data_batch", 0) == 0) ||
          (opts.split == "test" && name.rfind("test_batch", 0) == 0))
        files.push_back(f);
    }
    if (files.empty()) files = all;
    if (files.empty()) throw FormatError("no .bin files in '" + path + "'");
  } else {
    files.push_back(path);
  }
  Dataset d{opts.record_side, 10, {}, {}};
  for (const auto& f : files) detail::append_cifar_file(f, opts.record_side, d);
  if (opts.normalize) {
    const std::size_t plane = d.side * d.side;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          double& v = d.pixels[i * 3 * plane + c * plane + p];
          v = (v - opts.mean[c]) / opts.std[c];
        }
  }
  if (opts.target_side && opts.target_side != d.side) d.resize_to(opts.target_side);
  return d;
}

// Writes `d` as CIFAR-10 binary records, quantizing pixels in [0,1] to bytes.
inline void write_cifar10_binary(const Dataset& d, const std::string& path) {
  d.validate();
  if (d.num_classes > 10) throw FormatError("CIFAR-10 records hold labels 0..9 only");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(d.size() * (1 + d.image_size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    bytes.push_back(static_cast<std::uint8_t>(d.labels[i]));
    for (double v : d.image_data(i))
      bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Each class owns a Gaussian blob (center, radius, colour). Sample i has
// label i mod num_classes and shows its class blob with a jittered center
// over a noisy background. Values lie in [0, 1].
inline Dataset synth_dataset(std::size_t n, std::size_t num_classes, std::size_t side,
                             std::uint64_t seed) {
  if (num_classes == 0 || side == 0) throw ConfigError("synth_dataset needs classes and side > 0");
  Rng rng(seed);
  struct Blob {
    double cy, cx, radius;
    std::array<double, 3> colour;
  };
  std::vector<Blob> blobs;
  const double s = static_cast<double>(side);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Blob b{};
    b.cy = (0.2 + 0.6 * rng.uniform()) * s;
    b.cx = (0.2 + 0.6 * rng.uniform()) * s;
    b.radius = (0.10 + 0.08 * rng.uniform()) * s;
    for (double& ch : b.colour) ch = 0.3 + 0.7 * rng.uniform();
    blobs.push_back(b);
  }
  Dataset d{side, num_classes, {}, {}};
  d.pixels.reserve(n * 3 * side * side);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % num_classes;
    const Blob& b = blobs[label];
    const double cy = b.cy + (rng.uniform() - 0.5) * 0.08 * s;
    const double cx = b.cx + (rng.uniform() - 0.5) * 0.08 * s;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double dx = static_cast<double>(x) + 0.5 - cx;
          const double blob = std::exp(-(dy * dy + dx * dx) / (2.0 * b.radius * b.radius));
          const double v = 0.1 + blob * b.colour[ch] + 0.05 * rng.normal();
          d.pixels.push_back(std::clamp(v, 0.0, 1.0));
        }
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace crossvit
