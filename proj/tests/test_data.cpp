#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace crossvit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "crossvit_test_data" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// One record: label, then pixel byte (c * 1024 + i) % 256 offset by `shift`.
std::vector<std::uint8_t> record(std::uint8_t label, std::uint8_t shift) {
  std::vector<std::uint8_t> r{label};
  for (std::size_t i = 0; i < 3072; ++i) r.push_back(static_cast<std::uint8_t>((i + shift) % 256));
  return r;
}

std::vector<std::uint8_t> records(std::initializer_list<std::pair<std::uint8_t, std::uint8_t>> list) {
  std::vector<std::uint8_t> out;
  for (auto [label, shift] : list) {
    const auto r = record(label, shift);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

// Solves (A^T A + lambda I) w = A^T y by Gaussian elimination.
std::vector<double> ridge(const std::vector<std::vector<double>>& a, const std::vector<double>& y, double lambda) {
  const std::size_t n = a[0].size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) m[i][j] += a[r][i] * a[r][j];
      m[i][n] += a[r][i] * y[r];
    }
  for (std::size_t i = 0; i < n; ++i) m[i][i] += lambda;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    std::swap(m[col], m[pivot]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (std::size_t j = col; j <= n; ++j) m[r][j] -= f * m[col][j];
    }
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = m[i][n] / m[i][i];
  return w;
}

}  // namespace

TEST(Cifar, TwoRecordFile) {
  const auto dir = temp_dir("two");
  const auto file = dir / "two.bin";
  write_bytes(file, records({{3, 0}, {9, 7}}));
  const Dataset d = load_cifar10_binary(file.string());
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{3, 9}));
  EXPECT_EQ(d.side, 32u);
  // Channel-planar, row-major: byte i of the record maps to pixel i.
  for (std::size_t i = 0; i < 3072; ++i) {
    ASSERT_EQ(d.image_data(0)[i], static_cast<double>(i % 256) / 255.0);
    ASSERT_EQ(d.image_data(1)[i], static_cast<double>((i + 7) % 256) / 255.0);
  }
  const Tensor img = d.image(1);
  EXPECT_EQ(img.shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(img[2 * 1024 + 5 * 32 + 6], static_cast<double>((2 * 1024 + 5 * 32 + 6 + 7) % 256) / 255.0);
}

TEST(Cifar, FullScaleByteIsOne) {
  const auto dir = temp_dir("white");
  std::vector<std::uint8_t> bytes{1};
  bytes.resize(3073, 255);
  write_bytes(dir / "w.bin", bytes);
  const Dataset d = load_cifar10_binary((dir / "w.bin").string());
  for (double v : d.image_data(0)) ASSERT_EQ(v, 1.0);
}

TEST(Cifar, RecordCountIsBytesOver3073) {
  const auto dir = temp_dir("count");
  write_bytes(dir / "c.bin", records({{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}}));
  const Dataset d = load_cifar10_binary((dir / "c.bin").string());
  EXPECT_EQ(d.size(), fs::file_size(dir / "c.bin") / 3073);
  EXPECT_EQ(d.size(), 5u);
}

TEST(Cifar, Errors) {
  const auto dir = temp_dir("errors");
  auto bytes = records({{1, 0}});
  bytes.pop_back();
  write_bytes(dir / "short.bin", bytes);
  EXPECT_THROW(load_cifar10_binary((dir / "short.bin").string()), FormatError);
  write_bytes(dir / "label.bin", records({{1, 0}, {10, 0}}));
  try {
    load_cifar10_binary((dir / "label.bin").string());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("label byte 10"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_cifar10_binary((dir / "missing.bin").string()), FormatError);
  EXPECT_THROW(load_cifar10_binary(temp_dir("empty").string()), FormatError);
}

TEST(Cifar, DirectorySplits) {
  const auto dir = temp_dir("splits");
  write_bytes(dir / "data_batch_1.bin", records({{0, 0}, {1, 0}}));
  write_bytes(dir / "data_batch_2.bin", records({{2, 0}}));
  write_bytes(dir / "test_batch.bin", records({{7, 0}}));
  CifarOptions opts;
  EXPECT_EQ(load_cifar10_binary(dir.string(), opts).labels, (std::vector<std::size_t>{0, 1, 2}));
  opts.split = "test";
  EXPECT_EQ(load_cifar10_binary(dir.string(), opts).labels, (std::vector<std::size_t>{7}));
  opts.split = "all";
  EXPECT_EQ(load_cifar10_binary(dir.string(), opts).labels, (std::vector<std::size_t>{0, 1, 2, 7}));
}

TEST(Cifar, NormalizationAndResize) {
  const auto dir = temp_dir("norm");
  write_bytes(dir / "n.bin", records({{4, 11}}));
  CifarOptions opts;
  opts.normalize = true;
  const Dataset d = load_cifar10_binary((dir / "n.bin").string(), opts);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i : {0u, 100u, 1023u}) {
      const double raw = static_cast<double>((c * 1024 + i + 11) % 256) / 255.0;
      EXPECT_NEAR(d.image_data(0)[c * 1024 + i], (raw - opts.mean[c]) / opts.std[c], 1e-14);
    }
  CifarOptions resized;
  resized.target_side = 48;
  const Dataset r = load_cifar10_binary((dir / "n.bin").string(), resized);
  EXPECT_EQ(r.side, 48u);
  EXPECT_EQ(r.image_data(0).size(), 3u * 48 * 48);
}

TEST(Cifar, WriterRoundTrip) {
  Dataset d = synth_dataset(7, 10, 32, 3);
  const auto dir = temp_dir("writer");
  write_cifar10_binary(d, (dir / "s.bin").string());
  EXPECT_EQ(fs::file_size(dir / "s.bin"), 7u * 3073u);
  const Dataset back = load_cifar10_binary((dir / "s.bin").string());
  EXPECT_EQ(back.labels, d.labels);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) ASSERT_NEAR(back.pixels[i], d.pixels[i], 0.5 / 255.0 + 1e-12);
}

TEST(Synth, DeterministicPerSeed) {
  const Dataset a = synth_dataset(20, 4, 16, 9), b = synth_dataset(20, 4, 16, 9), c = synth_dataset(20, 4, 16, 10);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.pixels, c.pixels);
  for (double v : a.pixels) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Synth, LabelsCoverClassesUniformly) {
  const Dataset d = synth_dataset(60, 10, 8, 1);
  std::vector<std::size_t> counts(10, 0);
  for (std::size_t l : d.labels) ++counts[l];
  for (std::size_t c : counts) EXPECT_EQ(c, 6u);
  EXPECT_NO_THROW(d.validate());
}

TEST(Synth, LinearProbeSeparatesClasses) {
  // One-vs-all least squares on 8x8-pooled pixels.
  const Dataset d = synth_dataset(200, 10, 32, 0);
  std::vector<std::vector<double>> features;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto img = d.image_data(i);
    std::vector<double> f{1.0};
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t by = 0; by < 8; ++by)
        for (std::size_t bx = 0; bx < 8; ++bx) {
          double acc = 0.0;
          for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) acc += img[c * 1024 + (by * 4 + y) * 32 + bx * 4 + x];
          f.push_back(acc / 16.0);
        }
    features.push_back(std::move(f));
  }
  std::vector<std::vector<double>> weights;
  for (std::size_t k = 0; k < 10; ++k) {
    std::vector<double> target(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) target[i] = d.labels[i] == k ? 1.0 : 0.0;
    weights.push_back(ridge(features, target, 1e-3));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t k = 0; k < 10; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < features[i].size(); ++j) s += weights[k][j] * features[i][j];
      if (s > best_score) best_score = s, best = k;
    }
    hits += best == d.labels[i];
  }
  EXPECT_GT(static_cast<double>(hits) / d.size(), 0.8);
}

TEST(Dataset, SubsetAndValidate) {
  Dataset d = synth_dataset(6, 3, 4, 0);
  const Dataset s = d.subset({4, 1});
  EXPECT_EQ(s.labels, (std::vector<std::size_t>{1, 1}));
  EXPECT_TRUE(std::equal(s.image_data(0).begin(), s.image_data(0).end(), d.image_data(4).begin()));
  d.labels[0] = 3;
  EXPECT_THROW(d.validate(), FormatError);
  d.labels[0] = 0;
  d.pixels.pop_back();
  EXPECT_THROW(d.validate(), FormatError);
}
