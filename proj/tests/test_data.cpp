// Copyright 2026 The deskvae Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "support.hpp"

namespace deskvae {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("deskvae_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Quantize, KnownLevels) {
  EXPECT_EQ(quantize_level(255, 5), 31);
  EXPECT_EQ(quantize_level(0, 5), 0);
  for (int b = 1; b <= 8; ++b) EXPECT_EQ(quantize_level(0, b), 0);
  EXPECT_EQ(quantize_level(255, 8), 255);
  EXPECT_EQ(quantize_level(7, 5), 0);
  EXPECT_EQ(quantize_level(8, 5), 1);
}

TEST(Quantize, IdempotentOverAllValues) {
  for (int b = 1; b <= 8; ++b)
    for (int x = 0; x < 256; ++x) {
      const auto q = quantize_level(static_cast<std::uint8_t>(x), b);
      EXPECT_EQ(quantize_level(dequantize_level(q, b), b), q) << b << " " << x;
    }
}

TEST(Quantize, RejectsBadBitDepths) {
  EXPECT_THROW(quantize_level(1, 0), ConfigError);
  EXPECT_THROW(quantize_level(1, 9), ConfigError);
  EXPECT_THROW(ImageBatch x = quantize_to_bits(ImageBatch(Shape{1, 1, 1, 1}, 5), 4), DataError);
}

TEST(Quantize, DisplayLevelsAreBinCenters) {
  EXPECT_EQ(dequantize_level(0, 5), 4);
  EXPECT_EQ(dequantize_level(31, 5), 252);
  EXPECT_EQ(dequantize_level(200, 8), 200);
}

TEST(Quantize, FiveBitDisplayShowsAtMost32Levels) {
  const ImageBatch raw = synthetic_images(SyntheticKind::kGradientRamps, 64, 8, 3, 1);
  const ImageBatch shown = dequantize_for_display(quantize_to_bits(raw, 5));
  for (int c = 0; c < 3; ++c) {
    std::set<int> levels;
    for (int n = 0; n < 64; ++n)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) levels.insert(shown.at(n, c, y, x));
    EXPECT_LE(levels.size(), 32u);
    EXPECT_GT(levels.size(), 16u);
  }
}

TEST(Binarize, ZerosStayZero) {
  const Tensor zeros(Shape{1, 1, 4, 4});
  for (auto mode : {BinarizeMode::kThreshold, BinarizeMode::kStochastic})
    for (auto v : binarize(zeros, mode, 3).pixels) EXPECT_EQ(v, 0);
}

TEST(Binarize, ThresholdAtHalf) {
  Tensor t(Shape{1, 1, 1, 3});
  t[0] = 0.49;
  t[1] = 0.5;
  t[2] = 1.0;
  const ImageBatch b = binarize(t, BinarizeMode::kThreshold);
  EXPECT_EQ(b.pixels, (std::vector<std::uint8_t>{0, 1, 1}));
  EXPECT_EQ(b.num_bits, 1);
  t[0] = 1.5;
  EXPECT_THROW(binarize(t, BinarizeMode::kThreshold), DataError);
}

TEST(Binarize, StochasticIsSeededAndUnbiased) {
  const Tensor p(Shape{1, 1, 100, 100}, 0.3);
  const ImageBatch a = binarize(p, BinarizeMode::kStochastic, 42), b = binarize(p, BinarizeMode::kStochastic, 42);
  EXPECT_EQ(a, b);
  double mean = 0.0;
  for (auto v : a.pixels) mean += v;
  mean /= a.pixels.size();
  EXPECT_NEAR(mean, 0.3, 0.015);
}

TEST(Synthetic, SeededGenerationIsBitIdentical) {
  for (auto k : {SyntheticKind::kGaussianBlobs, SyntheticKind::kCheckerboards, SyntheticKind::kGradientRamps}) {
    EXPECT_EQ(synthetic_images(k, 16, 8, 3, 5), synthetic_images(k, 16, 8, 3, 5));
    EXPECT_NE(synthetic_images(k, 16, 8, 3, 5), synthetic_images(k, 16, 8, 3, 6));
  }
}

TEST(Synthetic, GradientRampsCoverMostLevels) {
  const ImageBatch r = synthetic_images(SyntheticKind::kGradientRamps, 512, 8, 3, 0);
  std::set<int> levels(r.pixels.begin(), r.pixels.end());
  EXPECT_GE(levels.size(), 200u);
}

TEST(Synthetic, RejectsBadRequests) {
  EXPECT_THROW(synthetic_images(SyntheticKind::kGaussianBlobs, 0, 8, 3, 0), ConfigError);
  EXPECT_THROW(parse_synthetic_kind("spirals"), ConfigError);
}

TEST(Sampler, EveryElementOncePerEpoch) {
  BatchSampler s(50, 7, 3);
  std::vector<int> seen;
  for (int step = 0; step < 50; ++step)
    for (int i : s.indices(step)) seen.push_back(i);
  for (int epoch = 0; epoch < 7; ++epoch) {
    std::set<int> e(seen.begin() + epoch * 50, seen.begin() + (epoch + 1) * 50);
    EXPECT_EQ(e.size(), 50u);
  }
  BatchSampler again(50, 7, 3);
  EXPECT_EQ(again.indices(31), s.indices(31));
  BatchSampler other(50, 7, 4);
  EXPECT_NE(other.indices(0), BatchSampler(50, 7, 3).indices(0));
}

TEST(Sampler, RejectsEmptyDataset) { EXPECT_THROW(BatchSampler(0, 4, 1), DataError); }

TEST(LoadDataset, SplitsDisjointlyWithExpectedSizes) {
  DatasetSpec spec;
  spec.count = 100;
  spec.valid_fraction = 0.2;
  const DatasetSplit s = load_dataset(spec);
  EXPECT_EQ(s.train.size(), 80);
  EXPECT_EQ(s.valid.size(), 20);
  EXPECT_EQ(s.train.image_shape(), (Shape{1, 3, 8, 8}));
  const ImageBatch all = synthetic_images(SyntheticKind::kGaussianBlobs, 100, 8, 3, 0);
  std::multiset<std::vector<std::uint8_t>> pool;
  for (int i = 0; i < 100; ++i) {
    auto span = all.sample(i);
    pool.insert(std::vector<std::uint8_t>(span.begin(), span.end()));
  }
  for (const Dataset* d : {&s.train, &s.valid})
    for (int i = 0; i < d->size(); ++i) {
      auto span = d->images().sample(i);
      auto it = pool.find(std::vector<std::uint8_t>(span.begin(), span.end()));
      ASSERT_NE(it, pool.end());
      pool.erase(it);
    }
  EXPECT_TRUE(pool.empty());
}

TEST(LoadDataset, QuantizesAndBinarizes) {
  DatasetSpec spec;
  spec.count = 10;
  spec.num_bits = 5;
  const DatasetSplit five = load_dataset(spec);
  EXPECT_EQ(five.train.num_bits(), 5);
  for (auto v : five.train.images().pixels) EXPECT_LE(v, 31);
  spec.num_bits = 1;
  spec.channels = 1;
  const DatasetSplit bin = load_dataset(spec);
  for (auto v : bin.train.images().pixels) EXPECT_LE(v, 1);
}

TEST(LoadDataset, ValidatesSpec) {
  DatasetSpec spec;
  spec.valid_fraction = 1.0;
  EXPECT_THROW(load_dataset(spec), ConfigError);
  spec = DatasetSpec{};
  spec.channels = 2;
  EXPECT_THROW(load_dataset(spec), ConfigError);
  spec = DatasetSpec{};
  spec.source = DatasetSpec::Source::kDirectory;
  EXPECT_THROW(load_dataset(spec), ConfigError);
}

TEST(PackagedArray, RoundTripsAndValidates) {
  const fs::path dir = scratch_dir("array");
  const ImageBatch img = quantize_to_bits(synthetic_images(SyntheticKind::kCheckerboards, 5, 8, 3, 1), 5);
  write_packaged_array((dir / "a.bin").string(), img, 1234);
  const PackagedArray back = read_packaged_array((dir / "a.bin").string());
  EXPECT_EQ(back.images, img);
  EXPECT_EQ(back.seed, 1234u);

  DatasetSpec spec;
  spec.source = DatasetSpec::Source::kArrayFile;
  spec.path = (dir / "a.bin").string();
  spec.num_bits = 5;
  spec.valid_fraction = 0.0;
  EXPECT_EQ(load_dataset(spec).train.size(), 5);
  spec.resolution = 4;
  EXPECT_THROW(load_dataset(spec), DataError);

  ImageBatch bad = img;
  bad.pixels[0] = 200;
  write_packaged_array((dir / "bad.bin").string(), bad, 0);
  EXPECT_THROW(read_packaged_array((dir / "bad.bin").string()), DataError);
  std::ofstream((dir / "junk.bin").string()) << "not an array";
  EXPECT_THROW(read_packaged_array((dir / "junk.bin").string()), IoError);
  EXPECT_THROW(read_packaged_array((dir / "missing.bin").string()), IoError);
}

TEST(Png, WriteReadRoundTripIsDeterministic) {
  const fs::path dir = scratch_dir("png");
  Raster r;
  r.width = 5;
  r.height = 3;
  r.channels = 3;
  for (int i = 0; i < 45; ++i) r.pixels.push_back(static_cast<std::uint8_t>(i * 5));
  write_png((dir / "a.png").string(), r);
  write_png((dir / "b.png").string(), r);
  const Raster back = read_png((dir / "a.png").string());
  EXPECT_EQ(back.pixels, r.pixels);
  EXPECT_EQ(back.width, 5);
  std::ifstream a(dir / "a.png", std::ios::binary), b(dir / "b.png", std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
  EXPECT_THROW(read_png((dir / "none.png").string()), IoError);
}

TEST(Png, DirectoryReaderDownsamplesByIntegerFactor) {
  const fs::path dir = scratch_dir("pngdir");
  for (int k = 0; k < 3; ++k) {
    Raster r;
    r.width = r.height = 16;
    r.channels = 3;
    r.pixels.assign(16 * 16 * 3, static_cast<std::uint8_t>(10 * k));
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) r.at(y, x, 0) = (x + y) % 2 ? 100 : 0;
    write_png((dir / ("img" + std::to_string(k) + ".png")).string(), r);
  }
  const ImageBatch b = read_image_directory(dir.string(), 8, 3);
  EXPECT_EQ(b.shape, (Shape{3, 3, 8, 8}));
  EXPECT_EQ(b.at(0, 0, 0, 0), 50);
  EXPECT_EQ(b.at(2, 1, 4, 4), 20);
  EXPECT_THROW(read_image_directory(dir.string(), 5, 3), DataError);
  EXPECT_EQ(read_image_directory(dir.string(), 8, 1).shape.c, 1);
  EXPECT_THROW(read_image_directory(scratch_dir("empty").string(), 8, 3), DataError);
}

TEST(Grid, TileLayoutHasExactPixelDimensions) {
  const ImageBatch img = synthetic_images(SyntheticKind::kGaussianBlobs, 6, 8, 3, 2);
  const Raster r = tile_grid(img, 3);
  EXPECT_EQ(r.width, 24);
  EXPECT_EQ(r.height, 16);
  EXPECT_EQ(r.at(8 + 2, 16 + 5, 1), img.at(5, 1, 2, 5));
}

}  // namespace
}  // namespace deskvae
