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

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "deskvae/error.hpp"
#include "deskvae/png_io.hpp"
#include "deskvae/rng.hpp"
#include "deskvae/tensor.hpp"

namespace deskvae {

// ----------------------------------------------------------------------------
// Bit depth.

inline void require_bits(int num_bits) {
  if (num_bits < 1 || num_bits > 8)
    throw ConfigError("num_bits must be in 1..8, got " + std::to_string(num_bits));
}

/// floor(x / 2^(8 - bits)).
inline std::uint8_t quantize_level(std::uint8_t x, int num_bits) {
  require_bits(num_bits);
  return static_cast<std::uint8_t>(x >> (8 - num_bits));
}

/// Level back to 8-bit for display: level * 2^(8-bits) + half step.
inline std::uint8_t dequantize_level(std::uint8_t level, int num_bits) {
  require_bits(num_bits);
  const int step = 1 << (8 - num_bits);
  return static_cast<std::uint8_t>(std::min(255, level * step + step / 2));
}

inline ImageBatch quantize_to_bits(const ImageBatch& x, int num_bits) {
  require_bits(num_bits);
  if (x.num_bits != 8) throw DataError("quantize_to_bits expects an 8-bit image");
  ImageBatch out(x.shape, num_bits);
  for (std::size_t i = 0; i < x.pixels.size(); ++i) out.pixels[i] = quantize_level(x.pixels[i], num_bits);
  return out;
}

inline ImageBatch dequantize_for_display(const ImageBatch& x) {
  ImageBatch out(x.shape, 8);
  for (std::size_t i = 0; i < x.pixels.size(); ++i) out.pixels[i] = dequantize_level(x.pixels[i], x.num_bits);
  return out;
}

enum class BinarizeMode { kThreshold, kStochastic };

/// x holds intensities in [0, 1]; threshold mode maps x >= 0.5 to 1,
/// stochastic mode draws Bernoulli(x) per pixel.
inline ImageBatch binarize(const Tensor& x, BinarizeMode mode, std::uint64_t seed = 0) {
  ImageBatch out(x.shape(), 1);
  Rng rng(derive_seed(seed, {streams::kData}));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = x[i];
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("binarize expects intensities in [0, 1]");
    out.pixels[i] = mode == BinarizeMode::kThreshold ? (p >= 0.5) : (rng.uniform() < p);
  }
  return out;
}

// ----------------------------------------------------------------------------
// Synthetic desk-scale data.

enum class SyntheticKind { kGaussianBlobs, kCheckerboards, kGradientRamps };

inline SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "gaussian-blobs") return SyntheticKind::kGaussianBlobs;
  if (name == "checkerboards") return SyntheticKind::kCheckerboards;
  if (name == "gradient-ramps") return SyntheticKind::kGradientRamps;
  throw ConfigError("unknown synthetic generator '" + name + "'");
}

/// 8-bit images, NCHW.
inline ImageBatch synthetic_images(SyntheticKind kind, int count, int resolution, int channels,
                                   std::uint64_t seed) {
  if (count < 1) throw ConfigError("synthetic dataset needs count >= 1");
  if (resolution < 1) throw ConfigError("synthetic dataset needs resolution >= 1");
  if (channels != 1 && channels != 3) throw ConfigError("synthetic dataset supports 1 or 3 channels");
  ImageBatch out(Shape{count, channels, resolution, resolution}, 8);
  Rng rng(derive_seed(seed, {streams::kData, static_cast<std::uint64_t>(kind)}));
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  const double R = resolution;
  for (int n = 0; n < count; ++n) {
    std::vector<double> img(static_cast<std::size_t>(channels) * resolution * resolution);
    auto px = [&](int c, int y, int x) -> double& { return img[(static_cast<std::size_t>(c) * resolution + y) * resolution + x]; };
    switch (kind) {
      case SyntheticKind::kGaussianBlobs: {
        const double background = uni(0.0, 24.0);
        std::fill(img.begin(), img.end(), background);
        const int blobs = 1 + static_cast<int>(rng.next() % 3);
        for (int b = 0; b < blobs; ++b) {
          const double cy = uni(0.0, R), cx = uni(0.0, R);
          const double sigma = uni(0.08, 0.25) * R;
          std::array<double, 3> color{uni(60, 230), uni(60, 230), uni(60, 230)};
          for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x) {
              const double d2 = (y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx);
              const double a = std::exp(-d2 / (2 * sigma * sigma));
              for (int c = 0; c < channels; ++c) px(c, y, x) += a * color[c];
            }
        }
        break;
      }
      case SyntheticKind::kCheckerboards: {
        const int cell = 1 << (rng.next() % 3);
        const int phase = static_cast<int>(rng.next() % 2);
        std::array<std::array<double, 3>, 2> colors;
        for (auto& col : colors)
          for (auto& v : col) v = uni(0, 256);
        for (int y = 0; y < resolution; ++y)
          for (int x = 0; x < resolution; ++x) {
            const int which = ((y / cell) + (x / cell) + phase) % 2;
            for (int c = 0; c < channels; ++c) px(c, y, x) = colors[which][c];
          }
        break;
      }
      case SyntheticKind::kGradientRamps: {
        const double angle = uni(0.0, 2 * 3.14159265358979323846);
        const double dy = std::sin(angle), dx = std::cos(angle);
        std::array<double, 3> lo, hi;
        for (int c = 0; c < 3; ++c) {
          lo[c] = uni(0, 64);
          hi[c] = uni(192, 256);
        }
        const double half = 0.5 * (R - 1);
        const double span = std::max(1e-9, half * (std::abs(dx) + std::abs(dy)));
        for (int y = 0; y < resolution; ++y)
          for (int x = 0; x < resolution; ++x) {
            const double t = 0.5 + 0.5 * ((y - half) * dy + (x - half) * dx) / span;
            for (int c = 0; c < channels; ++c) px(c, y, x) = lo[c] + t * (hi[c] - lo[c]);
          }
        break;
      }
    }
    for (std::size_t i = 0; i < img.size(); ++i)
      out.pixels[n * img.size() + i] = static_cast<std::uint8_t>(std::clamp(std::floor(img[i]), 0.0, 255.0));
  }
  return out;
}

// ----------------------------------------------------------------------------
// Packaged array file: "DKVAEARR" | u32 version | u32 n,c,h,w | u32 num_bits |
// u64 seed | n*c*h*w uint8 payload (NCHW, row-major). Little-endian.

struct PackagedArray {
  ImageBatch images;
  std::uint64_t seed = 0;
};

namespace detail {
inline constexpr char kArrayMagic[8] = {'D', 'K', 'V', 'A', 'E', 'A', 'R', 'R'};

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_uint(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw IoError("unexpected end of file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
}  // namespace detail

inline void write_packaged_array(const std::string& path, const ImageBatch& images, std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(detail::kArrayMagic, 8);
  detail::put_u32(os, 1);
  for (int v : {images.shape.n, images.shape.c, images.shape.h, images.shape.w}) detail::put_u32(os, v);
  detail::put_u32(os, images.num_bits);
  detail::put_u64(os, seed);
  os.write(reinterpret_cast<const char*>(images.pixels.data()), static_cast<std::streamsize>(images.pixels.size()));
  if (!os) throw IoError("failed writing '" + path + "'");
}

inline PackagedArray read_packaged_array(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, detail::kArrayMagic)) throw IoError("'" + path + "' is not a packaged array");
  if (detail::get_uint(is, 4) != 1) throw IoError("'" + path + "': unsupported array version");
  Shape s;
  s.n = static_cast<int>(detail::get_uint(is, 4));
  s.c = static_cast<int>(detail::get_uint(is, 4));
  s.h = static_cast<int>(detail::get_uint(is, 4));
  s.w = static_cast<int>(detail::get_uint(is, 4));
  const int bits = static_cast<int>(detail::get_uint(is, 4));
  require_bits(bits);
  PackagedArray out;
  out.seed = detail::get_uint(is, 8);
  out.images = ImageBatch(s, bits);
  is.read(reinterpret_cast<char*>(out.images.pixels.data()), static_cast<std::streamsize>(out.images.pixels.size()));
  if (!is) throw IoError("'" + path + "': truncated payload");
  const int max_level = out.images.max_level();
  for (auto v : out.images.pixels)
    if (v > max_level) throw DataError("'" + path + "': pixel value exceeds " + std::to_string(bits) + "-bit range");
  return out;
}

// ----------------------------------------------------------------------------
// Image directories.

/// Box-downsamples by an integer factor and converts channel count.
inline ImageBatch raster_to_image(const Raster& r, int resolution, int channels, const std::string& origin) {
  if (r.width != r.height) throw DataError(origin + ": images must be square");
  if (r.width % resolution != 0)
    throw DataError(origin + ": size " + std::to_string(r.width) + " is not a multiple of " + std::to_string(resolution));
  const int f = r.width / resolution;
  ImageBatch out(Shape{1, channels, resolution, resolution}, 8);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      double acc[3] = {0, 0, 0};
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx)
          for (int c = 0; c < r.channels; ++c) acc[c] += r.at(y * f + dy, x * f + dx, c);
      for (auto& a : acc) a /= f * f;
      for (int c = 0; c < channels; ++c) {
        double v;
        if (channels == r.channels) v = acc[c];
        else if (channels == 3) v = acc[0];
        else v = 0.299 * acc[0] + 0.587 * acc[1] + 0.114 * acc[2];
        out.at(0, c, y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  return out;
}

inline ImageBatch read_image_directory(const std::string& dir, int resolution, int channels) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("'" + dir + "' contains no PNG images");
  ImageBatch out(Shape{static_cast<int>(files.size()), channels, resolution, resolution}, 8);
  const std::size_t per = out.shape.sample_size();
  for (std::size_t i = 0; i < files.size(); ++i) {
    const ImageBatch one = raster_to_image(read_png(files[i].string()), resolution, channels, files[i].string());
    std::copy(one.pixels.begin(), one.pixels.end(), out.pixels.begin() + i * per);
  }
  return out;
}

/// Single image or grid raster from an 8-bit batch; tiles laid out row-major
/// `columns` per row with no padding.
inline Raster tile_grid(const ImageBatch& images, int columns) {
  if (images.num_bits != 8) throw DataError("tile_grid expects 8-bit images");
  const int n = images.shape.n, c = images.shape.c, h = images.shape.h, w = images.shape.w;
  if (columns < 1) throw ConfigError("grid needs at least one column");
  const int rows = (n + columns - 1) / columns;
  Raster r;
  r.width = columns * w;
  r.height = rows * h;
  r.channels = c;
  r.pixels.assign(static_cast<std::size_t>(r.width) * r.height * c, 0);
  for (int i = 0; i < n; ++i) {
    const int ty = i / columns, tx = i % columns;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) r.at(ty * h + y, tx * w + x, ch) = images.at(i, ch, y, x);
  }
  return r;
}

// ----------------------------------------------------------------------------
// Datasets.

struct DatasetSpec {
  enum class Source { kSynthetic, kDirectory, kArrayFile };

  Source source = Source::kSynthetic;
  std::string path;
  std::string generator = "gaussian-blobs";
  int count = 512;
  std::uint64_t generator_seed = 0;
  int resolution = 8;
  int channels = 3;
  int num_bits = 8;
  std::string binarize = "threshold";
  double valid_fraction = 0.125;
  std::uint64_t shuffle_seed = 0;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;

  void validate() const {
    require_bits(num_bits);
    if (channels != 1 && channels != 3) throw ConfigError("data: channels must be 1 or 3");
    if (resolution < 1) throw ConfigError("data: resolution must be positive");
    if (!(valid_fraction >= 0.0 && valid_fraction < 1.0)) throw ConfigError("data: valid_fraction must be in [0, 1)");
    if (binarize != "threshold" && binarize != "stochastic") throw ConfigError("data: binarize must be threshold or stochastic");
    if (source == Source::kSynthetic) {
      parse_synthetic_kind(generator);
      if (count < 1) throw ConfigError("data: count must be >= 1");
    } else if (path.empty()) {
      throw ConfigError("data: path is required for directory and array sources");
    }
  }
};

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(ImageBatch images) : images_(std::move(images)) {}

  int size() const { return images_.shape.n; }
  bool empty() const { return size() == 0; }
  int num_bits() const { return images_.num_bits; }
  const ImageBatch& images() const { return images_; }
  Shape image_shape() const { return Shape{1, images_.shape.c, images_.shape.h, images_.shape.w}; }

  ImageBatch gather(const std::vector<int>& indices) const {
    Shape s = images_.shape;
    s.n = static_cast<int>(indices.size());
    ImageBatch out(s, images_.num_bits);
    const std::size_t per = s.sample_size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const int idx = indices[i];
      if (idx < 0 || idx >= size()) throw DataError("dataset index out of range");
      std::copy_n(images_.pixels.begin() + idx * per, per, out.pixels.begin() + i * per);
    }
    return out;
  }
  ImageBatch range(int begin, int end) const {
    std::vector<int> idx(std::max(0, end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    return gather(idx);
  }

 private:
  ImageBatch images_;
};

/// Seeded permutation of [0, n).
inline std::vector<int> seeded_permutation(int n, std::uint64_t seed) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 eng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(p[i], p[static_cast<int>(eng() % static_cast<std::uint64_t>(i + 1))]);
  return p;
}

/// Deterministic batch stream: position p = step * batch + i maps to epoch
/// p / n and slot p % n of that epoch's seeded permutation, so every element
/// appears once per epoch and any step can be reproduced directly.
class BatchSampler {
 public:
  BatchSampler(int dataset_size, int batch_size, std::uint64_t seed)
      : n_(dataset_size), batch_(batch_size), seed_(seed) {
    if (n_ < 1) throw DataError("cannot sample batches from an empty dataset");
    if (batch_ < 1) throw ConfigError("batch_size must be >= 1");
  }

  std::vector<int> indices(std::int64_t step) {
    std::vector<int> out(batch_);
    for (int i = 0; i < batch_; ++i) {
      const std::int64_t pos = step * batch_ + i;
      const std::int64_t epoch = pos / n_;
      if (epoch != cached_epoch_) {
        perm_ = seeded_permutation(n_, derive_seed(seed_, {streams::kShuffle, static_cast<std::uint64_t>(epoch)}));
        cached_epoch_ = epoch;
      }
      out[i] = perm_[pos % n_];
    }
    return out;
  }

 private:
  int n_;
  int batch_;
  std::uint64_t seed_;
  std::int64_t cached_epoch_ = -1;
  std::vector<int> perm_;
};

struct DatasetSplit {
  Dataset train;
  Dataset valid;
};

/// Loads 8-bit source images, then quantizes (or binarizes for 1 bit).
inline ImageBatch load_source_images(const DatasetSpec& spec) {
  switch (spec.source) {
    case DatasetSpec::Source::kSynthetic:
      return synthetic_images(parse_synthetic_kind(spec.generator), spec.count, spec.resolution, spec.channels,
                              spec.generator_seed);
    case DatasetSpec::Source::kDirectory:
      return read_image_directory(spec.path, spec.resolution, spec.channels);
    case DatasetSpec::Source::kArrayFile: {
      PackagedArray arr = read_packaged_array(spec.path);
      const Shape s = arr.images.shape;
      if (s.c != spec.channels || s.h != spec.resolution || s.w != spec.resolution)
        throw DataError("array file shape " + s.str() + " does not match the dataset spec");
      return std::move(arr.images);
    }
  }
  throw ConfigError("unknown dataset source");
}

inline ImageBatch prepare_targets(const ImageBatch& raw8, const DatasetSpec& spec) {
  if (raw8.num_bits == spec.num_bits) return raw8;
  if (raw8.num_bits != 8) throw DataError("source images must be 8-bit to requantize");
  if (spec.num_bits == 1) {
    Tensor unit(raw8.shape);
    for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = raw8.pixels[i] / 255.0;
    return binarize(unit, spec.binarize == "stochastic" ? BinarizeMode::kStochastic : BinarizeMode::kThreshold,
                    spec.generator_seed);
  }
  return quantize_to_bits(raw8, spec.num_bits);
}

inline DatasetSplit load_dataset(const DatasetSpec& spec) {
  spec.validate();
  const ImageBatch all = prepare_targets(load_source_images(spec), spec);
  const int n = all.shape.n;
  const int n_valid = static_cast<int>(std::lround(n * spec.valid_fraction));
  if (n - n_valid < 1) throw DataError("dataset split leaves no training images");
  const std::vector<int> perm = seeded_permutation(n, derive_seed(spec.shuffle_seed, {streams::kShuffle, 0xFFFFULL}));
  const Dataset whole(all);
  std::vector<int> valid_idx(perm.begin(), perm.begin() + n_valid);
  std::vector<int> train_idx(perm.begin() + n_valid, perm.end());
  std::sort(valid_idx.begin(), valid_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  DatasetSplit split;
  split.train = Dataset(whole.gather(train_idx));
  if (n_valid > 0) split.valid = Dataset(whole.gather(valid_idx));
  return split;
}

}  // namespace deskvae
