#pragma once

// Directory-per-class grayscale corpora: PGM decoding, resize + center
// crop preprocessing, stratified splits and a procedural synthetic corpus.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace cbmir {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct Sample {
  Tensor image;  // 1 x H x W, values in [0, 1]
  std::size_t label = 0;
  std::string source_id;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<std::string> class_names;
};

// ---------------------------------------------------------------------------
// PGM (P2 ascii / P5 binary, maxval <= 65535; rescaled to 8 bits)

namespace detail {

inline void skip_pgm_space(std::string_view s, std::size_t& pos) {
  while (pos < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
}

inline std::size_t read_pgm_uint(std::string_view s, std::size_t& pos) {
  skip_pgm_space(s, pos);
  if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])))
    throw FormatError("malformed PGM header");
  std::size_t v = 0;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    v = v * 10 + static_cast<std::size_t>(s[pos] - '0');
    if (v > (1u << 30)) throw FormatError("PGM value out of range");
    ++pos;
  }
  return v;
}

}  // namespace detail

inline GrayImage decode_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '5'))
    throw FormatError("not a PGM (P2/P5) image");
  const bool binary = bytes[1] == '5';
  std::size_t pos = 2;
  GrayImage img;
  img.width = detail::read_pgm_uint(bytes, pos);
  img.height = detail::read_pgm_uint(bytes, pos);
  const std::size_t maxval = detail::read_pgm_uint(bytes, pos);
  if (img.width == 0 || img.height == 0) throw FormatError("PGM has zero size");
  if (maxval == 0 || maxval > 65535) throw FormatError("PGM maxval out of range");
  const std::size_t n = img.width * img.height;
  img.pixels.resize(n);
  const auto rescale = [maxval](std::size_t v) {
    if (v > maxval) throw FormatError("PGM sample exceeds maxval");
    if (maxval == 255) return static_cast<std::uint8_t>(v);
    return static_cast<std::uint8_t>(std::lround(255.0 * static_cast<double>(v) / static_cast<double>(maxval)));
  };
  if (binary) {
    ++pos;  // single whitespace byte after maxval
    const std::size_t bps = maxval < 256 ? 1 : 2;
    if (bytes.size() < pos + n * bps) throw TruncatedError("PGM pixel data is truncated");
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t v = static_cast<unsigned char>(bytes[pos + i * bps]);
      if (bps == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i * bps + 1]);
      img.pixels[i] = rescale(v);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = rescale(detail::read_pgm_uint(bytes, pos));
  }
  return img;
}

inline GrayImage read_pgm(const std::string& path) { return decode_pgm(read_file(path)); }

inline std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  write_file(path, encode_pgm(img));
}

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessOptions {
  std::size_t resize = 256;
  std::size_t crop = 224;
};

// Bilinear resampling with half-pixel centres and edge clamping. Output in
// the 0..255 range, not rounded.
inline std::vector<double> resize_bilinear(const GrayImage& img, std::size_t out_w, std::size_t out_h) {
  std::vector<double> out(out_w * out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const auto clampi = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    const std::size_t y0 = clampi(std::floor(fy), img.height);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      const std::size_t x0 = clampi(std::floor(fx), img.width);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1 - wx) * img.at(y0, x0) + wx * img.at(y0, x1);
      const double bot = (1 - wx) * img.at(y1, x0) + wx * img.at(y1, x1);
      out[y * out_w + x] = (1 - wy) * top + wy * bot;
    }
  }
  return out;
}

// Resize to opts.resize square, center crop opts.crop, scale to [0, 1].
inline Tensor preprocess_image(const GrayImage& raw, const PreprocessOptions& opts = {}) {
  if (raw.width == 0 || raw.height == 0) throw InputError("cannot preprocess an empty image");
  if (raw.pixels.size() != raw.width * raw.height) throw InputError("image pixel count mismatch");
  if (opts.crop == 0 || opts.crop > opts.resize)
    throw ConfigError("crop size must lie in [1, resize]");
  std::vector<double> resized;
  if (raw.width == opts.resize && raw.height == opts.resize) {
    resized.assign(raw.pixels.begin(), raw.pixels.end());
  } else {
    resized = resize_bilinear(raw, opts.resize, opts.resize);
  }
  const std::size_t off = (opts.resize - opts.crop) / 2;
  Tensor t({1, opts.crop, opts.crop});
  for (std::size_t y = 0; y < opts.crop; ++y)
    for (std::size_t x = 0; x < opts.crop; ++x)
      t.at(0, y, x) = std::clamp(resized[(y + off) * opts.resize + x + off] / 255.0, 0.0, 1.0);
  return t;
}

// ---------------------------------------------------------------------------
// Ingestion

struct IngestResult {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

// root/<class>/<image>. Classes are numbered in sorted directory order and
// files are visited in sorted name order; source ids are "<class>/<file>".
inline IngestResult ingest_directory(const std::string& root, const PreprocessOptions& opts = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw InputError("dataset root is not a directory: " + root);
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw InputError("dataset root has no class directories: " + root);

  IngestResult out;
  out.class_names = classes;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / classes[label]))
      if (e.is_regular_file()) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("class directory is empty: " + classes[label]);
    std::size_t decoded = 0;
    for (const auto& f : files) {
      const std::string path = (fs::path(root) / classes[label] / f).string();
      try {
        out.samples.push_back({preprocess_image(read_pgm(path), opts), label, classes[label] + "/" + f});
        ++decoded;
      } catch (const FormatError& e) {
        ++out.skipped;
        out.warnings.push_back(path + ": " + e.what());
      }
    }
    if (decoded == 0) throw InputError("class directory has no decodable images: " + classes[label]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

inline std::map<std::size_t, std::vector<std::size_t>> indices_by_class(const std::vector<Sample>& samples) {
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);
  return by_class;
}

// Per class: seeded shuffle, first floor(n * train_fraction) to train.
inline DatasetSplit split_dataset(const std::vector<Sample>& samples, double train_fraction,
                                  std::uint64_t seed, std::vector<std::string> class_names = {}) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InputError("train fraction must lie strictly between 0 and 1");
  DatasetSplit split;
  split.class_names = std::move(class_names);
  Rng rng(seed);
  for (auto& [label, idx] : indices_by_class(samples)) {
    const std::size_t n = idx.size();
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
    if (n < 2 || n_train == 0 || n_train == n)
      throw InputError("class " + std::to_string(label) + " has too few samples (" +
                       std::to_string(n) + ") for a train/test split");
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t k = 0; k < n; ++k)
      (k < n_train ? split.train : split.test).push_back(samples[idx[k]]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
//
// Class c draws from family c % 4 with a variant c / 4:
//   0 oriented gratings, frequency and angle set by the variant
//   1 filled regular polygons with 3 + variant vertices
//   2 constellations of 2 + variant Gaussian blobs
//   3 checkerboards with period set by the variant
// Phase, position, rotation, size and additive noise vary per sample.

namespace detail {

inline GrayImage render_synthetic(std::size_t label, std::size_t size, Rng& rng) {
  const std::size_t family = label % 4;
  const std::size_t variant = label / 4;
  const double n = static_cast<double>(size);
  std::vector<double> v(size * size, 0.0);
  const auto px = [&](std::size_t y, std::size_t x) -> double& { return v[y * size + x]; };

  switch (family) {
    case 0: {
      const double cycles = 3.0 + 2.0 * static_cast<double>(variant);
      const double angle = 0.35 * static_cast<double>(variant) + rng.uniform(-0.2, 0.2);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double kx = std::cos(angle) * 2.0 * std::numbers::pi * cycles / n;
      const double ky = std::sin(angle) * 2.0 * std::numbers::pi * cycles / n;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          px(y, x) = 0.5 + 0.4 * std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
      break;
    }
    case 1: {
      const std::size_t sides = 3 + variant;
      const double cx = n * rng.uniform(0.4, 0.6), cy = n * rng.uniform(0.4, 0.6);
      const double radius = n * rng.uniform(0.28, 0.38);
      const double rot = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double half = std::numbers::pi / static_cast<double>(sides);
      const double apothem = radius * std::cos(half);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          const double r = std::hypot(dx, dy);
          double a = std::atan2(dy, dx) - rot;
          a = std::fmod(a, 2.0 * half);
          if (a < 0) a += 2.0 * half;
          const double edge = apothem / std::cos(a - half);
          px(y, x) = r <= edge ? 0.85 : 0.1;
        }
      }
      break;
    }
    case 2: {
      const std::size_t blobs = 2 + variant;
      const double sigma = n * 0.06;
      for (std::size_t b = 0; b < blobs; ++b) {
        const double cx = n * rng.uniform(0.15, 0.85), cy = n * rng.uniform(0.15, 0.85);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            px(y, x) += 0.9 * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          }
      }
      break;
    }
    default: {
      const double period = std::max(2.0, n / (4.0 + 2.0 * static_cast<double>(variant)));
      const double ox = rng.uniform(0.0, 2 * period), oy = rng.uniform(0.0, 2 * period);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const auto cx = static_cast<long>(std::floor((static_cast<double>(x) + ox) / period));
          const auto cy = static_cast<long>(std::floor((static_cast<double>(y) + oy) / period));
          px(y, x) = ((cx + cy) % 2 == 0) ? 0.8 : 0.2;
        }
      break;
    }
  }

  GrayImage img{size, size, std::vector<std::uint8_t>(size * size)};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double noisy = v[i] + rng.normal(0.0, 0.05);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(noisy, 0.0, 1.0) * 255.0));
  }
  return img;
}

inline std::string synthetic_class_name(std::size_t label) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%02zu", label);
  return buf;
}

inline std::string synthetic_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%04zu.pgm", index);
  return buf;
}

}  // namespace detail

struct SyntheticCorpus {
  std::vector<GrayImage> images;
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
};

// Images are quantised to 8 bits before normalisation, so writing the
// corpus to PGM and ingesting it at the same size reproduces it exactly.
inline SyntheticCorpus generate_synthetic_corpus(std::size_t num_classes, std::size_t per_class,
                                                 std::size_t image_size, std::uint64_t seed) {
  if (num_classes < 2) throw InputError("synthetic corpus needs at least 2 classes");
  if (per_class < 10) throw InputError("synthetic corpus needs at least 10 samples per class");
  if (image_size < 8) throw InputError("synthetic images must be at least 8x8");
  SyntheticCorpus out;
  Rng rng(seed);
  for (std::size_t c = 0; c < num_classes; ++c) {
    out.class_names.push_back(detail::synthetic_class_name(c));
    for (std::size_t i = 0; i < per_class; ++i) {
      GrayImage img = detail::render_synthetic(c, image_size, rng);
      Tensor t({1, image_size, image_size});
      for (std::size_t k = 0; k < img.pixels.size(); ++k) t[k] = img.pixels[k] / 255.0;
      out.samples.push_back({std::move(t), c, out.class_names[c] + "/" + detail::synthetic_file_name(i)});
      out.images.push_back(std::move(img));
    }
  }
  return out;
}

// Writes root/<class>/<file>.pgm for every sample of the corpus.
inline void write_corpus(const SyntheticCorpus& corpus, const std::string& root) {
  namespace fs = std::filesystem;
  for (const auto& name : corpus.class_names) fs::create_directories(fs::path(root) / name);
  for (std::size_t i = 0; i < corpus.samples.size(); ++i)
    write_pgm((fs::path(root) / corpus.samples[i].source_id).string(), corpus.images[i]);
}

}  // namespace cbmir
