#pragma once

// Labeled single-channel image sets: the planted-scale generator and IDX loading.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ofs/rng.hpp"
#include "ofs/tensor.hpp"

namespace ofs {

struct DatasetMeta {
  std::string source;
  std::uint64_t seed = 0;
  std::size_t degenerate_images = 0;  // images whose standard deviation was zero
};

struct Dataset {
  Tensor samples;  // [N, 1, H, W]
  std::vector<int> labels;
  DatasetMeta meta;

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return samples.dim(2); }
  std::size_t width() const { return samples.dim(3); }

  /// Gathers the given rows into a [n, 1, H, W] batch.
  Tensor gather(std::span<const std::size_t> rows) const {
    const std::size_t plane = samples.dim(1) * height() * width();
    Tensor out({rows.size(), samples.dim(1), height(), width()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(samples.data() + rows[i] * plane, plane, out.data() + i * plane);
    }
    return out;
  }
};

inline void validate_dataset(const Dataset& d) {
  require_rank(d.samples, 4, "Dataset samples");
  if (d.labels.empty()) throw std::invalid_argument("Dataset: no samples");
  if (d.labels.size() != d.samples.dim(0)) {
    throw std::invalid_argument("Dataset: " + std::to_string(d.labels.size()) +
                                " labels for samples of shape " + shape_str(d.samples.shape()));
  }
  for (int l : d.labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("Dataset: labels must be binary");
  }
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
/// Returns false and zeroes the image when its standard deviation is zero.
inline bool standardize(std::span<double> image) {
  double mean = 0.0;
  for (double v : image) mean += v;
  mean /= static_cast<double>(image.size());
  double var = 0.0;
  for (double v : image) var += (v - mean) * (v - mean);
  var /= static_cast<double>(image.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) {
    std::fill(image.begin(), image.end(), 0.0);
    return false;
  }
  for (double& v : image) v = (v - mean) / sd;
  return true;
}

struct PlantedConfig {
  std::size_t height = 64;
  std::size_t width = 48;
  std::size_t positive_extent = 7;
  std::size_t negative_extent = 3;
  std::size_t blobs_per_image = 1;
  double noise_sigma = 1.0;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
};

inline void validate(const PlantedConfig& cfg) {
  auto check_extent = [&](std::size_t e, const char* name) {
    if (e < 1 || e % 2 == 0) {
      throw std::invalid_argument(std::string("planted: ") + name + " must be odd and >= 1, got " +
                                  std::to_string(e));
    }
    if (e >= std::min(cfg.height, cfg.width)) {
      throw std::invalid_argument(std::string("planted: ") + name + " " + std::to_string(e) +
                                  " does not fit a " + std::to_string(cfg.height) + "x" +
                                  std::to_string(cfg.width) + " image");
    }
  };
  check_extent(cfg.positive_extent, "positive_extent");
  check_extent(cfg.negative_extent, "negative_extent");
  if (cfg.positive_extent == cfg.negative_extent) {
    throw std::invalid_argument("planted: positive_extent and negative_extent must differ");
  }
  if (cfg.n_samples < 1) throw std::invalid_argument("planted: n_samples must be >= 1");
  if (!(cfg.noise_sigma >= 0.0)) throw std::invalid_argument("planted: noise_sigma must be >= 0");
}

/// Gaussian noise plus unit box blobs whose extent encodes the class. Even rows
/// are positive, odd rows negative. Every image is standardized.
inline Dataset generate_planted(const PlantedConfig& cfg) {
  validate(cfg);
  const std::size_t h = cfg.height, w = cfg.width, plane = h * w;
  Dataset d;
  d.samples = Tensor({cfg.n_samples, 1, h, w});
  d.labels.resize(cfg.n_samples);
  d.meta.source = "planted";
  d.meta.seed = cfg.seed;
  Rng rng(cfg.seed);
  for (std::size_t n = 0; n < cfg.n_samples; ++n) {
    const int label = n % 2 == 0 ? 1 : 0;
    d.labels[n] = label;
    double* img = d.samples.data() + n * plane;
    for (std::size_t i = 0; i < plane; ++i) img[i] = cfg.noise_sigma * rng.normal();
    const std::size_t e = label == 1 ? cfg.positive_extent : cfg.negative_extent;
    for (std::size_t b = 0; b < cfg.blobs_per_image; ++b) {
      const auto top = static_cast<std::size_t>(rng.below(h - e + 1));
      const auto left = static_cast<std::size_t>(rng.below(w - e + 1));
      for (std::size_t y = top; y < top + e; ++y)
        for (std::size_t x = left; x < left + e; ++x) img[y * w + x] += 1.0;
    }
    if (!standardize({img, plane})) ++d.meta.degenerate_images;
  }
  return d;
}

/// Every pixel becomes a factor x factor block, so blob extents scale by `factor`
/// and per-image mean and variance are unchanged.
inline Dataset upsample_nearest(const Dataset& d, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  const std::size_t n = d.samples.dim(0), ch = d.samples.dim(1), h = d.height(), w = d.width();
  Dataset out{Tensor({n, ch, h * factor, w * factor}), d.labels, d.meta};
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < h * factor; ++y)
        for (std::size_t x = 0; x < w * factor; ++x)
          out.samples.at(b, c, y, x) = d.samples.at(b, c, y / factor, x / factor);
  return out;
}

// IDX files: big-endian u32 magic, u32 dims, then unsigned bytes.
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off,
                          const std::string& path) {
  if (b.size() < off + 4) throw std::runtime_error(path + ": truncated IDX header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

inline void check_magic(std::uint32_t found, std::uint32_t expected, const std::string& path) {
  if (found != expected) {
    throw std::runtime_error(path + ": bad IDX magic, expected " + hex32(expected) + ", found " +
                             hex32(found));
  }
}

inline void put_be32(std::ostream& os, std::uint32_t v) {
  const char buf[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                       static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(buf, 4);
}

}  // namespace detail

inline IdxImages read_idx_images(const std::string& path) {
  const auto bytes = detail::read_all(path);
  detail::check_magic(detail::be32(bytes, 0, path), kIdxImageMagic, path);
  IdxImages img;
  img.count = detail::be32(bytes, 4, path);
  img.rows = detail::be32(bytes, 8, path);
  img.cols = detail::be32(bytes, 12, path);
  const std::size_t want = img.count * img.rows * img.cols;
  if (bytes.size() - 16 != want) {
    throw std::runtime_error(path + ": truncated IDX image payload, expected " +
                             std::to_string(want) + " bytes, found " +
                             std::to_string(bytes.size() - 16));
  }
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  return img;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
  const auto bytes = detail::read_all(path);
  detail::check_magic(detail::be32(bytes, 0, path), kIdxLabelMagic, path);
  const std::size_t count = detail::be32(bytes, 4, path);
  if (bytes.size() - 8 != count) {
    throw std::runtime_error(path + ": truncated IDX label payload, expected " +
                             std::to_string(count) + " bytes, found " +
                             std::to_string(bytes.size() - 8));
  }
  return {bytes.begin() + 8, bytes.end()};
}

inline void write_idx_images(const std::string& path, const IdxImages& img) {
  std::ofstream os(path, std::ios::binary);
  detail::put_be32(os, kIdxImageMagic);
  detail::put_be32(os, static_cast<std::uint32_t>(img.count));
  detail::put_be32(os, static_cast<std::uint32_t>(img.rows));
  detail::put_be32(os, static_cast<std::uint32_t>(img.cols));
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
}

inline void write_idx_labels(const std::string& path, std::span<const std::uint8_t> labels) {
  std::ofstream os(path, std::ios::binary);
  detail::put_be32(os, kIdxLabelMagic);
  detail::put_be32(os, static_cast<std::uint32_t>(labels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()),
           static_cast<std::streamsize>(labels.size()));
}

/// Pixels scaled to [0, 1] and standardized per image; label == positive_class maps to 1.
/// Constant images become all-zero with a warning on stderr.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int positive_class) {
  const IdxImages img = read_idx_images(images_path);
  const auto raw_labels = read_idx_labels(labels_path);
  if (raw_labels.size() != img.count) {
    throw std::runtime_error("IDX count mismatch: " + std::to_string(img.count) + " images in " +
                             images_path + " but " + std::to_string(raw_labels.size()) +
                             " labels in " + labels_path);
  }
  const std::size_t plane = img.rows * img.cols;
  Dataset d;
  d.samples = Tensor({img.count, 1, img.rows, img.cols});
  d.meta.source = images_path;
  for (std::size_t n = 0; n < img.count; ++n) {
    double* dst = d.samples.data() + n * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = img.pixels[n * plane + i] / 255.0;
    if (!standardize({dst, plane})) {
      ++d.meta.degenerate_images;
      std::cerr << "warning: " << images_path << ": image " << n
                << " is constant; standardized to zeros\n";
    }
    d.labels.push_back(raw_labels[n] == positive_class ? 1 : 0);
  }
  return d;
}

}  // namespace ofs
