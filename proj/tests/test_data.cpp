#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ofs/data.hpp"
#include "ofs/tensor_io.hpp"
#include "oracles.hpp"

using namespace ofs;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ofs_test_data";
  fs::create_directories(dir);
  return dir / name;
}

PlantedConfig small_planted(std::uint64_t seed) {
  PlantedConfig c;
  c.height = 24;
  c.width = 20;
  c.n_samples = 21;
  c.seed = seed;
  return c;
}

// Lag (along rows) at which the normalized autocorrelation of a centered image first drops
// below one half; twice that is the full width.
std::size_t autocorr_full_width(const double* img, std::size_t h, std::size_t w) {
  auto corr = [&](std::size_t d) {
    double s = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x + d < w; ++x) s += img[y * w + x] * img[y * w + x + d];
    return s;
  };
  const double c0 = corr(0);
  std::size_t d = 1;
  while (d < w && corr(d) > 0.5 * c0) ++d;
  return 2 * d;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Planted, Deterministic) {
  const Dataset a = generate_planted(small_planted(9));
  const Dataset b = generate_planted(small_planted(9));
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.labels, b.labels);
  const Dataset c = generate_planted(small_planted(10));
  EXPECT_NE(a.samples, c.samples);
}

TEST(Planted, Balanced) {
  for (std::size_t n : {1u, 2u, 7u, 20u, 21u}) {
    PlantedConfig c = small_planted(1);
    c.n_samples = n;
    const Dataset d = generate_planted(c);
    long pos = 0;
    for (int l : d.labels) pos += l;
    EXPECT_LE(std::labs(2 * pos - static_cast<long>(n)), 1) << n;
  }
}

TEST(Planted, Standardized) {
  const Dataset d = generate_planted(small_planted(3));
  const std::size_t plane = 24 * 20;
  for (std::size_t n = 0; n < d.labels.size(); ++n) {
    const double* img = d.samples.data() + n * plane;
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += img[i];
    mean /= plane;
    for (std::size_t i = 0; i < plane; ++i) var += (img[i] - mean) * (img[i] - mean);
    EXPECT_LE(std::fabs(mean), 1e-9);
    EXPECT_NEAR(std::sqrt(var / plane), 1.0, 1e-9);
  }
}

TEST(Planted, AutocorrelationWidthFollowsExtent) {
  PlantedConfig c = small_planted(4);
  c.height = 32;
  c.width = 32;
  c.noise_sigma = 0.0;
  c.positive_extent = 9;
  c.negative_extent = 3;
  c.n_samples = 10;
  const Dataset d = generate_planted(c);
  for (std::size_t n = 0; n + 1 < d.labels.size(); n += 2) {
    ASSERT_EQ(d.labels[n], 1);
    ASSERT_EQ(d.labels[n + 1], 0);
    const double* pos = d.samples.data() + n * 32 * 32;
    const double* neg = pos + 32 * 32;
    EXPECT_GT(autocorr_full_width(pos, 32, 32), autocorr_full_width(neg, 32, 32));
  }
}

TEST(Planted, RejectsBlobThatCannotFit) {
  PlantedConfig c = small_planted(1);
  c.positive_extent = 25;
  EXPECT_THROW(generate_planted(c), std::invalid_argument);
  c.positive_extent = 4;
  EXPECT_THROW(generate_planted(c), std::invalid_argument);
}

TEST(Planted, UpsampleReplicatesBlocks) {
  const Dataset d = generate_planted(small_planted(5));
  const Dataset u = upsample_nearest(d, 3);
  ASSERT_EQ(u.height(), 72u);
  ASSERT_EQ(u.width(), 60u);
  EXPECT_EQ(u.labels, d.labels);
  for (std::size_t n = 0; n < d.size(); ++n)
    for (std::size_t y = 0; y < 72; ++y)
      for (std::size_t x = 0; x < 60; ++x)
        ASSERT_EQ(u.samples.at(n, 0, y, x), d.samples.at(n, 0, y / 3, x / 3));
  const std::size_t plane = 72 * 60;
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    mean += u.samples.data()[i];
    sq += u.samples.data()[i] * u.samples.data()[i];
  }
  EXPECT_NEAR(mean / plane, 0.0, 1e-9);
  EXPECT_NEAR(sq / plane, 1.0, 1e-9);
  const Dataset same = upsample_nearest(d, 1);
  EXPECT_TRUE(std::ranges::equal(same.samples.values(), d.samples.values()));
  EXPECT_THROW(upsample_nearest(d, 0), std::invalid_argument);
}

TEST(Idx, RoundTripBeforeStandardization) {
  IdxImages img;
  img.count = 2;
  img.rows = 4;
  img.cols = 4;
  for (int i = 0; i < 32; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 7));
  const auto ip = temp_path("rt-images.idx"), lp = temp_path("rt-labels.idx");
  write_idx_images(ip.string(), img);
  const std::vector<std::uint8_t> labels{3, 5};
  write_idx_labels(lp.string(), labels);

  const IdxImages back = read_idx_images(ip.string());
  EXPECT_EQ(back.count, 2u);
  EXPECT_EQ(back.rows, 4u);
  EXPECT_EQ(back.cols, 4u);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(read_idx_labels(lp.string()), labels);

  const auto bytes = read_bytes(ip);
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes[2], 0x08);
  EXPECT_EQ(bytes[3], 0x03);
  EXPECT_EQ(bytes[7], 2);

  const Dataset d = load_idx(ip.string(), lp.string(), 5);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(d.samples.shape(), (Shape{2, 1, 4, 4}));
}

TEST(Idx, WrongMagicNamesBoth) {
  const auto p = temp_path("bad-magic.idx");
  write_bytes(p, {0, 0, 8, 1, 0, 0, 0, 0});
  try {
    read_idx_images(p.string());
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("0x00000803"), std::string::npos) << msg;
    EXPECT_NE(msg.find("0x00000801"), std::string::npos) << msg;
  }
}

TEST(Idx, TruncatedAndCountMismatch) {
  IdxImages img{1, 2, 2, {1, 2, 3, 4}};
  const auto ip = temp_path("trunc-images.idx");
  write_idx_images(ip.string(), img);
  auto bytes = read_bytes(ip);
  bytes.pop_back();
  write_bytes(ip, bytes);
  EXPECT_THROW(read_idx_images(ip.string()), std::runtime_error);

  write_idx_images(ip.string(), img);
  const auto lp = temp_path("trunc-labels.idx");
  write_idx_labels(lp.string(), std::vector<std::uint8_t>{1, 0});
  try {
    load_idx(ip.string(), lp.string(), 1);
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("count mismatch"), std::string::npos);
  }
}

TEST(Idx, ConstantImageStandardizesToZero) {
  IdxImages img{1, 3, 3, std::vector<std::uint8_t>(9, 200)};
  const auto ip = temp_path("const-images.idx"), lp = temp_path("const-labels.idx");
  write_idx_images(ip.string(), img);
  write_idx_labels(lp.string(), std::vector<std::uint8_t>{1});
  const Dataset d = load_idx(ip.string(), lp.string(), 1);
  EXPECT_EQ(d.meta.degenerate_images, 1u);
  for (double v : d.samples.values()) EXPECT_EQ(v, 0.0);
}

TEST(TensorFile, ScalarRoundTrip) {
  const auto p = temp_path("scalar.ofst");
  save_tensor(p.string(), scalar_tensor(-2.75));
  const Tensor t = load_tensor(p.string());
  EXPECT_TRUE(t.shape().empty());
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0], -2.75);
}

TEST(TensorFile, RandomRoundTripBitExact) {
  Rng rng(5);
  const Tensor t = oracle::random_tensor({2, 3, 5, 4}, rng, -1e6, 1e6);
  const auto p = temp_path("random.ofst");
  save_tensor(p.string(), t);
  EXPECT_EQ(load_tensor(p.string()), t);
}

TEST(TensorFile, TruncatedByOneByte) {
  Rng rng(6);
  const auto p = temp_path("trunc.ofst");
  save_tensor(p.string(), oracle::random_tensor({3, 3}, rng));
  auto bytes = read_bytes(p);
  bytes.pop_back();
  write_bytes(p, bytes);
  try {
    load_tensor(p.string());
    FAIL() << "expected rejection";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("payload length"), std::string::npos) << e.what();
  }
}

TEST(TensorFile, BadHeader) {
  const auto p = temp_path("bad.ofst");
  write_bytes(p, {'N', 'O', 'P', 'E', 1, 0, 0, 0});
  EXPECT_THROW(load_tensor(p.string()), FormatError);
}

TEST(Checkpoint, RoundTripAndMissingEntry) {
  Rng rng(7);
  NamedTensors entries{{"conv0.k", scalar_tensor(4.25)},
                       {"conv0.w", oracle::random_tensor({2, 1, 5, 5}, rng)}};
  const auto p = temp_path("ck.ofsc");
  save_checkpoint(p.string(), entries);
  const NamedTensors back = load_checkpoint(p.string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(find_entry(back, "conv0.w"), entries[1].second);
  EXPECT_EQ(find_entry(back, "conv0.k")[0], 4.25);
  EXPECT_THROW(find_entry(back, "conv1.k"), FormatError);
}
