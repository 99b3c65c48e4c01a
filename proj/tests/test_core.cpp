#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "bicross/core/error.hpp"
#include "bicross/core/image_io.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/core/tensor.hpp"

namespace fs = std::filesystem;
using namespace bicross;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("bicross_core_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.rank(), 3);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.dim(1), 3);
  for (double v : t.storage()) EXPECT_EQ(v, 1.5);
}

TEST(Tensor, DataSizeMismatchThrows) { EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), InvalidInput); }

TEST(Tensor, RowMajorAccess) {
  Tensor t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  EXPECT_EQ(t.at(1, 2, 3), 23.0);
  EXPECT_EQ(t.at(0, 1, 0), 4.0);
  EXPECT_EQ(t.at(1, 0, 0), 12.0);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (std::vector<int>{3, 2}));
  EXPECT_EQ(r.storage(), t.storage());
  EXPECT_THROW(t.reshaped({4, 2}), InvalidInput);
}

TEST(Tensor, AxpyAndAdd) {
  Tensor a({3}, std::vector<double>{1, 2, 3});
  Tensor b({3}, std::vector<double>{10, 20, 30});
  a.axpy(0.5, b);
  EXPECT_EQ(a.storage(), (std::vector<double>{6, 12, 18}));
  a += b;
  EXPECT_EQ(a.storage(), (std::vector<double>{16, 32, 48}));
  EXPECT_THROW(a += Tensor({4}), InvalidInput);
}

TEST(Rng, SplitMixReferenceValues) {
  // Reference outputs of the published SplitMix64 for seed 0.
  SplitMix64 g(0);
  EXPECT_EQ(g.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(g.next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(g.next(), 0x06C45D188009454FULL);
}

TEST(Rng, SameSeedSameStream) {
  SplitMix64 a(99), b(99);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next(), b.next());
}

TEST(Rng, UniformRangeAndMean) {
  SplitMix64 g(1);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = g.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(Rng, IntegerCoversInclusiveRange) {
  SplitMix64 g(2);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = g.integer(-3, 3);
    ASSERT_GE(v, -3);
    ASSERT_LE(v, 3);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalMoments) {
  SplitMix64 g(3);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = g.normal(2.0, 3.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 2.0, 0.05);
  EXPECT_NEAR(s2 / n - mean * mean, 9.0, 0.15);
}

TEST(Rng, DerivedSeedsDiffer) {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t tag = 0; tag < 64; ++tag) seeds.insert(derive_seed(42, tag));
  EXPECT_EQ(seeds.size(), 64u);
  EXPECT_EQ(derive_seed(42, 5), derive_seed(42, 5));
  EXPECT_NE(derive_seed(42, 5), derive_seed(43, 5));
}

TEST(Rng, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a64(""), 0xCBF29CE484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xAF63DC4C8601EC8CULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171F73967E8ULL);
}

TEST(ImageIo, GrayAndRgbRoundtrip) {
  const auto dir = temp_dir("pnm");
  SplitMix64 g(4);
  for (int channels : {1, 3}) {
    Image8 img{7, 5, channels, {}};
    img.pixels.resize(7 * 5 * channels);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(g.integer(0, 255));
    const auto path = dir / (channels == 1 ? "g.pgm" : "c.ppm");
    write_pnm(img, path);
    EXPECT_EQ(read_pnm(path), img);
  }
}

TEST(ImageIo, HeaderWithComment) {
  const auto dir = temp_dir("comment");
  const auto path = dir / "x.pgm";
  {
    std::ofstream f(path, std::ios::binary);
    f << "P5\n# note\n2 1\n255\n";
    f.put(static_cast<char>(7));
    f.put(static_cast<char>(200));
  }
  const Image8 img = read_pnm(path);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.height, 1);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{7, 200}));
}

TEST(ImageIo, Errors) {
  const auto dir = temp_dir("err");
  EXPECT_THROW(read_pnm(dir / "missing.pgm"), IoError);
  {
    std::ofstream f(dir / "bad.pgm", std::ios::binary);
    f << "P2\n2 2\n255\n";
  }
  EXPECT_THROW(read_pnm(dir / "bad.pgm"), FormatError);
  {
    std::ofstream f(dir / "short.pgm", std::ios::binary);
    f << "P5\n4 4\n255\n";
    f.put('a');
  }
  EXPECT_THROW(read_pnm(dir / "short.pgm"), FormatError);
  Image8 wrong{2, 2, 1, {1, 2, 3}};
  EXPECT_THROW(write_pnm(wrong, dir / "w.pgm"), InvalidInput);
}

TEST(ImageIo, DepthGridRoundtrip) {
  const auto dir = temp_dir("depth");
  std::vector<float> v(6 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0f + 0.25f * static_cast<float>(i);
  write_depth_grid(v, 6, 4, dir / "d.bin");
  const DepthGrid g = read_depth_grid(dir / "d.bin");
  EXPECT_EQ(g.h, 6);
  EXPECT_EQ(g.w, 4);
  EXPECT_EQ(g.values, v);
  EXPECT_THROW(write_depth_grid(v, 5, 4, dir / "e.bin"), InvalidInput);
}

TEST(Errors, FormatErrorCarriesOffset) {
  const FormatError e("bad", 17);
  EXPECT_EQ(e.offset(), 17u);
  EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
}
