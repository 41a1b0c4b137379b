#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "lesionforge/features.hpp"
#include "oracles.hpp"

using namespace lesionforge;

namespace {

FeatureGrid random_grid(const Dims& d, std::size_t ch, Pcg32& rng) {
  std::vector<float> v(d.size() * ch);
  for (auto& x : v) x = static_cast<float>(rng.uniform_closed(-3.0, 3.0));
  return FeatureGrid(d, ch, std::move(v));
}

}  // namespace

TEST(FeatureGrid, Validation) {
  EXPECT_THROW(FeatureGrid({2, 2, 2}, 3, std::vector<float>(23)), ArgumentError);
  EXPECT_THROW(FeatureGrid({2, 2, 2}, 0), ArgumentError);
  std::vector<float> v(8, 0.0f);
  v[3] = NAN;
  EXPECT_THROW(FeatureGrid({2, 2, 2}, 1, v), ArgumentError);
}

TEST(FeatureGrid, RowMajorLayout) {
  FeatureGrid f({2, 3, 4}, 2);
  f.at(1, 2, 3, 1) = 5.0f;
  EXPECT_EQ(f.values()[((1 * 3 + 2) * 4 + 3) * 2 + 1], 5.0f);
}

TEST(MaskPool, IdentityZeroAndOracle) {
  Pcg32 rng(31);
  const Dims d{5, 4, 3};
  const auto f = random_grid(d, 4, rng);
  EXPECT_EQ(mask_pool(f, BinaryMask::full(d)), f);
  const auto z = mask_pool(f, BinaryMask(d));
  for (float v : z.values()) EXPECT_EQ(v, 0.0f);

  for (int t = 0; t < 20; ++t) {
    const auto m = oracle::random_mask(d, 0.5, rng);
    const auto got = mask_pool(f, m);
    for (std::size_t z_ = 0; z_ < d.nz; ++z_)
      for (std::size_t y = 0; y < d.ny; ++y)
        for (std::size_t x = 0; x < d.nx; ++x)
          for (std::size_t c = 0; c < 4; ++c)
            ASSERT_EQ(got.at(x, y, z_, c), m.test(x, y, z_) ? f.at(x, y, z_, c) : 0.0f);
    EXPECT_EQ(mask_pool(got, m), got);
  }
  EXPECT_THROW(mask_pool(f, BinaryMask({5, 4, 4})), ArgumentError);
}

TEST(ConcatFlatten, ShapeLaw) {
  Pcg32 rng(32);
  const auto g = random_grid({2, 2, 2}, 3, rng);
  const auto t = concat_flatten(g, g);
  EXPECT_EQ(t.length(), 8u);
  EXPECT_EQ(t.channels, 6u);
  for (std::size_t k = 0; k < t.length(); ++k) {
    const auto tok = t.token(k);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(tok[c], tok[c + 3]);
  }
}

TEST(ConcatFlatten, MultisetAndOrder) {
  Pcg32 rng(33);
  for (int t = 0; t < 10; ++t) {
    const Dims d{1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)};
    const std::size_t ch = 1 + rng.below(5);
    const auto g = random_grid(d, ch, rng);
    const auto l = mask_pool(g, oracle::random_mask(d, 0.5, rng));
    const auto seq = concat_flatten(g, l);
    ASSERT_EQ(seq.length(), d.nx * d.ny * d.nz);
    std::size_t k = 0;
    for (std::size_t x = 0; x < d.nx; ++x)
      for (std::size_t y = 0; y < d.ny; ++y)
        for (std::size_t z = 0; z < d.nz; ++z, ++k) {
          std::multiset<float> want, got;
          for (std::size_t c = 0; c < ch; ++c) {
            want.insert(g.at(x, y, z, c));
            want.insert(l.at(x, y, z, c));
          }
          for (float v : seq.token(k)) got.insert(v);
          ASSERT_EQ(got, want);
          ASSERT_EQ(seq.token(k)[0], g.at(x, y, z, 0));
          ASSERT_EQ(seq.token(k)[ch], l.at(x, y, z, 0));
        }
    const auto [g2, l2] = unflatten(seq);
    EXPECT_EQ(g2, g);
    EXPECT_EQ(l2, l);
  }
  const auto a = random_grid({2, 2, 2}, 2, rng);
  EXPECT_THROW(concat_flatten(a, random_grid({2, 2, 2}, 3, rng)), ArgumentError);
  EXPECT_THROW(concat_flatten(a, random_grid({2, 2, 1}, 2, rng)), ArgumentError);
}

TEST(Downsample, Trivial) {
  EXPECT_EQ(downsample_mask(BinaryMask::full({8, 8, 8}), {3, 5, 2}), BinaryMask::full({3, 5, 2}));
  BinaryMask one({8, 8, 8});
  one.set(one.dims().index(5, 2, 7));
  const auto m = downsample_mask(one, {4, 4, 4});
  EXPECT_EQ(m.count(), 1u);
  EXPECT_TRUE(m.test(2, 1, 3));
  EXPECT_THROW(downsample_mask(one, {9, 4, 4}), ArgumentError);
}

TEST(Downsample, BlockOracle) {
  Pcg32 rng(34);
  for (int t = 0; t < 20; ++t) {
    const auto m = oracle::random_mask({8, 8, 8}, 0.1, rng);
    for (auto rule : {DownsampleRule::Any, DownsampleRule::Majority}) {
      const auto got = downsample_mask(m, {4, 4, 4}, rule);
      for (std::size_t z = 0; z < 4; ++z)
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t x = 0; x < 4; ++x) {
            int on = 0;
            for (int k = 0; k < 8; ++k) on += m.test(2 * x + (k & 1), 2 * y + ((k >> 1) & 1), 2 * z + (k >> 2));
            ASSERT_EQ(got.test(x, y, z), rule == DownsampleRule::Any ? on > 0 : on > 4);
          }
    }
  }
}

TEST(Downsample, CeilingPartition) {
  const auto e = block_edges(7, 3);
  EXPECT_EQ(e, (std::vector<std::size_t>{0, 3, 5, 7}));
  BinaryMask m({7, 1, 1});
  m.set(6);
  EXPECT_TRUE(downsample_mask(m, {3, 1, 1}).test(2, 0, 0));
}

TEST(FeatureDump, RoundTrip) {
  Pcg32 rng(35);
  const auto f = random_grid({3, 4, 5}, 2, rng);
  const auto dir = std::filesystem::temp_directory_path() / "lesionforge_feature_test";
  std::filesystem::create_directories(dir);
  write_feature_grid(f, dir / "f.bin");
  EXPECT_EQ(read_feature_grid(dir / "f.bin"), f);
  io::write_file_atomic(dir / "bad.bin", std::vector<std::byte>(10));
  EXPECT_THROW(read_feature_grid(dir / "bad.bin"), FormatError);
  std::filesystem::remove_all(dir);
}
