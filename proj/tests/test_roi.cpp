#include <gtest/gtest.h>

#include <map>

#include "lesionforge/features.hpp"
#include "lesionforge/roi.hpp"
#include "oracles.hpp"

using namespace lesionforge;

namespace {

// Four slabs along x, labels 1..4, each 3 voxels thick, on an 12x6x6 grid.
LabelVolume slabs() {
  const Dims d{12, 6, 6};
  std::vector<std::int32_t> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) g[i] = static_cast<std::int32_t>(d.coords(i)[0] / 3 + 1);
  return LabelVolume(d, g, {{1, "Left Frontal Lobe"}, {2, "Right Frontal Lobe"}, {3, "Brainstem"}, {4, "Left Thalamus"}});
}

}  // namespace

TEST(SelectRois, InsideOneStructureGivesThatStructure) {
  const auto lv = slabs();
  BinaryMask a(lv.dims());
  a.set(lv.dims().index(7, 2, 2));
  a.set(lv.dims().index(7, 3, 2));
  const auto p = select_rois(a, lv);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].mask, lv.mask_of(3));
  ASSERT_EQ(p[0].structures.size(), 1u);
  EXPECT_EQ(p[0].structures[0].id, 3);
  EXPECT_EQ(p[0].structures[0].overlap, 2u);
  EXPECT_EQ(p[0].anomaly_voxels, 2u);
  EXPECT_EQ(p[0].id, "roi-0");
  EXPECT_FALSE(p[0].unlocalized);
}

TEST(SelectRois, StraddleUnionsBoth) {
  const auto lv = slabs();
  BinaryMask a(lv.dims());
  for (std::size_t x = 4; x <= 7; ++x) a.set(lv.dims().index(x, 1, 1));
  const auto p = select_rois(a, lv);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].mask, lv.mask_of(2) | lv.mask_of(3));
  ASSERT_EQ(p[0].structures.size(), 2u);
  EXPECT_GT(p[0].structures[0].overlap, 0u);
  EXPECT_GT(p[0].structures[1].overlap, 0u);
}

TEST(SelectRois, MatchesBruteForceOracle) {
  Pcg32 rng(201);
  for (int t = 0; t < 50; ++t) {
    const Dims d{10, 10, 10};
    std::vector<std::int32_t> g(d.size());
    for (auto& v : g) v = static_cast<std::int32_t>(rng.below(5));  // 0 = background
    const LabelVolume lv(d, g, {{1, "a"}, {2, "b"}, {3, "c"}, {4, "d"}});
    const auto a = oracle::random_mask(d, 0.05, rng);
    const auto got = select_rois(a, lv);
    const auto want = oracle::rois(a, lv);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k) ASSERT_EQ(got[k].mask, want[k]);
  }
}

TEST(SelectRois, UnlocalizedComponentKept) {
  const Dims d{6, 6, 6};
  std::vector<std::int32_t> g(d.size(), 0);
  g[d.index(0, 0, 0)] = 1;
  const LabelVolume lv(d, g, {{1, "a"}});
  BinaryMask a(d);
  a.set(d.index(4, 4, 4));
  const auto p = select_rois(a, lv);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_TRUE(p[0].unlocalized);
  EXPECT_EQ(p[0].mask, a);
  EXPECT_TRUE(p[0].structures.empty());
}

TEST(SelectRois, MinOverlapMonotone) {
  const auto lv = slabs();
  BinaryMask a(lv.dims());
  for (std::size_t x = 2; x <= 7; ++x) a.set(lv.dims().index(x, 1, 1));  // 1 voxel in slab 1, 3 in 2, 2 in 3
  std::size_t prev = 100;
  for (std::size_t k = 1; k <= 4; ++k) {
    const auto p = select_rois(a, lv, k);
    const std::size_t n = p.empty() ? 0 : p[0].structures.size();
    EXPECT_LE(n, prev);
    prev = n;
  }
  EXPECT_EQ(select_rois(a, lv, 2)[0].structures.size(), 2u);
  EXPECT_TRUE(select_rois(a, lv, 4).empty());
  EXPECT_THROW(select_rois(a, lv, 0), ArgumentError);
}

TEST(SelectRois, CoverageAndIdempotence) {
  Pcg32 rng(202);
  const auto lv = slabs();
  for (int t = 0; t < 10; ++t) {
    const auto a = oracle::random_mask(lv.dims(), 0.03, rng);
    for (const auto& p : select_rois(a, lv)) {
      // Every labelled anomaly voxel of any component lands in some prompt; check
      // per prompt via the re-derivation instead.
      const auto again = select_rois(p.mask, lv);
      ASSERT_FALSE(again.empty());
      std::set<std::int32_t> ids;
      for (const auto& q : again)
        for (const auto& s : q.structures) ids.insert(s.id);
      for (const auto& s : p.structures) EXPECT_TRUE(ids.count(s.id));
    }
  }
}

TEST(SelectRois, AutoseqOrderLargerFirst) {
  const auto lv = slabs();
  BinaryMask a(lv.dims());
  a.set(lv.dims().index(0, 0, 0));
  for (std::size_t x = 9; x < 12; ++x) a.set(lv.dims().index(x, 5, 5));
  const auto p = select_rois(a, lv);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].anomaly_voxels, 3u);
  EXPECT_EQ(p[0].structures[0].id, 4);
  EXPECT_EQ(p[1].structures[0].id, 1);
}

TEST(PromptFromNames, ExactAndUnion) {
  const auto lv = slabs();
  EXPECT_EQ(prompt_from_names({"brainstem"}, lv).mask, lv.mask_of(3));
  const auto p = prompt_from_names({"left frontal lobe", "RIGHT FRONTAL LOBE"}, lv);
  EXPECT_EQ(p.mask, lv.mask_of(1) | lv.mask_of(2));
  EXPECT_EQ(p.source, RegionPrompt::Source::Human);
  EXPECT_EQ(p.anomaly_voxels, 0u);
}

TEST(PromptFromNames, TypoSuggests) {
  const auto lv = slabs();
  try {
    prompt_from_names({"brianstem"}, lv);
    FAIL();
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("\"Brainstem\""), std::string::npos) << e.what();
  }
  EXPECT_THROW(prompt_from_names({}, lv), ArgumentError);
}

TEST(WholeImagePrompt, AllOnesAndPoolIdentity) {
  const auto p = whole_image_prompt({4, 4, 4});
  EXPECT_EQ(p.mask.count(), 64u);
  EXPECT_TRUE(p.is_global());
  Pcg32 rng(1);
  std::vector<float> vals(64 * 3);
  for (auto& v : vals) v = static_cast<float>(rng.uniform01());
  const FeatureGrid f({4, 4, 4}, 3, vals);
  EXPECT_EQ(mask_pool(f, p.mask), f);
}

TEST(PromptJson, RoundTrip) {
  const auto lv = slabs();
  for (const auto& p : {whole_image_prompt(lv.dims()), prompt_from_names({"Brainstem"}, lv)}) {
    const auto j = to_json(p, "m.nii.gz");
    const auto back = prompt_from_json(nlohmann::ordered_json::parse(j.dump()), p.mask);
    EXPECT_EQ(back.id, p.id);
    EXPECT_EQ(back.is_global(), p.is_global());
    EXPECT_EQ(back.names, p.names);
    EXPECT_EQ(back.structures, p.structures);
  }
  BinaryMask a(lv.dims());
  a.set(lv.dims().index(7, 2, 2));
  const auto auto_p = select_rois(a, lv)[0];
  const auto back = prompt_from_json(to_json(auto_p, "x"), auto_p.mask);
  EXPECT_EQ(back.source, RegionPrompt::Source::Auto);
  EXPECT_EQ(back.structures, auto_p.structures);
  EXPECT_EQ(back.anomaly_voxels, 1u);
  EXPECT_THROW(prompt_from_json(nlohmann::json{{"id", "x"}}, BinaryMask()), SchemaError);
}
