#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "xssl/patch_grid.hpp"
#include "xssl/rng.hpp"

using namespace xssl;

TEST_CASE("patchify ordering and values") {
  Raster img(1, 2, 2);
  img.at(0, 0, 0) = 1;
  img.at(0, 0, 1) = 2;
  img.at(0, 1, 0) = 3;
  img.at(0, 1, 1) = 4;
  Tensor rows = patchify(img, 1);
  REQUIRE(rows.dim(0) == 4);
  REQUIRE(rows.dim(1) == 1);
  // row-major grid order (0,0),(0,1),(1,0),(1,1)
  CHECK(rows.data()[0] == 1);
  CHECK(rows.data()[1] == 2);
  CHECK(rows.data()[2] == 3);
  CHECK(rows.data()[3] == 4);
}

TEST_CASE("patchify constant image gives identical rows") {
  Raster img(3, 8, 8);
  for (double& v : img.data) v = 0.37;
  Tensor rows = patchify(img, 4);
  for (int64_t i = 0; i < rows.dim(0); ++i)
    for (int64_t j = 0; j < rows.dim(1); ++j) CHECK(rows.data()[i * rows.dim(1) + j] == 0.37);
}

TEST_CASE("patchify/unpatchify round-trip is bit exact") {
  Rng rng(17);
  Raster img(4, 16, 24);
  for (double& v : img.data) v = rng.uniform();
  const PatchGrid grid(16, 24, 4);
  Raster back = unpatchify(patchify(img, 4), grid, 4);
  REQUIRE(back.data.size() == img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);
}

TEST_CASE("patchify rejects non-divisible dims") {
  Raster img(1, 10, 10);
  CHECK_THROWS_AS(patchify(img, 3), std::invalid_argument);
}

TEST_CASE("hr_patch_set") {
  const PatchGrid mr(8, 8, 2);  // 4x4
  SUBCASE("s=2 at origin matches the coordinate formula") {
    const auto coords = hr_patch_set(0, 0, 2, mr);
    REQUIRE(coords.size() == 4);
    CHECK(coords[0] == GridCoord{0, 0});
    CHECK(coords[1] == GridCoord{0, 1});
    CHECK(coords[2] == GridCoord{1, 0});
    CHECK(coords[3] == GridCoord{1, 1});
  }
  SUBCASE("s=1 is the identity") {
    const auto coords = hr_patch_set(2, 3, 1, mr);
    REQUIRE(coords.size() == 1);
    CHECK(coords[0] == GridCoord{2, 3});
  }
  SUBCASE("out-of-grid cell rejected") {
    CHECK_THROWS_AS(hr_patch_set(4, 0, 2, mr), std::invalid_argument);
  }
}

TEST_CASE("hr_patch_set partitions the HR grid exhaustively") {
  for (int64_t s : {1, 2, 3}) {
    for (int64_t gh = 1; gh <= 8; ++gh) {
      for (int64_t gw = 1; gw <= 8; ++gw) {
        const PatchGrid mr(gh, gw, 1);
        const PatchGrid hr(s * gh, s * gw, 1);
        const ScalePair pair(s, mr, hr);
        std::vector<int> seen(static_cast<size_t>(hr.num_patches()), 0);
        for (int64_t cell = 0; cell < mr.num_patches(); ++cell)
          for (int64_t idx : hr_patch_indices(cell, pair)) ++seen[static_cast<size_t>(idx)];
        CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
      }
    }
  }
}

namespace {

void check_partition(const SampleMask& mask, int64_t n) {
  std::set<int64_t> all;
  for (int64_t i : mask.visible) all.insert(i);
  for (int64_t i : mask.masked) all.insert(i);
  CHECK(static_cast<int64_t>(all.size()) == n);
  CHECK(static_cast<int64_t>(mask.visible.size() + mask.masked.size()) == n);
  if (!all.empty()) {
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == n - 1);
  }
}

}  // namespace

TEST_CASE("sample_random") {
  const PatchGrid grid(40, 40, 4);  // 10x10 = 100
  SUBCASE("ratio 0.1 on N=100 gives exactly 10 visible") {
    Rng rng(0);
    const SampleMask mask = sample_random(grid, 0.1, rng);
    CHECK(mask.visible.size() == 10);
    CHECK(mask.masked.size() == 90);
    check_partition(mask, 100);
  }
  SUBCASE("same seed twice gives identical masks") {
    Rng a(42), b(42);
    const SampleMask ma = sample_random(grid, 0.3, a);
    const SampleMask mb = sample_random(grid, 0.3, b);
    CHECK(ma.visible == mb.visible);
    CHECK(ma.masked == mb.masked);
  }
  SUBCASE("degenerate ratios rejected") {
    const PatchGrid tiny(2, 2, 1);  // N=4
    Rng rng(1);
    CHECK_THROWS_AS(sample_random(tiny, 0.01, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_random(tiny, 0.99, rng), std::invalid_argument);
  }
  SUBCASE("per-index visible frequency within 3 sigma of the ratio") {
    const int64_t n = 100, draws = 10000;
    const double ratio = 0.1;
    std::vector<int64_t> hits(static_cast<size_t>(n), 0);
    Rng rng(7);
    for (int64_t d = 0; d < draws; ++d) {
      Rng draw_rng = rng.fork(static_cast<uint64_t>(d));
      const SampleMask mask = sample_random(grid, ratio, draw_rng);
      for (int64_t i : mask.visible) ++hits[static_cast<size_t>(i)];
    }
    const double sigma = std::sqrt(ratio * (1 - ratio) / static_cast<double>(draws));
    for (int64_t i = 0; i < n; ++i) {
      const double freq = static_cast<double>(hits[static_cast<size_t>(i)]) / draws;
      CHECK(std::abs(freq - ratio) <= 3.0 * sigma);
    }
  }
}

TEST_CASE("sample_ijepa_blocks") {
  SUBCASE("whole-grid target leaves no context and is rejected") {
    const PatchGrid grid(2, 2, 1);  // N=4
    BlockSamplingConfig cfg{.n_targets = 1, .target_scale_min = 1.0, .target_scale_max = 1.0,
                            .aspect_min = 1.0, .aspect_max = 1.0};
    Rng rng(3);
    CHECK_THROWS_WITH_AS(sample_ijepa_blocks(grid, cfg, rng), doctest::Contains("50"),
                         std::invalid_argument);
  }
  SUBCASE("targets and context partition the grid") {
    const PatchGrid grid(28, 28, 2);  // 14x14
    BlockSamplingConfig cfg{};
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const BlockSample bs = sample_ijepa_blocks(grid, cfg, rng);
      check_partition(bs.context, grid.num_patches());
      std::set<int64_t> target_union;
      for (const auto& block : bs.targets)
        for (int64_t i : block) target_union.insert(i);
      CHECK(target_union == std::set<int64_t>(bs.context.masked.begin(), bs.context.masked.end()));
      for (int64_t i : bs.context.visible) CHECK(target_union.count(i) == 0);
    }
  }
  SUBCASE("default target areas stay inside the scale bounds on 14x14") {
    const PatchGrid grid(28, 28, 2);  // N=196
    BlockSamplingConfig cfg{};       // 4 targets, scale 0.15..0.2, aspect 0.75..1.5
    const int64_t lo = 29, hi = 40;  // floor(0.15*196), ceil(0.2*196)
    for (uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      const BlockSample bs = sample_ijepa_blocks(grid, cfg, rng);
      for (const auto& block : bs.targets) {
        CHECK(static_cast<int64_t>(block.size()) >= lo);
        CHECK(static_cast<int64_t>(block.size()) <= hi);
      }
    }
  }
}

TEST_CASE("sample_sa_block") {
  const PatchGrid grid(16, 16, 2);  // 8x8
  SUBCASE("block_scale=1 makes the whole grid visible") {
    Rng rng(0);
    const SampleMask mask = sample_sa_block(grid, 1.0, rng);
    CHECK(static_cast<int64_t>(mask.visible.size()) == grid.num_patches());
    CHECK(mask.masked.empty());
  }
  SUBCASE("visible indices form a contiguous rectangle") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const SampleMask mask = sample_sa_block(grid, 0.25, rng);
      check_partition(mask, grid.num_patches());
      // rectangle: rows form a contiguous span, each row a contiguous run
      std::map<int64_t, std::vector<int64_t>> by_row;
      for (int64_t i : mask.visible) by_row[i / grid.grid_w].push_back(i % grid.grid_w);
      int64_t prev_row = -1;
      std::vector<int64_t> first_cols;
      for (auto& [row, cols] : by_row) {
        if (prev_row >= 0) CHECK(row == prev_row + 1);
        prev_row = row;
        for (size_t j = 1; j < cols.size(); ++j) CHECK(cols[j] == cols[j - 1] + 1);
        first_cols.push_back(cols.front());
        CHECK(cols.size() == by_row.begin()->second.size());
      }
      for (int64_t c : first_cols) CHECK(c == first_cols.front());
    }
  }
  SUBCASE("same seed gives the same rectangle") {
    Rng a(5), b(5);
    CHECK(sample_sa_block(grid, 0.3, a).visible == sample_sa_block(grid, 0.3, b).visible);
  }
}

TEST_CASE("ScalePair validates the grid relation") {
  const PatchGrid mr(8, 8, 2);
  const PatchGrid hr(16, 16, 2);
  CHECK_NOTHROW(ScalePair(2, mr, hr));
  CHECK_THROWS_AS(ScalePair(3, mr, hr), std::invalid_argument);
}
