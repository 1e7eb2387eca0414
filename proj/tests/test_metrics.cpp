#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstdlib>
#include <set>
#include <vector>

#include "vesselseg/metrics.hpp"
#include "vesselseg/rng.hpp"

using namespace vesselseg;

namespace {

using Voxel = std::array<int, 3>;

std::set<Voxel> to_set(const Mask& m) {
  std::set<Voxel> s;
  for (int z = 0; z < m.shape.z; ++z)
    for (int y = 0; y < m.shape.y; ++y)
      for (int x = 0; x < m.shape.x; ++x)
        if (m.at(z, y, x)) s.insert({z, y, x});
  return s;
}

bool adjacent26(const Voxel& a, const Voxel& b) {
  if (a == b) return false;
  return std::abs(a[0] - b[0]) <= 1 && std::abs(a[1] - b[1]) <= 1 &&
         std::abs(a[2] - b[2]) <= 1;
}

// Brute-force flood fill over coordinate sets; independent of the library's
// component machinery.
std::vector<std::set<Voxel>> oracle_components(const std::set<Voxel>& fg) {
  std::vector<std::set<Voxel>> comps;
  std::set<Voxel> left = fg;
  while (!left.empty()) {
    std::vector<Voxel> stack{*left.begin()};
    std::set<Voxel> comp;
    comp.insert(*left.begin());
    left.erase(left.begin());
    while (!stack.empty()) {
      const Voxel v = stack.back();
      stack.pop_back();
      for (auto it = left.begin(); it != left.end();) {
        if (adjacent26(v, *it)) {
          comp.insert(*it);
          stack.push_back(*it);
          it = left.erase(it);
        } else {
          ++it;
        }
      }
    }
    comps.push_back(std::move(comp));
  }
  return comps;
}

Mask random_mask(Shape3 shape, double density, Rng& rng) {
  Mask m(shape);
  for (auto& v : m.v) v = rng.bernoulli(density) ? 1 : 0;
  return m;
}

struct OracleCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

OracleCounts oracle_count(const Mask& pred, const Mask& gt) {
  OracleCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    if (pred.v[i] && gt.v[i]) ++c.tp;
    if (pred.v[i] && !gt.v[i]) ++c.fp;
    if (!pred.v[i] && gt.v[i]) ++c.fn;
    if (!pred.v[i] && !gt.v[i]) ++c.tn;
  }
  return c;
}

Mask translate(const Mask& m, int dz, int dy, int dx, Shape3 shape) {
  Mask out(shape);
  for (int z = 0; z < m.shape.z; ++z)
    for (int y = 0; y < m.shape.y; ++y)
      for (int x = 0; x < m.shape.x; ++x)
        if (m.at(z, y, x)) out.at(z + dz, y + dy, x + dx) = 1;
  return out;
}

Mask flip_all(const Mask& m) {
  Mask out(m.shape);
  for (int z = 0; z < m.shape.z; ++z)
    for (int y = 0; y < m.shape.y; ++y)
      for (int x = 0; x < m.shape.x; ++x)
        if (m.at(z, y, x))
          out.at(m.shape.z - 1 - z, m.shape.y - 1 - y, m.shape.x - 1 - x) = 1;
  return out;
}

// Straight tube of squared radius r2 around the x-axis line through (cz, cy).
Mask straight_tube(Shape3 shape, int cz, int cy, double r2, int x0, int x1) {
  Mask m(shape);
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (z - cz) * (z - cz) + (y - cy) * (y - cy);
        if (d2 <= r2) m.at(z, y, x) = 1;
      }
  return m;
}

Mask dilate26(const Mask& m) {
  Mask out(m.shape);
  for (int z = 0; z < m.shape.z; ++z)
    for (int y = 0; y < m.shape.y; ++y)
      for (int x = 0; x < m.shape.x; ++x) {
        if (!m.at(z, y, x)) continue;
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              if (m.in_bounds(z + dz, y + dy, x + dx))
                out.at(z + dz, y + dy, x + dx) = 1;
      }
  return out;
}

}  // namespace

TEST_CASE("overlap metrics: hand-counted cases") {
  Mask a({2, 2, 2}), b({2, 2, 2});
  SUBCASE("identical nonempty masks score 1") {
    a.at(0, 0, 0) = a.at(1, 1, 1) = 1;
    b = a;
    CHECK(dice(a, b) == 1.0);
    CHECK(precision(a, b) == 1.0);
    CHECK(sensitivity(a, b) == 1.0);
  }
  SUBCASE("disjoint nonempty masks score 0") {
    a.at(0, 0, 0) = 1;
    b.at(1, 1, 1) = 1;
    CHECK(dice(a, b) == 0.0);
    CHECK(precision(a, b) == 0.0);
    CHECK(sensitivity(a, b) == 0.0);
  }
  SUBCASE("half-covered ground truth gives dice 2/3") {
    Mask p({1, 1, 8}), g({1, 1, 8});
    for (int x = 0; x < 4; ++x) g.at(0, 0, x) = 1;
    for (int x = 0; x < 2; ++x) p.at(0, 0, x) = 1;
    CHECK(dice(p, g) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(sensitivity(p, g) == doctest::Approx(0.5));
    CHECK(precision(p, g) == 1.0);
  }
  SUBCASE("TP=1 FP=1 FN=1 scores 0.5 / 0.5") {
    Mask p({1, 1, 3}), g({1, 1, 3});
    p.at(0, 0, 0) = 1;
    g.at(0, 0, 0) = 1;
    p.at(0, 0, 1) = 1;
    g.at(0, 0, 2) = 1;
    CHECK(precision(p, g) == 0.5);
    CHECK(sensitivity(p, g) == 0.5);
    CHECK(dice(p, g) == 0.5);
  }
  SUBCASE("empty-mask conventions") {
    CHECK(dice(a, b) == 1.0);
    CHECK(precision(a, b) == 1.0);
    CHECK(sensitivity(a, b) == 1.0);
    b.at(0, 0, 0) = 1;
    CHECK(dice(a, b) == 0.0);
    CHECK(precision(a, b) == 0.0);
    CHECK(sensitivity(a, b) == 0.0);
  }
  SUBCASE("pred strictly containing gt: sensitivity 1, precision < 1") {
    Mask p({1, 1, 4}), g({1, 1, 4});
    g.at(0, 0, 1) = 1;
    p.at(0, 0, 1) = p.at(0, 0, 2) = 1;
    CHECK(sensitivity(p, g) == 1.0);
    CHECK(precision(p, g) == 0.5);
  }
  SUBCASE("shape mismatch throws") {
    Mask c({2, 2, 3});
    CHECK_THROWS_AS(dice(a, c), ShapeError);
  }
}

TEST_CASE("overlap metrics match brute-force counting on 200 random pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const Shape3 shape{2 + static_cast<int>(rng.uniform_int(11)),
                       2 + static_cast<int>(rng.uniform_int(11)),
                       2 + static_cast<int>(rng.uniform_int(11))};
    const double density = 0.05 + 0.4 * rng.next_double();
    const Mask pred = random_mask(shape, density, rng);
    const Mask gt = random_mask(shape, density, rng);
    const OracleCounts c = oracle_count(pred, gt);

    const double expect_dice =
        (2 * c.tp + c.fp + c.fn) == 0
            ? 1.0
            : 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
    const double expect_prec =
        (c.tp + c.fp) == 0 ? (c.fn == 0 ? 1.0 : 0.0)
                           : c.tp / static_cast<double>(c.tp + c.fp);
    const double expect_sens =
        (c.tp + c.fn) == 0 ? (c.fp == 0 ? 1.0 : 0.0)
                           : c.tp / static_cast<double>(c.tp + c.fn);
    REQUIRE(dice(pred, gt) == expect_dice);
    REQUIRE(precision(pred, gt) == expect_prec);
    REQUIRE(sensitivity(pred, gt) == expect_sens);
  }
}

TEST_CASE("largest connected component matches a flood-fill oracle") {
  SUBCASE("two components keep only the 5-voxel one") {
    Mask m({3, 3, 8});
    for (int x = 0; x < 5; ++x) m.at(0, 0, x) = 1;
    m.at(2, 2, 0) = m.at(2, 2, 1) = m.at(2, 2, 2) = 1;
    const Mask lcc = largest_connected_component(m);
    CHECK(lcc.foreground_count() == 5);
    for (int x = 0; x < 5; ++x) CHECK(lcc.at(0, 0, x) == 1);
    CHECK(lcc.at(2, 2, 0) == 0);
  }
  SUBCASE("single component is identity; empty stays empty") {
    Mask m({4, 4, 4});
    m.at(1, 1, 1) = m.at(2, 2, 2) = 1;  // diagonal pair: 26-connected
    const Mask lcc = largest_connected_component(m);
    CHECK(to_set(lcc) == to_set(m));
    Mask e({4, 4, 4});
    CHECK(largest_connected_component(e).foreground_count() == 0);
  }
  SUBCASE("100 random masks against the oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
      const Shape3 shape{2 + static_cast<int>(rng.uniform_int(11)),
                         2 + static_cast<int>(rng.uniform_int(11)),
                         2 + static_cast<int>(rng.uniform_int(11))};
      const Mask m = random_mask(shape, 0.15 + 0.2 * rng.next_double(), rng);
      const Mask lcc = largest_connected_component(m);
      const auto comps = oracle_components(to_set(m));
      if (comps.empty()) {
        REQUIRE(lcc.foreground_count() == 0);
        continue;
      }
      std::size_t max_size = 0;
      for (const auto& c : comps) max_size = std::max(max_size, c.size());
      REQUIRE(static_cast<std::size_t>(lcc.foreground_count()) == max_size);
      const auto out_set = to_set(lcc);
      bool found = false;
      for (const auto& c : comps) found |= (c == out_set);
      REQUIRE(found);
      Voxel best{INT32_MAX, INT32_MAX, INT32_MAX};
      for (const auto& c : comps)
        if (c.size() == max_size) best = std::min(best, *c.begin());
      REQUIRE(*out_set.begin() == best);
    }
  }
}

namespace {

// Independent simple-point classifier built on coordinate-set BFS (the
// library uses precomputed adjacency tables over a neighborhood bitmask).
bool oracle_simple(const std::set<Voxel>& fg, const Voxel& p) {
  std::set<Voxel> nb_fg;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dz && !dy && !dx) continue;
        const Voxel q{p[0] + dz, p[1] + dy, p[2] + dx};
        if (fg.count(q)) nb_fg.insert(q);
      }
  if (oracle_components(nb_fg).size() != 1) return false;

  std::set<Voxel> n18_bg;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nz = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (nz == 0 || nz > 2) continue;
        const Voxel q{p[0] + dz, p[1] + dy, p[2] + dx};
        if (!fg.count(q)) n18_bg.insert(q);
      }
  int comps_touching = 0;
  std::set<Voxel> left = n18_bg;
  while (!left.empty()) {
    std::vector<Voxel> stack{*left.begin()};
    std::set<Voxel> comp{*left.begin()};
    left.erase(left.begin());
    while (!stack.empty()) {
      const Voxel v = stack.back();
      stack.pop_back();
      for (auto it = left.begin(); it != left.end();) {
        const int md = std::abs(v[0] - (*it)[0]) + std::abs(v[1] - (*it)[1]) +
                       std::abs(v[2] - (*it)[2]);
        if (md == 1) {
          comp.insert(*it);
          stack.push_back(*it);
          it = left.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (const auto& v : comp) {
      const int md = std::abs(v[0] - p[0]) + std::abs(v[1] - p[1]) +
                     std::abs(v[2] - p[2]);
      if (md == 1) {
        ++comps_touching;
        break;
      }
    }
  }
  return comps_touching == 1;
}

int oracle_neighbor_count(const std::set<Voxel>& fg, const Voxel& p) {
  int n = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dz && !dy && !dx) continue;
        if (fg.count({p[0] + dz, p[1] + dy, p[2] + dx})) ++n;
      }
  return n;
}

// Naive reimplementation of the production deletion schedule on coordinate
// sets: per iteration, directions ordered by border count, then parity
// subfields, candidates re-checked against the current set.
std::set<Voxel> oracle_thinning(const Mask& mask) {
  static const int kDirs[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                  {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  std::set<Voxel> fg = to_set(mask);
  Voxel anchor{0, 0, 0};
  if (!fg.empty()) {
    anchor = {INT32_MAX, INT32_MAX, INT32_MAX};
    for (const auto& v : fg)
      for (int a = 0; a < 3; ++a) anchor[a] = std::min(anchor[a], v[a]);
  }
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::pair<long, int>> order;
    for (int d = 0; d < 6; ++d) {
      long count = 0;
      for (const auto& v : fg)
        if (!fg.count(
                {v[0] + kDirs[d][0], v[1] + kDirs[d][1], v[2] + kDirs[d][2]}))
          ++count;
      order.push_back({-count, d});
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [neg, d] : order) {
      std::vector<Voxel> candidates;
      for (const auto& v : fg)
        if (!fg.count(
                {v[0] + kDirs[d][0], v[1] + kDirs[d][1], v[2] + kDirs[d][2]}))
          candidates.push_back(v);
      for (int sf = 0; sf < 8; ++sf) {
        std::vector<Voxel> batch;
        for (const auto& v : candidates) {
          if (!fg.count(v)) continue;
          if ((((v[0] - anchor[0]) & 1) << 2 | ((v[1] - anchor[1]) & 1) << 1 |
               ((v[2] - anchor[2]) & 1)) != sf)
            continue;
          if (oracle_neighbor_count(fg, v) <= 1) continue;
          if (oracle_simple(fg, v)) batch.push_back(v);
        }
        for (const auto& v : batch) fg.erase(v);
        changed |= !batch.empty();
      }
    }
  }
  return fg;
}

}  // namespace

TEST_CASE("skeletonize3d basics") {
  SUBCASE("a 1-voxel-thick straight line is already minimal") {
    Mask line({3, 3, 9});
    for (int x = 0; x < 9; ++x) line.at(1, 1, x) = 1;
    CHECK(to_set(skeletonize3d(line)) == to_set(line));
  }
  SUBCASE("empty mask stays empty") {
    Mask e({4, 4, 4});
    CHECK(skeletonize3d(e).foreground_count() == 0);
  }
  SUBCASE("solid 3x3x9 bar thins to the length-9 centerline") {
    Mask bar({3, 3, 9});
    for (int z = 0; z < 3; ++z)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 9; ++x) bar.at(z, y, x) = 1;
    const Mask skel = skeletonize3d(bar);
    CHECK(to_set(skel) == oracle_thinning(bar));
    CHECK(skel.foreground_count() == 9);
    for (int x = 0; x < 9; ++x) CHECK(skel.at(1, 1, x) == 1);
    Mask barz({9, 3, 3});
    for (int z = 0; z < 9; ++z)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) barz.at(z, y, x) = 1;
    const Mask skelz = skeletonize3d(barz);
    CHECK(skelz.foreground_count() == 9);
    for (int z = 0; z < 9; ++z) CHECK(skelz.at(z, 1, 1) == 1);
  }
}

TEST_CASE("skeletonize3d preserves component count and containment") {
  Rng rng(555);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape3 shape{2 + static_cast<int>(rng.uniform_int(11)),
                       2 + static_cast<int>(rng.uniform_int(11)),
                       2 + static_cast<int>(rng.uniform_int(11))};
    const Mask m = random_mask(shape, 0.2 + 0.3 * rng.next_double(), rng);
    const Mask skel = skeletonize3d(m);
    for (std::size_t i = 0; i < m.v.size(); ++i)
      if (skel.v[i]) REQUIRE(m.v[i]);
    REQUIRE(oracle_components(to_set(skel)).size() ==
            oracle_components(to_set(m)).size());
  }
}

TEST_CASE("skeletonize3d equals the brute-force rule oracle on small masks") {
  Rng rng(777);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape3 shape{2 + static_cast<int>(rng.uniform_int(7)),
                       2 + static_cast<int>(rng.uniform_int(7)),
                       2 + static_cast<int>(rng.uniform_int(7))};
    const Mask m = random_mask(shape, 0.3 + 0.3 * rng.next_double(), rng);
    REQUIRE(to_set(skeletonize3d(m)) == oracle_thinning(m));
  }
}

TEST_CASE("clDice conventions and tube cases") {
  SUBCASE("identical nonempty masks give 1") {
    Mask t = straight_tube({9, 9, 16}, 4, 4, 1.0, 2, 13);
    CHECK(cl_dice(t, t) == 1.0);
  }
  SUBCASE("disjoint tubes give 0") {
    Mask a = straight_tube({12, 12, 16}, 2, 2, 1.0, 2, 13);
    Mask b = straight_tube({12, 12, 16}, 9, 9, 1.0, 2, 13);
    CHECK(cl_dice(a, b) == 0.0);
  }
  SUBCASE("empty-mask conventions") {
    Mask e({4, 4, 4}), f({4, 4, 4});
    CHECK(cl_dice(e, f) == 1.0);
    f.at(1, 1, 1) = 1;
    CHECK(cl_dice(e, f) == 0.0);
    CHECK(cl_dice(f, e) == 0.0);
  }
  SUBCASE("dilated tube still scores 1 (brute-force set computation)") {
    const Mask gt = straight_tube({13, 13, 16}, 6, 6, 1.0, 2, 13);
    const Mask pred = dilate26(gt);
    const auto sp = to_set(skeletonize3d(pred));
    const auto gt_set = to_set(gt);
    for (const auto& v : sp) REQUIRE(gt_set.count(v));
    const auto sg = to_set(skeletonize3d(gt));
    const auto pred_set = to_set(pred);
    for (const auto& v : sg) REQUIRE(pred_set.count(v));
    CHECK(cl_dice(pred, gt) == 1.0);
  }
}

TEST_CASE("metrics are invariant under simultaneous translation") {
  Rng rng(31337);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape3 small{6, 6, 6};
    const Mask p = random_mask(small, 0.3, rng);
    const Mask g = random_mask(small, 0.3, rng);
    const Shape3 big{10, 10, 10};
    const Mask pt = translate(p, 2, 3, 1, big);
    const Mask gt2 = translate(g, 2, 3, 1, big);
    const Mask p0 = translate(p, 0, 0, 0, big);
    const Mask g0 = translate(g, 0, 0, 0, big);
    REQUIRE(dice(p0, g0) == dice(pt, gt2));
    REQUIRE(precision(p0, g0) == precision(pt, gt2));
    REQUIRE(sensitivity(p0, g0) == sensitivity(pt, gt2));
    REQUIRE(cl_dice(p0, g0) == cl_dice(pt, gt2));
  }
}

TEST_CASE("metrics are invariant under simultaneous flips") {
  Rng rng(4242);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape3 shape{7, 8, 9};
    const Mask p = random_mask(shape, 0.3, rng);
    const Mask g = random_mask(shape, 0.3, rng);
    REQUIRE(dice(p, g) == dice(flip_all(p), flip_all(g)));
    REQUIRE(precision(p, g) == precision(flip_all(p), flip_all(g)));
    REQUIRE(sensitivity(p, g) == sensitivity(flip_all(p), flip_all(g)));
  }
  // clDice via skeletons, checked on structured tube fixtures
  const Mask gt = straight_tube({13, 13, 16}, 6, 5, 1.0, 2, 13);
  const Mask pred = dilate26(gt);
  CHECK(cl_dice(pred, gt) == cl_dice(flip_all(pred), flip_all(gt)));
  const Mask shifted = straight_tube({13, 13, 16}, 7, 6, 1.0, 2, 13);
  CHECK(cl_dice(shifted, gt) == cl_dice(flip_all(shifted), flip_all(gt)));
}

TEST_CASE("evaluate_pair fills all fields within [0,1]") {
  const Mask gt = straight_tube({9, 9, 12}, 4, 4, 1.0, 1, 10);
  const Mask pred = dilate26(gt);
  const MetricRecord r = evaluate_pair(pred, gt, "img_000", "test");
  CHECK(r.image_id == "img_000");
  CHECK(r.dataset_id == "test");
  CHECK(r.sensitivity == 1.0);
  CHECK(r.precision < 1.0);
  CHECK(r.dice > 0.0);
  CHECK(r.cldice == 1.0);
  for (double v : {r.sensitivity, r.precision, r.dice, r.cldice}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
