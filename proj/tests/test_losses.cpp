#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vesselseg/losses.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/training.hpp"

using namespace vesselseg;

namespace {

Volume single(double value) {
  Volume v({1, 1, 1});
  v.v[0] = value;
  return v;
}

Mask single_mask(int value) {
  Mask m({1, 1, 1});
  m.v[0] = static_cast<std::uint8_t>(value);
  return m;
}

struct RandomCase {
  Volume pred;
  Mask target;
  Volume umap;
};

RandomCase random_case(Shape3 shape, Rng& rng) {
  RandomCase c{Volume(shape), Mask(shape), Volume(shape)};
  for (auto& p : c.pred.v) p = 0.05 + 0.9 * rng.next_double();
  for (auto& t : c.target.v) t = rng.bernoulli(0.5) ? 1 : 0;
  for (auto& u : c.umap.v) u = 0.25 * rng.next_double();
  return c;
}

// Central finite difference of a loss with respect to one prediction entry.
template <typename LossFn>
double fd_at(const LossFn& loss, Volume pred, std::size_t i, double h) {
  Volume plus = pred, minus = pred;
  plus.v[i] += h;
  minus.v[i] -= h;
  return (loss(plus) - loss(minus)) / (2.0 * h);
}

}  // namespace

TEST_CASE("weighted cross-entropy closed forms") {
  LossConfig cfg;
  SUBCASE("single voxel y=1, yhat=0.5, w_fg=0.9 gives 0.9*ln 2") {
    const double expected = 0.9 * std::log(2.0);  // 0.62383...
    const double got = weighted_cross_entropy(single(0.5), single_mask(1), cfg);
    CHECK(std::abs(got / expected - 1.0) < 1e-12);
    CHECK(got == doctest::Approx(0.62383).epsilon(1e-4));
  }
  SUBCASE("perfect prediction is bounded by the clamp floor") {
    const double bound = 0.9 * (-std::log(1.0 - cfg.epsilon)) + 1e-15;
    CHECK(weighted_cross_entropy(single(1.0), single_mask(1), cfg) <= bound);
    CHECK(weighted_cross_entropy(single(0.0), single_mask(0), cfg) <= bound);
  }
  SUBCASE("unit weights reduce to plain binary cross-entropy") {
    LossConfig unit = cfg;
    unit.w_bg = unit.w_fg = 1.0;
    Rng rng(9);
    const RandomCase c = random_case({2, 3, 4}, rng);
    double expected = 0.0;
    for (std::size_t i = 0; i < c.pred.v.size(); ++i)
      expected -= c.target.v[i] ? std::log(c.pred.v[i])
                                : std::log(1.0 - c.pred.v[i]);
    expected /= static_cast<double>(c.pred.v.size());
    CHECK(weighted_cross_entropy(c.pred, c.target, unit) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("shape mismatch throws") {
    CHECK_THROWS_AS(
        weighted_cross_entropy(single(0.5), Mask({1, 1, 2}), cfg), ShapeError);
  }
}

TEST_CASE("uncertainty loss closed forms") {
  LossConfig cfg;
  SUBCASE("U == 0 annihilates the loss exactly") {
    Rng rng(10);
    RandomCase c = random_case({2, 2, 2}, rng);
    std::fill(c.umap.v.begin(), c.umap.v.end(), 0.0);
    CHECK(uncertainty_loss(c.pred, c.target, c.umap, cfg) == 0.0);
  }
  SUBCASE("single voxel U=0.2, y=1, yhat=0.8 gives -0.2 ln(0.16)") {
    const double expected = -0.2 * std::log(0.2 * 0.8);  // 0.36652...
    const double got =
        uncertainty_loss(single(0.8), single_mask(1), single(0.2), cfg);
    CHECK(std::abs(got / expected - 1.0) < 1e-12);
    CHECK(got == doctest::Approx(0.36652).epsilon(1e-4));
  }
  SUBCASE("background voxels contribute nothing regardless of yhat") {
    Rng rng(11);
    RandomCase c = random_case({2, 2, 2}, rng);
    std::fill(c.target.v.begin(), c.target.v.end(), 0);
    CHECK(uncertainty_loss(c.pred, c.target, c.umap, cfg) == 0.0);
  }
  SUBCASE("negative U is a domain error") {
    CHECK_THROWS_AS(
        uncertainty_loss(single(0.5), single_mask(1), single(-0.1), cfg),
        DomainError);
  }
}

TEST_CASE("total loss composition") {
  LossConfig cfg;
  Rng rng(12);
  const RandomCase c = random_case({2, 3, 2}, rng);
  SUBCASE("lambda = 0 equals the weighted cross-entropy exactly") {
    LossConfig zero = cfg;
    zero.lambda = 0.0;
    CHECK(total_loss(c.pred, c.target, c.umap, zero) ==
          weighted_cross_entropy(c.pred, c.target, zero));
  }
  SUBCASE("U == 0 with lambda 10 equals the weighted cross-entropy exactly") {
    Volume zeros(c.pred.shape);
    CHECK(total_loss(c.pred, c.target, zeros, cfg) ==
          weighted_cross_entropy(c.pred, c.target, cfg));
  }
  SUBCASE("two-voxel combined hand evaluation") {
    // voxel 0: y=1, yhat=0.5, U=0 (pure WCE); voxel 1: y=1, yhat=0.8, U=0.2
    Volume pred({1, 1, 2});
    pred.v = {0.5, 0.8};
    Mask target({1, 1, 2});
    target.v = {1, 1};
    Volume umap({1, 1, 2});
    umap.v = {0.0, 0.2};
    const double wce =
        0.5 * (0.9 * std::log(2.0) + 0.9 * (-std::log(0.8)));
    const double lu = 0.5 * (-0.2 * std::log(0.2 * 0.8));
    const double expected = wce + 10.0 * lu;
    CHECK(std::abs(total_loss(pred, target, umap, LossConfig{}) / expected -
                   1.0) < 1e-12);
  }
  SUBCASE("linearity: total = wce + lambda * lu") {
    const double total = total_loss(c.pred, c.target, c.umap, cfg);
    const double parts = weighted_cross_entropy(c.pred, c.target, cfg) +
                         cfg.lambda * uncertainty_loss(c.pred, c.target, c.umap, cfg);
    CHECK(total == doctest::Approx(parts).epsilon(1e-15));
  }
}

TEST_CASE("analytic loss gradients match central finite differences") {
  // step 1e-4, relative error < 1e-3, random small tensors
  LossConfig cfg;
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const RandomCase c = random_case({2, 2, 2}, rng);
    const Volume gw = weighted_cross_entropy_grad(c.pred, c.target, cfg);
    const Volume gu = uncertainty_loss_grad(c.pred, c.target, c.umap, cfg);
    const Volume gt = total_loss_grad(c.pred, c.target, c.umap, cfg);
    for (std::size_t i = 0; i < c.pred.v.size(); ++i) {
      const double fd_w = fd_at(
          [&](const Volume& p) { return weighted_cross_entropy(p, c.target, cfg); },
          c.pred, i, 1e-4);
      REQUIRE(std::abs(fd_w - gw.v[i]) <= 1e-3 * std::abs(fd_w));
      const double fd_u = fd_at(
          [&](const Volume& p) {
            return uncertainty_loss(p, c.target, c.umap, cfg);
          },
          c.pred, i, 1e-4);
      if (fd_u == 0.0) {
        REQUIRE(gu.v[i] == 0.0);
      } else {
        REQUIRE(std::abs(fd_u - gu.v[i]) <= 1e-3 * std::abs(fd_u));
      }
      const double fd_t = fd_at(
          [&](const Volume& p) { return total_loss(p, c.target, c.umap, cfg); },
          c.pred, i, 1e-4);
      REQUIRE(std::abs(fd_t - gt.v[i]) <= 1e-3 * std::abs(fd_t));
    }
  }
}

TEST_CASE("loss properties") {
  LossConfig cfg;
  Rng rng(14);
  SUBCASE("nonnegativity on random inputs") {
    for (int trial = 0; trial < 20; ++trial) {
      const RandomCase c = random_case({3, 3, 3}, rng);
      CHECK(weighted_cross_entropy(c.pred, c.target, cfg) >= 0.0);
      CHECK(uncertainty_loss(c.pred, c.target, c.umap, cfg) >= 0.0);
      CHECK(total_loss(c.pred, c.target, c.umap, cfg) >= 0.0);
    }
  }
  SUBCASE("WCE is monotone in yhat (decreasing for y=1, increasing for y=0)") {
    double prev1 = 1e300, prev0 = -1.0;
    for (double p = 0.05; p <= 0.96; p += 0.05) {
      const double l1 = weighted_cross_entropy(single(p), single_mask(1), cfg);
      const double l0 = weighted_cross_entropy(single(p), single_mask(0), cfg);
      CHECK(l1 < prev1);
      CHECK(l0 > prev0);
      prev1 = l1;
      prev0 = l0;
    }
  }
  SUBCASE("doubling U never decreases L_U while U*yhat <= 1/e") {
    for (int trial = 0; trial < 20; ++trial) {
      Volume pred({2, 2, 2}), umap({2, 2, 2});
      Mask target({2, 2, 2}, 1);
      for (auto& p : pred.v) p = 0.1 + 0.8 * rng.next_double();
      for (std::size_t i = 0; i < umap.v.size(); ++i) {
        // keep 2*U*yhat below 1/e so both evaluations stay in the growth range
        const double cap = 1.0 / (2.0 * std::exp(1.0) * pred.v[i]);
        umap.v[i] = std::min(0.125, cap) * rng.next_double();
      }
      Volume doubled = umap;
      for (auto& u : doubled.v) u *= 2.0;
      CHECK(uncertainty_loss(pred, target, doubled, cfg) >=
            uncertainty_loss(pred, target, umap, cfg));
    }
  }
  SUBCASE("ablation mode drops U from the log argument") {
    LossConfig alt = cfg;
    alt.mode = LossConfig::UncertaintyMode::kWeightedCeByU;
    const double got =
        uncertainty_loss(single(0.8), single_mask(1), single(0.2), alt);
    CHECK(got == doctest::Approx(-0.2 * std::log(0.8)).epsilon(1e-12));
  }
}

TEST_CASE("prepare_uncertainty_maps") {
  BackboneConfig bb;
  bb.kind = BackboneKind::kOursUnet;
  bb.depth = 2;
  bb.feature_schedule = {2, 4};
  LossConfig cfg;
  cfg.s_prep = 4;

  std::vector<TrainImage> train;
  Rng rng(15);
  for (int i = 0; i < 2; ++i) {
    TrainImage img;
    img.id = "img_00" + std::to_string(i);
    img.image = Volume({6, 8, 8});
    for (auto& x : img.image.v) x = rng.next_double();
    img.mask = Mask({6, 8, 8});
    img.mask.at(3, 4, 4) = 1;
    train.push_back(std::move(img));
  }

  SUBCASE("an untrained registry is rejected") {
    SubModelRegistry reg = init_registry(bb, 2, {1, 2});
    CHECK_THROWS_AS(prepare_uncertainty_maps(reg, train, cfg, 5),
                    NotTrainedError);
  }
  SUBCASE("M=1 yields exactly-zero maps; bounds and determinism hold") {
    SubModelRegistry reg1 = init_registry(bb, 1, {1});
    reg1.trained_stage = 1;  // stands in for a loaded stage-1 checkpoint
    const UncertaintyMapSet maps1 = prepare_uncertainty_maps(reg1, train, cfg, 5);
    REQUIRE(maps1.maps.size() == 2);
    for (const auto& [id, map] : maps1.maps) {
      REQUIRE(map.shape == Shape3{6, 8, 8});  // cropped back to image shape
      for (double v : map.v) REQUIRE(v == 0.0);
    }

    SubModelRegistry reg3 = init_registry(bb, 3, {1, 2, 3});
    reg3.trained_stage = 1;
    const UncertaintyMapSet a = prepare_uncertainty_maps(reg3, train, cfg, 5);
    const UncertaintyMapSet b = prepare_uncertainty_maps(reg3, train, cfg, 5);
    for (const auto& [id, map] : a.maps) {
      for (double v : map.v) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 0.25);
      }
      const auto& other = b.maps.at(id);
      for (std::size_t i = 0; i < map.v.size(); ++i)
        REQUIRE(map.v[i] == other.v[i]);
    }

    // persistence roundtrip via the rawvol + manifest layout
    const auto dir = std::filesystem::temp_directory_path() / "vesselseg_umaps";
    std::filesystem::remove_all(dir);
    save_uncertainty_maps(a, dir);
    const UncertaintyMapSet loaded = load_uncertainty_maps(dir);
    CHECK(loaded.s_prep == a.s_prep);
    CHECK(loaded.seed == a.seed);
    CHECK(loaded.checkpoint_id == a.checkpoint_id);
    REQUIRE(loaded.maps.size() == a.maps.size());
    for (const auto& [id, map] : a.maps) {
      const auto& l = loaded.maps.at(id);
      for (std::size_t i = 0; i < map.v.size(); ++i)
        REQUIRE(l.v[i] == doctest::Approx(map.v[i]).epsilon(1e-7));
    }
  }
}
