#include "vesselseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "vesselseg/errors.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

void PhantomConfig::validate() const {
  if (shape.z < 1 || shape.y < 1 || shape.x < 1)
    throw InvalidConfigError("phantom shape must be positive");
  if (tree_count < 0) throw InvalidConfigError("tree count must be >= 0");
  if (radius_min < 0.5)
    throw InvalidConfigError("vessel radius must be >= 0.5 voxel");
  if (radius_max < radius_min)
    throw InvalidConfigError("radius range is inverted");
  if (!(radius_decay > 0.0 && radius_decay <= 1.0))
    throw InvalidConfigError("radius decay must lie in (0, 1]");
  auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in01(vessel_intensity_min) || !in01(vessel_intensity_max) ||
      vessel_intensity_max < vessel_intensity_min)
    throw InvalidConfigError("vessel intensity range must lie in [0, 1]");
  if (!in01(skull_intensity))
    throw InvalidConfigError("skull intensity must lie in [0, 1]");
  if (background_noise_sigma < 0.0 || bias_field_amplitude < 0.0)
    throw InvalidConfigError("noise sigma and bias amplitude must be >= 0");
  if (!(branching_probability >= 0.0 && branching_probability <= 1.0))
    throw InvalidConfigError("branching probability must lie in [0, 1]");
}

namespace {

struct Vec3 {
  double z = 0.0, y = 0.0, x = 0.0;
};

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v.z * v.z + v.y * v.y + v.x * v.x);
  if (n < 1e-12) return {1.0, 0.0, 0.0};
  return {v.z / n, v.y / n, v.x / n};
}

Vec3 random_unit(Rng& rng) {
  return normalized({rng.normal(), rng.normal(), rng.normal()});
}

void stamp_ball(Volume* vol, Mask* mask, const Vec3& c, double r,
                double intensity) {
  const Shape3& s = vol->shape;
  const int z0 = std::max(0, static_cast<int>(std::floor(c.z - r)));
  const int z1 = std::min(s.z - 1, static_cast<int>(std::ceil(c.z + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y - r)));
  const int y1 = std::min(s.y - 1, static_cast<int>(std::ceil(c.y + r)));
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x - r)));
  const int x1 = std::min(s.x - 1, static_cast<int>(std::ceil(c.x + r)));
  const double r2 = r * r;
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dz = z - c.z, dy = y - c.y, dx = x - c.x;
        if (dz * dz + dy * dy + dx * dx <= r2) {
          mask->at(z, y, x) = 1;
          vol->at(z, y, x) = std::max(vol->at(z, y, x), intensity);
        }
      }
  // A very thin tube (r ~ 0.5) can miss every voxel center; pin the nearest
  // voxel so tubes stay 26-connected.
  const int nz = std::clamp(static_cast<int>(std::lround(c.z)), 0, s.z - 1);
  const int ny = std::clamp(static_cast<int>(std::lround(c.y)), 0, s.y - 1);
  const int nx = std::clamp(static_cast<int>(std::lround(c.x)), 0, s.x - 1);
  mask->at(nz, ny, nx) = 1;
  vol->at(nz, ny, nx) = std::max(vol->at(nz, ny, nx), intensity);
}

struct Segment {
  Vec3 pos;
  Vec3 dir;
  double radius = 1.0;
  double remaining = 0.0;  // centerline length left for this segment
};

// One tree draws from a shared centerline-length pool, so the rasterized
// tube volume is bounded by pool * cross-section regardless of how often it
// branches.
void grow_tree(Rng& rng, const PhantomConfig& cfg, Volume* vol, Mask* mask) {
  const Shape3& s = cfg.shape;
  const double margin = std::max(2.0, 0.08 * std::min({s.z, s.y, s.x}));
  const double lo[3] = {margin, margin, margin};
  const double hi[3] = {s.z - 1 - margin, s.y - 1 - margin, s.x - 1 - margin};
  const double intensity =
      rng.uniform(cfg.vessel_intensity_min, cfg.vessel_intensity_max);

  const double mean_r = 0.5 * (cfg.radius_min + cfg.radius_max);
  const double cross_section = 3.141592653589793 * mean_r * mean_r;
  const double cap = 0.025 * static_cast<double>(s.voxels()) /
                     (cross_section * std::max(1, cfg.tree_count));
  double pool = std::min(2.5 * std::max({s.z, s.y, s.x}), cap);
  const double max_extent = std::max({s.z, s.y, s.x});

  Segment root;
  root.pos = {rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]),
              rng.uniform(lo[2], hi[2])};
  root.dir = random_unit(rng);
  root.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
  root.remaining = rng.uniform(0.5, 1.0) * max_extent;

  std::vector<Segment> stack{root};
  stamp_ball(vol, mask, root.pos, root.radius, intensity);
  while (pool > 0.0 && !stack.empty()) {
    Segment& seg = stack.back();
    const double step = std::max(0.4, 0.5 * seg.radius);
    seg.dir = normalized({seg.dir.z + 0.18 * rng.normal(),
                          seg.dir.y + 0.18 * rng.normal(),
                          seg.dir.x + 0.18 * rng.normal()});
    // Bounce off the margin box.
    double* comps[3] = {&seg.dir.z, &seg.dir.y, &seg.dir.x};
    const double pos[3] = {seg.pos.z, seg.pos.y, seg.pos.x};
    for (int a = 0; a < 3; ++a) {
      const double next = pos[a] + *comps[a] * step;
      if (next < lo[a] || next > hi[a]) *comps[a] = -*comps[a];
    }
    seg.pos = {seg.pos.z + seg.dir.z * step, seg.pos.y + seg.dir.y * step,
               seg.pos.x + seg.dir.x * step};
    seg.remaining -= step;
    pool -= step;
    stamp_ball(vol, mask, seg.pos, seg.radius, intensity);

    if (rng.bernoulli(cfg.branching_probability)) {
      Segment child;
      child.pos = seg.pos;
      child.dir = normalized({seg.dir.z + 0.9 * rng.normal(),
                              seg.dir.y + 0.9 * rng.normal(),
                              seg.dir.x + 0.9 * rng.normal()});
      child.radius = seg.radius * cfg.radius_decay;
      child.remaining = rng.uniform(0.25, 0.6) * max_extent;
      if (child.radius >= 0.5 && stack.size() < 32) stack.push_back(child);
      continue;  // seg reference may be invalidated by the push
    }
    if (seg.remaining <= 0.0) stack.pop_back();
  }
}

// Smooth multiplicative field from a trilinearly interpolated random coarse
// grid in [-1, 1].
Volume smooth_field(const Shape3& shape, Rng& rng, int grid = 3) {
  std::vector<double> coarse(static_cast<std::size_t>(grid) * grid * grid);
  for (auto& c : coarse) c = rng.uniform(-1.0, 1.0);
  Volume field(shape);
  auto sample1 = [&](int gz, int gy, int gx) {
    return coarse[(static_cast<std::size_t>(gz) * grid + gy) * grid + gx];
  };
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x) {
        const double fz = shape.z > 1 ? static_cast<double>(z) * (grid - 1) / (shape.z - 1) : 0.0;
        const double fy = shape.y > 1 ? static_cast<double>(y) * (grid - 1) / (shape.y - 1) : 0.0;
        const double fx = shape.x > 1 ? static_cast<double>(x) * (grid - 1) / (shape.x - 1) : 0.0;
        const int z0 = std::min(static_cast<int>(fz), grid - 2);
        const int y0 = std::min(static_cast<int>(fy), grid - 2);
        const int x0 = std::min(static_cast<int>(fx), grid - 2);
        const double tz = fz - z0, ty = fy - y0, tx = fx - x0;
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double wz = dz ? tz : 1.0 - tz;
              const double wy = dy ? ty : 1.0 - ty;
              const double wx = dx ? tx : 1.0 - tx;
              acc += wz * wy * wx * sample1(z0 + dz, y0 + dy, x0 + dx);
            }
        field.at(z, y, x) = acc;
      }
  return field;
}

void add_skull_shell(Volume* vol, Rng& rng, double intensity) {
  const Shape3& s = vol->shape;
  const Vec3 c{0.5 * (s.z - 1) + rng.uniform(-2.0, 2.0),
               0.5 * (s.y - 1) + rng.uniform(-2.0, 2.0),
               0.5 * (s.x - 1) + rng.uniform(-2.0, 2.0)};
  const double radius = 0.45 * std::min({s.z, s.y, s.x});
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        const double dz = z - c.z, dy = y - c.y, dx = x - c.x;
        const double d = std::sqrt(dz * dz + dy * dy + dx * dx);
        if (std::abs(d - radius) <= 1.0)
          vol->at(z, y, x) = std::max(vol->at(z, y, x), intensity);
      }
}

}  // namespace

std::pair<Volume, Mask> generate_phantom(const PhantomConfig& cfg,
                                         std::uint64_t seed) {
  cfg.validate();
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, 0x70686171, static_cast<std::uint64_t>(attempt)));
    Volume vol(cfg.shape, 0.0, cfg.spacing);
    Mask mask(cfg.shape, 0, cfg.spacing);
    for (int t = 0; t < cfg.tree_count; ++t) grow_tree(rng, cfg, &vol, &mask);
    if (cfg.tree_count > 0) {
      const double frac = static_cast<double>(mask.foreground_count()) /
                          static_cast<double>(cfg.shape.voxels());
      if (frac < 0.001 || frac > 0.05) continue;
    }
    if (cfg.background_noise_sigma > 0.0)
      for (auto& v : vol.v) v += cfg.background_noise_sigma * rng.normal();
    if (cfg.bias_field_amplitude > 0.0) {
      const Volume field = smooth_field(cfg.shape, rng);
      for (std::int64_t i = 0; i < cfg.shape.voxels(); ++i)
        vol.v[i] *= 1.0 + cfg.bias_field_amplitude * field.v[i];
    }
    if (cfg.skull_shell) add_skull_shell(&vol, rng, cfg.skull_intensity);
    return {std::move(vol), std::move(mask)};
  }
  throw GenerationError(
      "phantom generation failed to reach a foreground fraction in "
      "[0.1%, 5%] after 100 resamples");
}

Volume minmax_normalize(const Volume& v) {
  if (v.v.empty()) throw InvalidConfigError("cannot normalize an empty volume");
  const auto [mn_it, mx_it] = std::minmax_element(v.v.begin(), v.v.end());
  const double mn = *mn_it, mx = *mx_it;
  Volume out(v.shape, 0.0, v.spacing);
  if (mx > mn) {
    const double inv = 1.0 / (mx - mn);
    for (std::size_t i = 0; i < v.v.size(); ++i) out.v[i] = (v.v[i] - mn) * inv;
  }
  return out;
}

PatchOrigin sample_patch_origin(const Mask& mask, Shape3 patch_shape,
                                std::uint64_t seed) {
  if (patch_shape.z > mask.shape.z || patch_shape.y > mask.shape.y ||
      patch_shape.x > mask.shape.x)
    throw ShapeError("patch shape " + patch_shape.str() +
                     " exceeds volume shape " + mask.shape.str());
  std::int64_t fg = mask.foreground_count();
  if (fg == 0) throw NoForegroundError("mask has no foreground voxel");
  Rng rng(seed);
  std::int64_t target = static_cast<std::int64_t>(
      rng.uniform_int(static_cast<std::uint64_t>(fg)));
  std::int64_t center = -1;
  for (std::int64_t i = 0; i < mask.shape.voxels(); ++i) {
    if (!mask.v[i]) continue;
    if (target-- == 0) {
      center = i;
      break;
    }
  }
  const int cz = static_cast<int>(center / (static_cast<std::int64_t>(mask.shape.y) * mask.shape.x));
  const int cy = static_cast<int>((center / mask.shape.x) % mask.shape.y);
  const int cx = static_cast<int>(center % mask.shape.x);
  PatchOrigin o;
  o.z = std::clamp(cz - patch_shape.z / 2, 0, mask.shape.z - patch_shape.z);
  o.y = std::clamp(cy - patch_shape.y / 2, 0, mask.shape.y - patch_shape.y);
  o.x = std::clamp(cx - patch_shape.x / 2, 0, mask.shape.x - patch_shape.x);
  return o;
}

namespace {

template <typename Field>
Field extract_patch_impl(const Field& f, PatchOrigin o, Shape3 ps) {
  Field out(ps, {}, f.spacing);
  for (int z = 0; z < ps.z; ++z)
    for (int y = 0; y < ps.y; ++y) {
      const auto* src = f.v.data() + f.index(o.z + z, o.y + y, o.x);
      auto* dst = out.v.data() + out.index(z, y, 0);
      std::copy(src, src + ps.x, dst);
    }
  return out;
}

}  // namespace

Volume extract_patch(const Volume& v, PatchOrigin origin, Shape3 patch_shape) {
  return extract_patch_impl(v, origin, patch_shape);
}

Mask extract_patch(const Mask& m, PatchOrigin origin, Shape3 patch_shape) {
  return extract_patch_impl(m, origin, patch_shape);
}

std::pair<Volume, Mask> sample_patch(const Volume& v, const Mask& m,
                                     Shape3 patch_shape, std::uint64_t seed) {
  require_same_shape(v.shape, m.shape, "sample_patch");
  const PatchOrigin o = sample_patch_origin(m, patch_shape, seed);
  return {extract_patch(v, o, patch_shape), extract_patch(m, o, patch_shape)};
}

AugmentOps draw_augment_ops(std::uint64_t seed) {
  Rng rng(seed);
  AugmentOps ops;
  for (int a = 0; a < 3; ++a) ops.flip[a] = rng.bernoulli(0.5);
  ops.gamma = rng.uniform(0.7, 1.5);
  return ops;
}

namespace {

template <typename Field>
void flip_axes_impl(Field* f, const bool flip[3]) {
  const Shape3 s = f->shape;
  if (flip[0]) {
    for (int z = 0; z < s.z / 2; ++z)
      for (int y = 0; y < s.y; ++y)
        for (int x = 0; x < s.x; ++x)
          std::swap(f->at(z, y, x), f->at(s.z - 1 - z, y, x));
  }
  if (flip[1]) {
    for (int z = 0; z < s.z; ++z)
      for (int y = 0; y < s.y / 2; ++y)
        for (int x = 0; x < s.x; ++x)
          std::swap(f->at(z, y, x), f->at(z, s.y - 1 - y, x));
  }
  if (flip[2]) {
    for (int z = 0; z < s.z; ++z)
      for (int y = 0; y < s.y; ++y)
        for (int x = 0; x < s.x / 2; ++x)
          std::swap(f->at(z, y, x), f->at(z, y, s.x - 1 - x));
  }
}

}  // namespace

void flip_axes(Volume* v, const bool flip[3]) { flip_axes_impl(v, flip); }
void flip_axes(Mask* m, const bool flip[3]) { flip_axes_impl(m, flip); }

void apply_augment(Volume* image, Mask* mask, Volume* aux,
                   const AugmentOps& ops) {
  flip_axes(image, ops.flip);
  flip_axes(mask, ops.flip);
  if (aux) flip_axes(aux, ops.flip);
  if (ops.gamma != 1.0)
    for (auto& v : image->v) v = std::pow(std::max(v, 0.0), ops.gamma);
}

std::pair<Volume, Mask> augment(const Volume& v, const Mask& m,
                                std::uint64_t seed) {
  require_same_shape(v.shape, m.shape, "augment");
  Volume img = v;
  Mask mask = m;
  apply_augment(&img, &mask, nullptr, draw_augment_ops(seed));
  return {std::move(img), std::move(mask)};
}

void OODConfig::validate() const {
  for (double f : spacing_factor)
    if (!(f > 0.0)) throw InvalidConfigError("spacing factor must be > 0");
  if (!(gamma > 0.0)) throw InvalidConfigError("gamma must be > 0");
  if (noise_sigma < 0.0 || bias_amplitude < 0.0)
    throw InvalidConfigError("noise sigma and bias amplitude must be >= 0");
  if (lesion_count < 0) throw InvalidConfigError("lesion count must be >= 0");
}

namespace {

double trilinear(const Volume& v, double fz, double fy, double fx) {
  const int z0 = std::clamp(static_cast<int>(std::floor(fz)), 0, v.shape.z - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, v.shape.y - 1);
  const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, v.shape.x - 1);
  const int z1 = std::min(z0 + 1, v.shape.z - 1);
  const int y1 = std::min(y0 + 1, v.shape.y - 1);
  const int x1 = std::min(x0 + 1, v.shape.x - 1);
  const double tz = fz - z0, ty = fy - y0, tx = fx - x0;
  double acc = 0.0;
  const int zz[2] = {z0, z1}, yy[2] = {y0, y1}, xx[2] = {x0, x1};
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wz = dz ? tz : 1.0 - tz;
        const double wy = dy ? ty : 1.0 - ty;
        const double wx = dx ? tx : 1.0 - tx;
        if (wz == 0.0 || wy == 0.0 || wx == 0.0) continue;
        acc += wz * wy * wx * v.at(zz[dz], yy[dy], xx[dx]);
      }
  return acc;
}

Volume resample_axis_aligned(const Volume& v, const Shape3& target) {
  Volume out(target, 0.0, v.spacing);
  auto coord = [](int i, int n_out, int n_in) {
    if (n_out <= 1) return 0.5 * (n_in - 1);
    return static_cast<double>(i) * (n_in - 1) / (n_out - 1);
  };
  for (int z = 0; z < target.z; ++z)
    for (int y = 0; y < target.y; ++y)
      for (int x = 0; x < target.x; ++x)
        out.at(z, y, x) =
            trilinear(v, coord(z, target.z, v.shape.z),
                      coord(y, target.y, v.shape.y),
                      coord(x, target.x, v.shape.x));
  return out;
}

}  // namespace

Volume apply_ood_stages(const Volume& v, const OODConfig& cfg,
                        std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x6f6f64));
  Volume out = v;

  // Voxel-size domain shift: down to the coarser grid and back.
  const Shape3 coarse{
      std::max(1, static_cast<int>(std::lround(v.shape.z / cfg.spacing_factor[0]))),
      std::max(1, static_cast<int>(std::lround(v.shape.y / cfg.spacing_factor[1]))),
      std::max(1, static_cast<int>(std::lround(v.shape.x / cfg.spacing_factor[2])))};
  if (!(coarse == v.shape)) {
    Volume down = resample_axis_aligned(out, coarse);
    out = resample_axis_aligned(down, v.shape);
  }

  if (cfg.gamma != 1.0)
    for (auto& x : out.v) x = std::pow(std::max(x, 0.0), cfg.gamma);

  if (cfg.noise_sigma > 0.0)
    for (auto& x : out.v) x += cfg.noise_sigma * rng.normal();

  if (cfg.bias_amplitude > 0.0) {
    const Volume field = smooth_field(v.shape, rng);
    for (std::int64_t i = 0; i < v.shape.voxels(); ++i)
      out.v[i] *= 1.0 + cfg.bias_amplitude * field.v[i];
  }

  for (int l = 0; l < cfg.lesion_count; ++l) {
    const double mz = std::max(2.0, 0.1 * v.shape.z);
    const double my = std::max(2.0, 0.1 * v.shape.y);
    const double mx = std::max(2.0, 0.1 * v.shape.x);
    const Vec3 c{rng.uniform(mz, v.shape.z - 1 - mz),
                 rng.uniform(my, v.shape.y - 1 - my),
                 rng.uniform(mx, v.shape.x - 1 - mx)};
    const double r = rng.uniform(2.0, 4.0);
    const double amp = rng.uniform(0.55, 0.85);
    const double s2 = (r / 2.0) * (r / 2.0);
    const int rad = static_cast<int>(std::ceil(2.0 * r));
    for (int z = std::max(0, static_cast<int>(c.z) - rad);
         z <= std::min(v.shape.z - 1, static_cast<int>(c.z) + rad); ++z)
      for (int y = std::max(0, static_cast<int>(c.y) - rad);
           y <= std::min(v.shape.y - 1, static_cast<int>(c.y) + rad); ++y)
        for (int x = std::max(0, static_cast<int>(c.x) - rad);
             x <= std::min(v.shape.x - 1, static_cast<int>(c.x) + rad); ++x) {
          const double dz = z - c.z, dy = y - c.y, dx = x - c.x;
          const double d2 = dz * dz + dy * dy + dx * dx;
          out.at(z, y, x) =
              std::max(out.at(z, y, x), amp * std::exp(-d2 / (2.0 * s2)));
        }
  }
  return out;
}

Volume perturb_ood(const Volume& v, const OODConfig& cfg, std::uint64_t seed) {
  return minmax_normalize(apply_ood_stages(v, cfg, seed));
}

}  // namespace vesselseg
