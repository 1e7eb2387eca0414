#include "vesselseg/metrics.hpp"

#include <array>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "vesselseg/errors.hpp"

namespace vesselseg {

namespace {

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0;
};

Counts count_overlap(const Mask& pred, const Mask& gt) {
  require_same_shape(pred.shape, gt.shape, "metric");
  Counts c;
  const std::int64_t n = pred.shape.voxels();
  for (std::int64_t i = 0; i < n; ++i) {
    const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    c.tp += (p && g);
    c.fp += (p && !g);
    c.fn += (!p && g);
  }
  return c;
}

// --- 3D digital topology tables over the 26-neighborhood --------------------
// Neighborhood positions indexed 0..25 in (dz,dy,dx) raster order with the
// center omitted.

struct NeighborTables {
  std::array<std::array<int, 3>, 26> offset;
  bool adj26[26][26];  // Chebyshev distance <= 1 between offsets
  bool adj6[26][26];   // Manhattan distance == 1 between offsets
  bool in18[26];       // at most two nonzero coordinates
  bool in6[26];        // exactly one nonzero coordinate

  NeighborTables() {
    int idx = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!dz && !dy && !dx) continue;
          offset[idx] = {dz, dy, dx};
          ++idx;
        }
    for (int i = 0; i < 26; ++i) {
      const auto& a = offset[i];
      const int nz = (a[0] != 0) + (a[1] != 0) + (a[2] != 0);
      in18[i] = nz <= 2;
      in6[i] = nz == 1;
      for (int j = 0; j < 26; ++j) {
        const auto& b = offset[j];
        const int az = std::abs(a[0] - b[0]), ay = std::abs(a[1] - b[1]),
                  ax = std::abs(a[2] - b[2]);
        adj26[i][j] = i != j && az <= 1 && ay <= 1 && ax <= 1;
        adj6[i][j] = az + ay + ax == 1;
      }
    }
  }
};

const NeighborTables& tables() {
  static const NeighborTables t;
  return t;
}

// Foreground bitmask of the 26-neighborhood; voxels outside the volume count
// as background.
std::uint32_t neighborhood_bits(const Mask& m, int z, int y, int x) {
  const auto& t = tables();
  std::uint32_t bits = 0;
  for (int i = 0; i < 26; ++i) {
    const int nz = z + t.offset[i][0], ny = y + t.offset[i][1],
              nx = x + t.offset[i][2];
    if (m.in_bounds(nz, ny, nx) && m.at(nz, ny, nx)) bits |= 1u << i;
  }
  return bits;
}

// Number of 26-connected components among the foreground neighbors.
int t26(std::uint32_t fg_bits) {
  const auto& t = tables();
  int comp = 0;
  std::uint32_t seen = 0;
  for (int i = 0; i < 26; ++i) {
    if (!(fg_bits & (1u << i)) || (seen & (1u << i))) continue;
    ++comp;
    int stack[26];
    int top = 0;
    stack[top++] = i;
    seen |= 1u << i;
    while (top) {
      const int u = stack[--top];
      for (int v = 0; v < 26; ++v)
        if ((fg_bits & (1u << v)) && !(seen & (1u << v)) && t.adj26[u][v]) {
          seen |= 1u << v;
          stack[top++] = v;
        }
    }
  }
  return comp;
}

// Number of 6-connected background components within the 18-neighborhood that
// touch a face neighbor of the center.
int t6(std::uint32_t fg_bits) {
  const auto& t = tables();
  int comp = 0;
  std::uint32_t seen = 0;
  for (int i = 0; i < 26; ++i) {
    if (!t.in6[i]) continue;  // grow only from face neighbors
    if ((fg_bits & (1u << i)) || (seen & (1u << i))) continue;
    ++comp;
    int stack[26];
    int top = 0;
    stack[top++] = i;
    seen |= 1u << i;
    while (top) {
      const int u = stack[--top];
      for (int v = 0; v < 26; ++v)
        if (t.in18[v] && !(fg_bits & (1u << v)) && !(seen & (1u << v)) &&
            t.adj6[u][v]) {
          seen |= 1u << v;
          stack[top++] = v;
        }
    }
  }
  return comp;
}

bool is_simple(std::uint32_t fg_bits) {
  return t26(fg_bits) == 1 && t6(fg_bits) == 1;
}

int neighbor_count(std::uint32_t fg_bits) {
  return __builtin_popcount(fg_bits);
}

}  // namespace

double dice(const Mask& pred, const Mask& gt) {
  const Counts c = count_overlap(pred, gt);
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // both empty
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double precision(const Mask& pred, const Mask& gt) {
  const Counts c = count_overlap(pred, gt);
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double sensitivity(const Mask& pred, const Mask& gt) {
  const Counts c = count_overlap(pred, gt);
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

// Directional thinning: per iteration, peel the six border orientations,
// widest faces first (so end caps of elongated structures survive until the
// cross-section has collapsed). Candidates of one direction are processed in
// eight parity subfields; voxels of one subfield are never 26-adjacent, so
// each batch deletes an interaction-free set and the outcome does not depend
// on traversal order within the batch. Every deleted voxel is simple at its
// deletion time, which preserves the component structure.
Mask skeletonize3d(const Mask& mask) {
  static const int kDirs[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                  {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  Mask m = mask;
  // Parity subfields are anchored to the foreground bounding box so the
  // result is exactly translation-equivariant.
  int anchor[3] = {0, 0, 0};
  {
    bool found = false;
    for (int z = 0; z < m.shape.z && !found; ++z)
      for (int y = 0; y < m.shape.y && !found; ++y)
        for (int x = 0; x < m.shape.x && !found; ++x)
          if (m.at(z, y, x)) {
            anchor[0] = z;
            found = true;
          }
    if (found) {
      int min_y = m.shape.y, min_x = m.shape.x;
      for (int z = 0; z < m.shape.z; ++z)
        for (int y = 0; y < m.shape.y; ++y)
          for (int x = 0; x < m.shape.x; ++x)
            if (m.at(z, y, x)) {
              min_y = std::min(min_y, y);
              min_x = std::min(min_x, x);
            }
      anchor[1] = min_y;
      anchor[2] = min_x;
    }
  }
  std::vector<std::int64_t> candidates, batch;
  bool changed = true;
  while (changed) {
    changed = false;
    std::int64_t border_count[6] = {0, 0, 0, 0, 0, 0};
    for (int z = 0; z < m.shape.z; ++z)
      for (int y = 0; y < m.shape.y; ++y)
        for (int x = 0; x < m.shape.x; ++x) {
          if (!m.at(z, y, x)) continue;
          for (int d = 0; d < 6; ++d) {
            const int bz = z + kDirs[d][0], by = y + kDirs[d][1],
                      bx = x + kDirs[d][2];
            if (!m.in_bounds(bz, by, bx) || !m.at(bz, by, bx))
              ++border_count[d];
          }
        }
    int order[6] = {0, 1, 2, 3, 4, 5};
    std::stable_sort(order, order + 6, [&](int a, int b) {
      return border_count[a] > border_count[b];
    });
    for (int oi = 0; oi < 6; ++oi) {
      const auto& dir = kDirs[order[oi]];
      candidates.clear();
      for (int z = 0; z < m.shape.z; ++z)
        for (int y = 0; y < m.shape.y; ++y)
          for (int x = 0; x < m.shape.x; ++x) {
            if (!m.at(z, y, x)) continue;
            const int bz = z + dir[0], by = y + dir[1], bx = x + dir[2];
            const bool border =
                !m.in_bounds(bz, by, bx) || !m.at(bz, by, bx);
            if (border) candidates.push_back(m.index(z, y, x));
          }
      if (candidates.empty()) continue;
      const std::int64_t plane = static_cast<std::int64_t>(m.shape.y) * m.shape.x;
      for (int sf = 0; sf < 8; ++sf) {
        batch.clear();
        for (const std::int64_t idx : candidates) {
          if (!m.v[idx]) continue;
          const int z = static_cast<int>(idx / plane);
          const int y = static_cast<int>((idx / m.shape.x) % m.shape.y);
          const int x = static_cast<int>(idx % m.shape.x);
          if ((((z - anchor[0]) & 1) << 2 | ((y - anchor[1]) & 1) << 1 |
               ((x - anchor[2]) & 1)) != sf)
            continue;
          const std::uint32_t bits = neighborhood_bits(m, z, y, x);
          if (neighbor_count(bits) <= 1) continue;  // endpoint
          if (is_simple(bits)) batch.push_back(idx);
        }
        for (const std::int64_t idx : batch) m.v[idx] = 0;
        changed |= !batch.empty();
      }
    }
  }
  return m;
}

double cl_dice(const Mask& pred, const Mask& gt) {
  require_same_shape(pred.shape, gt.shape, "cl_dice");
  const std::int64_t np = pred.foreground_count();
  const std::int64_t ng = gt.foreground_count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const Mask sp = skeletonize3d(pred);
  const Mask sg = skeletonize3d(gt);
  std::int64_t sp_total = 0, sp_in_gt = 0, sg_total = 0, sg_in_pred = 0;
  const std::int64_t n = pred.shape.voxels();
  for (std::int64_t i = 0; i < n; ++i) {
    if (sp.v[i]) {
      ++sp_total;
      if (gt.v[i]) ++sp_in_gt;
    }
    if (sg.v[i]) {
      ++sg_total;
      if (pred.v[i]) ++sg_in_pred;
    }
  }
  if (sp_total == 0 || sg_total == 0) return 0.0;
  const double t_prec = static_cast<double>(sp_in_gt) / sp_total;
  const double t_sens = static_cast<double>(sg_in_pred) / sg_total;
  if (t_prec + t_sens == 0.0) return 0.0;
  return 2.0 * t_prec * t_sens / (t_prec + t_sens);
}

Mask largest_connected_component(const Mask& mask) {
  const std::int64_t n = mask.shape.voxels();
  std::vector<std::int32_t> label(n, -1);
  std::int32_t next_label = 0;
  std::int64_t best_size = 0;
  std::int32_t best_label = -1;
  std::vector<std::int64_t> stack;
  const auto& t = tables();
  for (int z = 0; z < mask.shape.z; ++z)
    for (int y = 0; y < mask.shape.y; ++y)
      for (int x = 0; x < mask.shape.x; ++x) {
        const std::int64_t start = mask.index(z, y, x);
        if (!mask.v[start] || label[start] >= 0) continue;
        const std::int32_t lab = next_label++;
        std::int64_t size = 0;
        stack.clear();
        stack.push_back(start);
        label[start] = lab;
        while (!stack.empty()) {
          const std::int64_t idx = stack.back();
          stack.pop_back();
          ++size;
          const int cz = static_cast<int>(idx / (static_cast<std::int64_t>(mask.shape.y) * mask.shape.x));
          const int cy = static_cast<int>((idx / mask.shape.x) % mask.shape.y);
          const int cx = static_cast<int>(idx % mask.shape.x);
          for (int i = 0; i < 26; ++i) {
            const int nz = cz + t.offset[i][0], ny = cy + t.offset[i][1],
                      nx = cx + t.offset[i][2];
            if (!mask.in_bounds(nz, ny, nx)) continue;
            const std::int64_t nidx = mask.index(nz, ny, nx);
            if (mask.v[nidx] && label[nidx] < 0) {
              label[nidx] = lab;
              stack.push_back(nidx);
            }
          }
        }
        // Raster-first seed wins ties because only strictly larger replaces.
        if (size > best_size) {
          best_size = size;
          best_label = lab;
        }
      }
  Mask out(mask.shape, 0, mask.spacing);
  if (best_label >= 0)
    for (std::int64_t i = 0; i < n; ++i)
      out.v[i] = label[i] == best_label ? 1 : 0;
  return out;
}

MetricRecord evaluate_pair(const Mask& pred, const Mask& gt,
                           const std::string& image_id,
                           const std::string& dataset_id) {
  MetricRecord r;
  r.image_id = image_id;
  r.dataset_id = dataset_id;
  r.sensitivity = sensitivity(pred, gt);
  r.precision = precision(pred, gt);
  r.dice = dice(pred, gt);
  r.cldice = cl_dice(pred, gt);
  return r;
}

}  // namespace vesselseg
