#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "imgmatch/graph.hpp"

namespace imgmatch::graph {

CharacterMask CharacterMask::zeros(int identity, std::size_t height,
                                   std::size_t width) {
  if (height == 0 || width == 0) {
    fail(ErrorKind::kShape, "mask dimensions must be >= 1");
  }
  CharacterMask m;
  m.identity = identity;
  m.height = height;
  m.width = width;
  m.grid.assign(height * width, 0);
  return m;
}

std::size_t CharacterMask::count() const {
  return static_cast<std::size_t>(
      std::count_if(grid.begin(), grid.end(), [](auto v) { return v != 0; }));
}

std::vector<std::size_t> CharacterMask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < grid.size(); ++p)
    if (grid[p] != 0) out.push_back(p);
  return out;
}

double CharacterMask::centroid_x() const {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (at(y, x) != 0) {
        total += static_cast<double>(x) + 0.5;
        ++n;
      }
    }
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return total / static_cast<double>(n) / static_cast<double>(width);
}

namespace {

struct Span {
  std::size_t lo;
  std::size_t hi;
};

Span cover(std::size_t out_index, std::size_t source, std::size_t target) {
  return {out_index * source / target,
          ((out_index + 1) * source + target - 1) / target};
}

}  // namespace

MaskCoverage coverage(const CharacterMask& mask, std::size_t height,
                      std::size_t width) {
  if (height == 0 || width == 0) {
    fail(ErrorKind::kShape, "interpolation target must be >= 1x1");
  }
  MaskCoverage out;
  out.identity = mask.identity;
  out.height = height;
  out.width = width;
  out.counts.assign(height * width, 0);
  for (std::size_t oy = 0; oy < height; ++oy) {
    const Span ys = cover(oy, mask.height, height);
    for (std::size_t ox = 0; ox < width; ++ox) {
      const Span xs = cover(ox, mask.width, width);
      std::size_t n = 0;
      for (std::size_t y = ys.lo; y < ys.hi; ++y)
        for (std::size_t x = xs.lo; x < xs.hi; ++x) n += mask.at(y, x) != 0;
      out.counts[oy * width + ox] = n;
    }
  }
  return out;
}

InterpResult interp_mask(const CharacterMask& mask, std::size_t height,
                         std::size_t width) {
  const MaskCoverage cov = coverage(mask, height, width);
  InterpResult r;
  r.mask = CharacterMask::zeros(mask.identity, height, width);
  for (std::size_t p = 0; p < cov.counts.size(); ++p)
    r.mask.grid[p] = cov.counts[p] > 0 ? 1 : 0;
  r.empty_warning = r.mask.empty();
  return r;
}

std::vector<CharacterMask> resolve_overlaps(
    std::span<const MaskCoverage> coverages) {
  std::vector<CharacterMask> out;
  if (coverages.empty()) return out;
  const std::size_t h = coverages.front().height;
  const std::size_t w = coverages.front().width;
  for (const MaskCoverage& c : coverages) {
    if (c.height != h || c.width != w) {
      fail(ErrorKind::kShape, "resolve_overlaps: masks differ in resolution");
    }
    out.push_back(CharacterMask::zeros(c.identity, h, w));
  }
  for (std::size_t p = 0; p < h * w; ++p) {
    std::size_t best = coverages.size();
    for (std::size_t k = 0; k < coverages.size(); ++k) {
      const std::size_t n = coverages[k].counts[p];
      if (n == 0) continue;
      if (best == coverages.size() || n > coverages[best].counts[p] ||
          (n == coverages[best].counts[p] &&
           coverages[k].identity < coverages[best].identity)) {
        best = k;
      }
    }
    if (best != coverages.size()) out[best].grid[p] = 1;
  }
  return out;
}

std::vector<CharacterMask> downsample_masks(
    std::span<const CharacterMask> masks, std::size_t height,
    std::size_t width) {
  std::vector<MaskCoverage> cov;
  cov.reserve(masks.size());
  for (const CharacterMask& m : masks) cov.push_back(coverage(m, height, width));
  return resolve_overlaps(cov);
}

std::vector<CharacterMask> order_left_to_right(
    std::span<const CharacterMask> masks) {
  std::vector<CharacterMask> out(masks.begin(), masks.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const CharacterMask& a, const CharacterMask& b) {
                     // Empty masks sort last.
                     auto key = [](const CharacterMask& m) {
                       const double c = m.centroid_x();
                       return std::isnan(c)
                                  ? std::numeric_limits<double>::infinity()
                                  : c;
                     };
                     const double ca = key(a);
                     const double cb = key(b);
                     if (ca != cb) return ca < cb;
                     return a.identity < b.identity;
                   });
  return out;
}

}  // namespace imgmatch::graph
