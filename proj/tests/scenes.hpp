#pragma once

#include <algorithm>
#include <numeric>
#include <random>

#include "imgmatch/graph.hpp"
#include "test_util.hpp"

namespace imgmatch::testing {

struct RandomScene {
  graph::FeatureMap f_ref;
  graph::FeatureMap f_gen;
  std::vector<graph::CharacterMask> masks_ref;
  std::vector<graph::CharacterMask> masks_gen;
  graph::GroundTruth gt;
  graph::MqaParams params;
};

// Vertical strips spanning rows [1, h-1). Equal widths when `equal` is set,
// otherwise random widths within each slot.
inline std::vector<graph::CharacterMask> strip_masks(
    std::size_t m, std::size_t h, std::size_t w, bool equal,
    std::mt19937_64& rng, const std::vector<int>& ids) {
  std::vector<graph::CharacterMask> out;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t lo = k * w / m;
    const std::size_t hi = (k + 1) * w / m;
    std::size_t width = hi - lo > 1 ? hi - lo - 1 : 1;
    if (!equal) width = 1 + rng() % width;
    auto mask = graph::CharacterMask::zeros(ids[k], h, w);
    for (std::size_t y = 1; y + 1 < h; ++y)
      for (std::size_t x = lo; x < lo + width; ++x) mask.at(y, x) = 1;
    out.push_back(std::move(mask));
  }
  return out;
}

inline RandomScene random_scene(std::uint64_t seed, std::size_t m,
                                std::size_t h, std::size_t w, std::size_t c,
                                std::size_t d, bool equal_masks,
                                std::size_t n = 0) {
  std::mt19937_64 rng(seed);
  if (n == 0) n = m;
  RandomScene s;
  s.f_ref = {random_normal({c, h, w}, rng), 1};
  s.f_gen = {random_normal({c, h, w}, rng), 1};
  std::vector<int> ref_ids(m);
  std::iota(ref_ids.begin(), ref_ids.end(), 0);
  std::vector<int> gen_ids = ref_ids;
  std::shuffle(gen_ids.begin(), gen_ids.end(), rng);
  s.masks_ref = strip_masks(m, h, w, equal_masks, rng, ref_ids);
  auto gen = strip_masks(m, h, w, equal_masks, rng, gen_ids);
  s.masks_gen.assign(gen.begin(), gen.begin() + static_cast<long>(n));
  for (const auto& mask : s.masks_gen) s.gt[mask.identity] = mask.identity;
  s.params.d = d;
  const double sd = 1.0 / std::sqrt(static_cast<double>(c));
  s.params.wq = random_normal({c, d}, rng, sd);
  s.params.wk = random_normal({c, d}, rng, sd);
  return s;
}

}  // namespace imgmatch::testing
