#include "imgmatch/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "imgmatch/error.hpp"

namespace imgmatch::sampling {

std::vector<int> order_signature(const CharacterPositions& p) {
  if (p.entries.empty()) {
    fail(ErrorKind::kDomain,
         "frame " + std::to_string(p.frame) + " has no characters");
  }
  std::set<int> seen;
  for (const auto& [id, cx] : p.entries) {
    if (!std::isfinite(cx)) {
      fail(ErrorKind::kDomain, "non-finite centroid in frame " +
                                   std::to_string(p.frame));
    }
    if (!seen.insert(id).second) {
      fail(ErrorKind::kDomain, "duplicate identity " + std::to_string(id) +
                                   " in frame " + std::to_string(p.frame));
    }
  }
  auto entries = p.entries;
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.first);
  return out;
}

bool PairIndex::is_swap(const FramePair& p) const {
  return std::binary_search(swap_pairs.begin(), swap_pairs.end(), p);
}

PairIndex classify_pairs(std::span<const CharacterPositions> positions,
                         const PairPolicy& policy) {
  struct Frame {
    int index;
    std::set<int> ids;
    std::vector<int> signature;
  };
  std::vector<Frame> frames;
  for (const CharacterPositions& p : positions) {
    Frame f{p.frame, {}, order_signature(p)};
    f.ids.insert(f.signature.begin(), f.signature.end());
    frames.push_back(std::move(f));
  }

  PairIndex index;
  for (const Frame& a : frames) {
    for (const Frame& b : frames) {
      if (&a == &b || a.ids != b.ids) continue;
      const int gap = std::abs(a.index - b.index);
      if (gap < policy.min_gap) continue;
      if (policy.max_gap > 0 && gap > policy.max_gap) continue;
      index.all_pairs.push_back({a.index, b.index});
      if (a.signature != b.signature)
        index.swap_pairs.push_back({a.index, b.index});
    }
  }
  std::sort(index.all_pairs.begin(), index.all_pairs.end());
  std::sort(index.swap_pairs.begin(), index.swap_pairs.end());
  index.warning = index.all_pairs.empty();
  return index;
}

void SamplerConfig::validate() const {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    fail(ErrorKind::kDomain, "rho must lie in [0, 1], got " + std::to_string(rho));
  }
}

Draw sample_pair(const PairIndex& index, const SamplerConfig& config,
                 std::mt19937_64& rng, bool* fell_back) {
  config.validate();
  if (index.all_pairs.empty()) {
    fail(ErrorKind::kDomain, "cannot sample from an empty pair index");
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Draw d;
  d.swap_branch = coin(rng) < config.rho;
  if (d.swap_branch && index.swap_pairs.empty()) {
    d.swap_branch = false;
    if (fell_back != nullptr) *fell_back = true;
  }
  const auto& pool = d.swap_branch ? index.swap_pairs : index.all_pairs;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  d.pair = pool[pick(rng)];
  d.is_swap = d.swap_branch || index.is_swap(d.pair);
  return d;
}

PairSampler::PairSampler(PairIndex index, SamplerConfig config)
    : index_(std::move(index)), config_(config), rng_(config.seed) {
  config_.validate();
  if (index_.all_pairs.empty()) {
    fail(ErrorKind::kDomain, "cannot sample from an empty pair index");
  }
}

Draw PairSampler::next() {
  ++draws_;
  return sample_pair(index_, config_, rng_, &fell_back_);
}

SamplingStats run_draws(const PairIndex& index, const SamplerConfig& config,
                        std::size_t draws, bool* fell_back) {
  PairSampler sampler(index, config);
  SamplingStats stats;
  for (std::size_t k = 0; k < draws; ++k)
    if (sampler.next().is_swap) ++stats.swap_draws;
  stats.draws = draws;
  stats.swap_fraction =
      draws == 0 ? 0.0
                 : static_cast<double>(stats.swap_draws) /
                       static_cast<double>(draws);
  if (fell_back != nullptr) *fell_back = sampler.fell_back();
  return stats;
}

}  // namespace imgmatch::sampling
