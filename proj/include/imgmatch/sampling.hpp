#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace imgmatch::sampling {

struct CharacterPositions {
  int frame = 0;
  std::vector<std::pair<int, double>> entries;  // (identity, centroid x in [0,1])

  friend bool operator==(const CharacterPositions&,
                         const CharacterPositions&) = default;
};

// Identities by ascending centroid x; ties go to the smaller identity.
std::vector<int> order_signature(const CharacterPositions& p);

struct PairPolicy {
  int min_gap = 1;
  int max_gap = 0;  // 0: unlimited
};

struct FramePair {
  int a = 0;
  int b = 0;
  friend bool operator==(const FramePair&, const FramePair&) = default;
  friend auto operator<=>(const FramePair&, const FramePair&) = default;
};

struct PairIndex {
  std::vector<FramePair> swap_pairs;
  std::vector<FramePair> all_pairs;
  bool warning = false;  // fewer than two usable frames

  bool is_swap(const FramePair& p) const;
};

// Ordered pairs (a, b), a != b, within one clip whose frames carry the same
// identity set. A pair is a swap pair iff the left-to-right orders differ.
PairIndex classify_pairs(std::span<const CharacterPositions> positions,
                         const PairPolicy& policy = {});

struct SamplerConfig {
  double rho = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Draw {
  FramePair pair;
  bool swap_branch = false;  // drawn from the pre-classified swap list
  bool is_swap = false;      // pair is a swap pair, whichever branch
};

// With probability rho draw uniformly from swap pairs, else uniformly from
// all pairs. Falls back to all pairs (and sets fell_back) when there are no
// swap pairs.
Draw sample_pair(const PairIndex& index, const SamplerConfig& config,
                 std::mt19937_64& rng, bool* fell_back = nullptr);

// Owns its RNG state; deterministic given the seed and draw count.
class PairSampler {
 public:
  PairSampler(PairIndex index, SamplerConfig config);

  Draw next();
  bool fell_back() const noexcept { return fell_back_; }
  std::size_t draws() const noexcept { return draws_; }
  const PairIndex& index() const noexcept { return index_; }

 private:
  PairIndex index_;
  SamplerConfig config_;
  std::mt19937_64 rng_;
  std::size_t draws_ = 0;
  bool fell_back_ = false;
};

struct SamplingStats {
  std::size_t draws = 0;
  std::size_t swap_draws = 0;
  double swap_fraction = 0.0;
};

SamplingStats run_draws(const PairIndex& index, const SamplerConfig& config,
                        std::size_t draws, bool* fell_back = nullptr);

}  // namespace imgmatch::sampling
