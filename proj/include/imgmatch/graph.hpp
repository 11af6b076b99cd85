#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "imgmatch/tape.hpp"
#include "imgmatch/tensor.hpp"

namespace imgmatch::graph {

using numcore::Tape;
using numcore::Tensor;
using numcore::Tensor64;
using numcore::Var;

// Binary h x w region belonging to one persistent identity.
struct CharacterMask {
  int identity = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> grid;  // row-major, values 0/1

  static CharacterMask zeros(int identity, std::size_t height,
                             std::size_t width);

  std::uint8_t& at(std::size_t y, std::size_t x) { return grid[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const {
    return grid[y * width + x];
  }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  // Flat indices (y * width + x) of the set cells, ascending.
  std::vector<std::size_t> indices() const;
  // Mean column of the set cells, normalized by width. NaN when empty.
  double centroid_x() const;

  friend bool operator==(const CharacterMask&, const CharacterMask&) = default;
};

struct InterpResult {
  CharacterMask mask;
  bool empty_warning = false;
};

// Any-pooling resize: an output cell is set iff any input cell in its cover
// box is set. Cover of output row oy is input rows
// [floor(oy*H/h), ceil((oy+1)*H/h)), likewise for columns.
InterpResult interp_mask(const CharacterMask& mask, std::size_t height,
                         std::size_t width);

// Number of set source cells inside each output cell's cover box.
struct MaskCoverage {
  int identity = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> counts;
};

MaskCoverage coverage(const CharacterMask& mask, std::size_t height,
                      std::size_t width);

// Gives each contested cell to the identity with the most covered source
// cells; ties go to the smaller identity label.
std::vector<CharacterMask> resolve_overlaps(
    std::span<const MaskCoverage> coverages);

// interp_mask + resolve_overlaps for one frame's masks.
std::vector<CharacterMask> downsample_masks(
    std::span<const CharacterMask> masks, std::size_t height,
    std::size_t width);

// Reorders masks by ascending centroid x (ties: smaller identity).
std::vector<CharacterMask> order_left_to_right(
    std::span<const CharacterMask> masks);

struct FeatureMap {
  Tensor values;  // c x h x w
  int layer = 1;

  std::size_t channels() const { return values.dim(0); }
  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
};

void validate_feature_map(const FeatureMap& f);

// (h*w) x c token matrix; token p = y * w + x.
Tensor64 to_tokens(const Tensor& chw);
Tensor64 to_tokens(const Tensor64& chw);
Tensor64 from_tokens(const Tensor64& tokens, std::size_t height,
                     std::size_t width);

enum class MqaMode { kFast, kPairwise };

struct MqaParams {
  std::size_t d = 1;
  Tensor wq;  // c x d, no bias
  Tensor wk;  // c x d, no bias
  double gamma = 1e-8;
  bool background_mask_enabled = false;
  MqaMode mode = MqaMode::kFast;

  void validate(std::size_t channels) const;
};

struct MatchConfig {
  std::vector<MqaParams> layers;  // one per matched layer; N = layers.size()
};

struct AttentionResult {
  Tensor64 attention;          // query tokens x key tokens
  std::vector<double> scores;  // S_i for each reference i
};

// node_i = f (.) mask_i over all channels. When r_all is given it receives
// the sum of the nodes.
std::vector<FeatureMap> build_nodes(const FeatureMap& f,
                                    std::span<const CharacterMask> masks,
                                    FeatureMap* r_all = nullptr);

// Mask-query attention for one generated node against one key source.
// scores[i] sums attention over query rows v_g and key columns v_r[i].
AttentionResult mqa_scores(const FeatureMap& g_node,
                           const FeatureMap& key_source,
                           const MqaParams& params,
                           std::span<const std::size_t> v_g,
                           std::span<const std::vector<std::size_t>> v_r);

// w_i = S_i / (sum S + gamma)
std::vector<double> edge_weights(std::span<const double> scores,
                                 double gamma);

// gen identity -> ref identity
using GroundTruth = std::map<int, int>;

struct IdentityMatchingGraph {
  int layer = 1;
  std::vector<int> ref_ids;  // column order (left to right)
  std::vector<int> gen_ids;  // row order
  Tensor64 weights;          // n x m, [j][i] = w(r_i, g_j)
  std::vector<std::size_t> ground_truth;  // j -> i
  std::vector<int> dropped_gen_ids;       // empty after interpolation

  std::size_t m() const { return ref_ids.size(); }
  std::size_t n() const { return gen_ids.size(); }
  bool empty() const { return gen_ids.empty(); }
  double weight(std::size_t j, std::size_t i) const {
    return weights.at(j, i);
  }
};

struct Consistency {
  double value = 0.0;
  bool degenerate = false;
};

// Masks must already be at the feature resolutions and overlap-free;
// masks_ref is taken as the left-to-right column order.
IdentityMatchingGraph build_img(const FeatureMap& f_ref,
                                const FeatureMap& f_gen,
                                std::span<const CharacterMask> masks_ref,
                                std::span<const CharacterMask> masks_gen,
                                const GroundTruth& gt,
                                const MqaParams& params);

// Scalar-loop reference implementation of the same construction. Test use.
IdentityMatchingGraph naive_oracle_img(
    const FeatureMap& f_ref, const FeatureMap& f_gen,
    std::span<const CharacterMask> masks_ref,
    std::span<const CharacterMask> masks_gen, const GroundTruth& gt,
    const MqaParams& params);

Consistency consistency_score(const IdentityMatchingGraph& img);

// -(1/N) sum C over layers.
double matching_loss(std::span<const IdentityMatchingGraph> graphs);
double matching_loss(std::span<const double> consistencies);

// Differentiable construction. Token inputs are (h*w) x c nodes, projections
// c x d nodes.
struct TapeFeatures {
  Var tokens;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct TapeProjections {
  Var wq;
  Var wk;
  std::size_t d = 1;
  double gamma = 1e-8;
  bool background_mask_enabled = false;
  MqaMode mode = MqaMode::kFast;
};

struct TapeGraph {
  IdentityMatchingGraph graph;          // values
  std::vector<std::vector<Var>> weights;  // [j][i]
  Var consistency;                        // valid unless empty or degenerate
  bool degenerate = false;
};

TapeGraph build_img_on_tape(Tape& tape, const TapeFeatures& ref,
                            const TapeFeatures& gen,
                            const TapeProjections& proj,
                            std::span<const CharacterMask> masks_ref,
                            std::span<const CharacterMask> masks_gen,
                            const GroundTruth& gt, int layer = 1);

// Sum of scalar nodes in ascending value order, so the result does not
// depend on the order they are passed in.
Var sum_scalars(Tape& tape, std::vector<Var> terms);

}  // namespace imgmatch::graph
