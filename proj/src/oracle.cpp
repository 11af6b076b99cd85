// Scalar-loop reference for build_img. Shares no intermediate code with the
// tape path beyond the input types.
#include <algorithm>
#include <cmath>
#include <limits>

#include "imgmatch/graph.hpp"

namespace imgmatch::graph {

namespace {

using Grid = std::vector<std::vector<double>>;  // [token][channel]

Grid masked_tokens(const FeatureMap& f, const CharacterMask& mask) {
  const std::size_t c = f.channels();
  const std::size_t hw = f.height() * f.width();
  Grid out(hw, std::vector<double>(c, 0.0));
  for (std::size_t p = 0; p < hw; ++p) {
    if (mask.grid[p] == 0) continue;
    for (std::size_t ch = 0; ch < c; ++ch)
      out[p][ch] = static_cast<double>(f.values[ch * hw + p]);
  }
  return out;
}

Grid project(const Grid& tokens, const Tensor& w, std::size_t d) {
  const std::size_t c = w.dim(0);
  Grid out(tokens.size(), std::vector<double>(d, 0.0));
  for (std::size_t p = 0; p < tokens.size(); ++p)
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch)
        acc += tokens[p][ch] * static_cast<double>(w.at(ch, k));
      out[p][k] = acc;
    }
  return out;
}

// Sum over rows p in query set, columns q in `cols`, of the attention of
// query p over the enabled key columns.
double aggregate(const Grid& queries, const Grid& keys, std::size_t d,
                 const std::vector<std::size_t>& query_set,
                 const std::vector<std::size_t>& cols,
                 const std::vector<bool>& enabled) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  double total = 0.0;
  for (std::size_t p : query_set) {
    std::vector<double> logit(keys.size(), 0.0);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < keys.size(); ++q) {
      if (!enabled[q]) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += queries[p][k] * keys[q][k];
      logit[q] = dot * inv;
      top = std::max(top, logit[q]);
    }
    double z = 0.0;
    for (std::size_t q = 0; q < keys.size(); ++q)
      if (enabled[q]) z += std::exp(logit[q] - top);
    double row = 0.0;
    for (std::size_t q : cols)
      if (enabled[q]) row += std::exp(logit[q] - top) / z;
    total += row;
  }
  return total;
}

double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

IdentityMatchingGraph naive_oracle_img(
    const FeatureMap& f_ref, const FeatureMap& f_gen,
    std::span<const CharacterMask> masks_ref,
    std::span<const CharacterMask> masks_gen, const GroundTruth& gt,
    const MqaParams& params) {
  params.validate(f_ref.channels());
  const std::size_t m = masks_ref.size();
  if (masks_gen.size() > m) {
    fail(ErrorKind::kPrecondition, "more generated than reference characters");
  }
  const std::size_t hw_r = f_ref.height() * f_ref.width();
  const std::size_t c = f_ref.channels();

  IdentityMatchingGraph g;
  g.layer = f_gen.layer;
  std::vector<std::vector<std::size_t>> v_r(m);
  for (std::size_t i = 0; i < m; ++i) {
    g.ref_ids.push_back(masks_ref[i].identity);
    for (std::size_t p = 0; p < hw_r; ++p)
      if (masks_ref[i].grid[p] != 0) v_r[i].push_back(p);
  }

  std::vector<Grid> ref_nodes;
  for (const CharacterMask& mask : masks_ref)
    ref_nodes.push_back(masked_tokens(f_ref, mask));
  Grid r_all(hw_r, std::vector<double>(c, 0.0));
  for (const Grid& node : ref_nodes)
    for (std::size_t p = 0; p < hw_r; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) r_all[p][ch] += node[p][ch];

  std::vector<bool> all_on(hw_r, true);
  std::vector<bool> union_on(hw_r, false);
  for (const auto& cols : v_r)
    for (std::size_t q : cols) union_on[q] = true;

  std::vector<std::vector<double>> rows;
  for (const CharacterMask& mask : masks_gen) {
    std::vector<std::size_t> v_g;
    for (std::size_t p = 0; p < mask.grid.size(); ++p)
      if (mask.grid[p] != 0) v_g.push_back(p);
    if (v_g.empty()) {
      g.dropped_gen_ids.push_back(mask.identity);
      continue;
    }
    g.gen_ids.push_back(mask.identity);
    const int target = gt.at(mask.identity);
    for (std::size_t i = 0; i < m; ++i)
      if (g.ref_ids[i] == target) g.ground_truth.push_back(i);

    const Grid queries = project(masked_tokens(f_gen, mask), params.wq, params.d);
    std::vector<double> s(m, 0.0);
    if (params.mode == MqaMode::kFast) {
      const Grid keys = project(r_all, params.wk, params.d);
      const auto& enabled = params.background_mask_enabled ? union_on : all_on;
      for (std::size_t i = 0; i < m; ++i)
        if (!v_r[i].empty())
          s[i] = aggregate(queries, keys, params.d, v_g, v_r[i], enabled);
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        if (v_r[i].empty()) continue;
        const Grid keys = project(ref_nodes[i], params.wk, params.d);
        std::vector<bool> own(hw_r, false);
        for (std::size_t q : v_r[i]) own[q] = true;
        const auto& enabled = params.background_mask_enabled ? own : all_on;
        s[i] = aggregate(queries, keys, params.d, v_g, v_r[i], enabled);
      }
    }
    const double denom = sorted_sum(s) + params.gamma;
    std::vector<double> w(m);
    for (std::size_t i = 0; i < m; ++i) w[i] = s[i] / denom;
    rows.push_back(std::move(w));
  }

  if (!rows.empty()) {
    g.weights = Tensor64({rows.size(), m});
    for (std::size_t j = 0; j < rows.size(); ++j)
      for (std::size_t i = 0; i < m; ++i) g.weights.at(j, i) = rows[j][i];
  }
  return g;
}

}  // namespace imgmatch::graph
