#include "imgmatch/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace imgmatch::graph {

using numcore::Transpose;

void validate_feature_map(const FeatureMap& f) {
  if (f.values.rank() != 3) {
    fail(ErrorKind::kShape, "feature map must be c x h x w, got " +
                                numcore::shape_string(f.values.shape()));
  }
  if (!f.values.all_finite()) {
    fail(ErrorKind::kNumeric, "feature map contains non-finite values");
  }
}

namespace {

template <typename T>
Tensor64 tokens_impl(const numcore::BasicTensor<T>& chw) {
  if (chw.rank() != 3) {
    fail(ErrorKind::kShape, "expected c x h x w tensor, got " +
                                numcore::shape_string(chw.shape()));
  }
  const std::size_t c = chw.dim(0);
  const std::size_t hw = chw.dim(1) * chw.dim(2);
  Tensor64 out({hw, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p)
      out.at(p, ch) = static_cast<double>(chw[ch * hw + p]);
  return out;
}

}  // namespace

Tensor64 to_tokens(const Tensor& chw) { return tokens_impl(chw); }
Tensor64 to_tokens(const Tensor64& chw) { return tokens_impl(chw); }

Tensor64 from_tokens(const Tensor64& tokens, std::size_t height,
                     std::size_t width) {
  const std::size_t hw = height * width;
  if (tokens.rank() != 2 || tokens.dim(0) != hw) {
    fail(ErrorKind::kShape, "token matrix " +
                                numcore::shape_string(tokens.shape()) +
                                " does not fit " + std::to_string(height) +
                                "x" + std::to_string(width));
  }
  const std::size_t c = tokens.dim(1);
  Tensor64 out({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = tokens.at(p, ch);
  return out;
}

void MqaParams::validate(std::size_t channels) const {
  if (d < 1) fail(ErrorKind::kDomain, "MQA dimension d must be >= 1");
  if (!(gamma > 0.0)) fail(ErrorKind::kDomain, "MQA gamma must be > 0");
  const numcore::Shape want{channels, d};
  if (wq.shape() != want || wk.shape() != want) {
    fail(ErrorKind::kShape,
         "MQA projections must be " + numcore::shape_string(want) + ", got " +
             numcore::shape_string(wq.shape()) + " and " +
             numcore::shape_string(wk.shape()));
  }
}

std::vector<FeatureMap> build_nodes(const FeatureMap& f,
                                    std::span<const CharacterMask> masks,
                                    FeatureMap* r_all) {
  validate_feature_map(f);
  const std::size_t c = f.channels();
  const std::size_t hw = f.height() * f.width();
  std::vector<FeatureMap> nodes;
  nodes.reserve(masks.size());
  for (const CharacterMask& m : masks) {
    if (m.height != f.height() || m.width != f.width()) {
      fail(ErrorKind::kShape, "mask " + std::to_string(m.identity) + " is " +
                                  std::to_string(m.height) + "x" +
                                  std::to_string(m.width) +
                                  " but features are " +
                                  std::to_string(f.height()) + "x" +
                                  std::to_string(f.width()));
    }
    FeatureMap node{Tensor(f.values.shape()), f.layer};
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p)
        node.values[ch * hw + p] =
            f.values[ch * hw + p] * static_cast<float>(m.grid[p]);
    nodes.push_back(std::move(node));
  }
  if (r_all != nullptr) {
    *r_all = FeatureMap{Tensor(f.values.shape()), f.layer};
    for (const FeatureMap& node : nodes)
      for (std::size_t k = 0; k < node.values.size(); ++k)
        r_all->values[k] += node.values[k];
  }
  return nodes;
}

namespace {

struct TapeAttention {
  Var attention;
  std::vector<Var> scores;
};

// q: queries (hw_g x d), k: keys (hw_r x d).
TapeAttention attend(Tape& tape, Var q, Var k, std::size_t d,
                     const std::vector<bool>* column_mask,
                     std::span<const std::size_t> v_g,
                     std::span<const std::vector<std::size_t>> v_r) {
  Var logits = tape.scale(tape.matmul(q, k, Transpose::kB),
                          1.0 / std::sqrt(static_cast<double>(d)));
  TapeAttention out;
  out.attention = tape.row_softmax(logits, column_mask);
  const std::vector<std::size_t> rows(v_g.begin(), v_g.end());
  for (const auto& cols : v_r) {
    if (cols.empty()) {
      out.scores.push_back(tape.constant(Tensor64::scalar(0.0)));
    } else {
      out.scores.push_back(tape.masked_sum(out.attention, rows, cols));
    }
  }
  return out;
}

std::vector<bool> union_columns(std::span<const std::vector<std::size_t>> v_r,
                                std::size_t tokens) {
  std::vector<bool> mask(tokens, false);
  for (const auto& cols : v_r)
    for (std::size_t q : cols) mask[q] = true;
  return mask;
}

Tensor64 row_mask_tensor(const CharacterMask& m, std::size_t channels) {
  Tensor64 out({m.grid.size(), channels});
  for (std::size_t p = 0; p < m.grid.size(); ++p)
    if (m.grid[p] != 0)
      for (std::size_t ch = 0; ch < channels; ++ch) out.at(p, ch) = 1.0;
  return out;
}

void check_mask_resolution(std::span<const CharacterMask> masks,
                           std::size_t h, std::size_t w, const char* what) {
  for (const CharacterMask& m : masks) {
    if (m.height != h || m.width != w) {
      fail(ErrorKind::kShape,
           std::string(what) + " mask " + std::to_string(m.identity) + " is " +
               std::to_string(m.height) + "x" + std::to_string(m.width) +
               " but features are " + std::to_string(h) + "x" +
               std::to_string(w));
    }
  }
}

}  // namespace

AttentionResult mqa_scores(const FeatureMap& g_node,
                           const FeatureMap& key_source,
                           const MqaParams& params,
                           std::span<const std::size_t> v_g,
                           std::span<const std::vector<std::size_t>> v_r) {
  validate_feature_map(g_node);
  validate_feature_map(key_source);
  if (g_node.channels() != key_source.channels()) {
    fail(ErrorKind::kShape, "query and key feature maps differ in channels");
  }
  params.validate(g_node.channels());
  if (v_g.empty()) fail(ErrorKind::kDomain, "empty generated mask");
  const std::size_t hw_g = g_node.height() * g_node.width();
  const std::size_t hw_r = key_source.height() * key_source.width();
  for (std::size_t p : v_g)
    if (p >= hw_g) fail(ErrorKind::kShape, "query index out of range");
  bool any_ref = false;
  for (const auto& cols : v_r) {
    any_ref = any_ref || !cols.empty();
    for (std::size_t q : cols)
      if (q >= hw_r) fail(ErrorKind::kShape, "key index out of range");
  }
  if (!any_ref) fail(ErrorKind::kDomain, "all reference masks are empty");

  Tape tape;
  Var q = tape.matmul(tape.constant(to_tokens(g_node.values)),
                      tape.constant(params.wq.cast<double>()));
  Var k = tape.matmul(tape.constant(to_tokens(key_source.values)),
                      tape.constant(params.wk.cast<double>()));
  std::vector<bool> mask;
  if (params.background_mask_enabled) mask = union_columns(v_r, hw_r);
  TapeAttention att = attend(tape, q, k, params.d,
                             params.background_mask_enabled ? &mask : nullptr,
                             v_g, v_r);
  AttentionResult out;
  out.attention = att.attention.value();
  for (Var s : att.scores) out.scores.push_back(s.item());
  return out;
}

std::vector<double> edge_weights(std::span<const double> scores,
                                 double gamma) {
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  for (double s : sorted) {
    if (s < 0.0) fail(ErrorKind::kDomain, "affinity scores must be >= 0");
    total += s;
  }
  std::vector<double> w;
  w.reserve(scores.size());
  for (double s : scores) w.push_back(s / (total + gamma));
  return w;
}

Var sum_scalars(Tape& tape, std::vector<Var> terms) {
  if (terms.empty()) return tape.constant(Tensor64::scalar(0.0));
  std::stable_sort(terms.begin(), terms.end(), [](Var a, Var b) {
    return a.item() < b.item();
  });
  Var acc = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) acc = tape.add(acc, terms[k]);
  return acc;
}

TapeGraph build_img_on_tape(Tape& tape, const TapeFeatures& ref,
                            const TapeFeatures& gen,
                            const TapeProjections& proj,
                            std::span<const CharacterMask> masks_ref,
                            std::span<const CharacterMask> masks_gen,
                            const GroundTruth& gt, int layer) {
  const std::size_t m = masks_ref.size();
  if (m == 0) fail(ErrorKind::kPrecondition, "graph needs >= 1 reference");
  if (masks_gen.size() > m) {
    fail(ErrorKind::kPrecondition,
         "more generated characters (" + std::to_string(masks_gen.size()) +
             ") than reference characters (" + std::to_string(m) + ")");
  }
  if (proj.d < 1) fail(ErrorKind::kDomain, "MQA dimension d must be >= 1");
  if (!(proj.gamma > 0.0)) fail(ErrorKind::kDomain, "MQA gamma must be > 0");
  check_mask_resolution(masks_ref, ref.height, ref.width, "reference");
  check_mask_resolution(masks_gen, gen.height, gen.width, "generated");
  const std::size_t c = ref.tokens.shape().at(1);
  if (gen.tokens.shape().at(1) != c) {
    fail(ErrorKind::kShape, "reference and generated features differ in "
                            "channel count");
  }

  TapeGraph out;
  IdentityMatchingGraph& g = out.graph;
  g.layer = layer;
  for (const CharacterMask& mask : masks_ref) g.ref_ids.push_back(mask.identity);
  {
    std::set<int> seen(g.ref_ids.begin(), g.ref_ids.end());
    if (seen.size() != m) {
      fail(ErrorKind::kPrecondition, "duplicate reference identities");
    }
    std::set<int> targets;
    for (const CharacterMask& mask : masks_gen) {
      auto it = gt.find(mask.identity);
      if (it == gt.end()) {
        fail(ErrorKind::kPrecondition,
             "no ground-truth match for generated identity " +
                 std::to_string(mask.identity));
      }
      if (!seen.contains(it->second)) {
        fail(ErrorKind::kPrecondition,
             "ground truth maps to unknown reference identity " +
                 std::to_string(it->second));
      }
      if (!targets.insert(it->second).second) {
        fail(ErrorKind::kPrecondition, "ground truth is not injective");
      }
    }
  }

  std::vector<std::vector<std::size_t>> v_r;
  bool any_ref = false;
  for (const CharacterMask& mask : masks_ref) {
    v_r.push_back(mask.indices());
    any_ref = any_ref || !v_r.back().empty();
  }
  if (!any_ref) fail(ErrorKind::kDomain, "all reference masks are empty");

  std::vector<const CharacterMask*> kept;
  for (const CharacterMask& mask : masks_gen) {
    if (mask.empty()) {
      g.dropped_gen_ids.push_back(mask.identity);
    } else {
      kept.push_back(&mask);
      g.gen_ids.push_back(mask.identity);
      const int target = gt.at(mask.identity);
      g.ground_truth.push_back(static_cast<std::size_t>(
          std::find(g.ref_ids.begin(), g.ref_ids.end(), target) -
          g.ref_ids.begin()));
    }
  }
  const std::size_t n = kept.size();
  if (n == 0) {
    g.weights = Tensor64();
    return out;
  }

  // Nodes: r_i = f_ref (.) M_i, g_j = f_gen (.) M_j.
  std::vector<Var> r_nodes;
  for (const CharacterMask& mask : masks_ref)
    r_nodes.push_back(
        tape.mul(ref.tokens, tape.constant(row_mask_tensor(mask, c))));

  const std::size_t hw_r = ref.height * ref.width;
  std::vector<Var> fast_keys;
  std::vector<bool> fast_mask;
  std::vector<Var> pair_keys;
  std::vector<std::vector<bool>> pair_masks;
  if (proj.mode == MqaMode::kFast) {
    Var r_all = r_nodes.front();
    for (std::size_t i = 1; i < m; ++i) r_all = tape.add(r_all, r_nodes[i]);
    fast_keys.push_back(tape.matmul(r_all, proj.wk));
    if (proj.background_mask_enabled) fast_mask = union_columns(v_r, hw_r);
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      pair_keys.push_back(tape.matmul(r_nodes[i], proj.wk));
      pair_masks.push_back(
          union_columns(std::span(v_r).subspan(i, 1), hw_r));
    }
  }

  g.weights = Tensor64({n, m});
  out.weights.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::vector<std::size_t> v_g = kept[j]->indices();
    Var g_node = tape.mul(gen.tokens, tape.constant(row_mask_tensor(*kept[j], c)));
    Var q = tape.matmul(g_node, proj.wq);

    std::vector<Var> scores;
    if (proj.mode == MqaMode::kFast) {
      scores = attend(tape, q, fast_keys.front(), proj.d,
                      proj.background_mask_enabled ? &fast_mask : nullptr,
                      v_g, v_r)
                   .scores;
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        if (v_r[i].empty()) {
          scores.push_back(tape.constant(Tensor64::scalar(0.0)));
          continue;
        }
        scores.push_back(
            attend(tape, q, pair_keys[i], proj.d,
                   proj.background_mask_enabled ? &pair_masks[i] : nullptr,
                   v_g, std::span(v_r).subspan(i, 1))
                .scores.front());
      }
    }

    Var denom = tape.add(sum_scalars(tape, scores), proj.gamma);
    for (std::size_t i = 0; i < m; ++i) {
      Var w = tape.div(scores[i], denom);
      out.weights[j].push_back(w);
      g.weights.at(j, i) = w.item();
    }
  }

  std::vector<Var> all;
  std::vector<Var> matched;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) all.push_back(out.weights[j][i]);
    matched.push_back(out.weights[j][g.ground_truth[j]]);
  }
  Var total = sum_scalars(tape, all);
  if (total.item() <= 0.0) {
    out.degenerate = true;
    return out;
  }
  out.consistency = tape.div(sum_scalars(tape, matched), total);
  return out;
}

IdentityMatchingGraph build_img(const FeatureMap& f_ref,
                                const FeatureMap& f_gen,
                                std::span<const CharacterMask> masks_ref,
                                std::span<const CharacterMask> masks_gen,
                                const GroundTruth& gt,
                                const MqaParams& params) {
  validate_feature_map(f_ref);
  validate_feature_map(f_gen);
  if (f_ref.channels() != f_gen.channels()) {
    fail(ErrorKind::kShape, "reference and generated features differ in "
                            "channel count");
  }
  params.validate(f_ref.channels());
  Tape tape;
  TapeFeatures ref{tape.constant(to_tokens(f_ref.values)), f_ref.height(),
                   f_ref.width()};
  TapeFeatures gen{tape.constant(to_tokens(f_gen.values)), f_gen.height(),
                   f_gen.width()};
  TapeProjections proj{tape.constant(params.wq.cast<double>()),
                       tape.constant(params.wk.cast<double>()),
                       params.d,
                       params.gamma,
                       params.background_mask_enabled,
                       params.mode};
  return build_img_on_tape(tape, ref, gen, proj, masks_ref, masks_gen, gt,
                           f_gen.layer)
      .graph;
}

Consistency consistency_score(const IdentityMatchingGraph& img) {
  if (img.n() == 0) {
    fail(ErrorKind::kPrecondition, "consistency_score on an empty graph");
  }
  std::vector<double> all;
  std::vector<double> matched;
  for (std::size_t j = 0; j < img.n(); ++j) {
    for (std::size_t i = 0; i < img.m(); ++i) all.push_back(img.weight(j, i));
    matched.push_back(img.weight(j, img.ground_truth[j]));
  }
  std::sort(all.begin(), all.end());
  std::sort(matched.begin(), matched.end());
  double total = 0.0;
  for (double w : all) total += w;
  double hit = 0.0;
  for (double w : matched) hit += w;
  if (total <= 0.0) return {0.0, true};
  return {hit / total, false};
}

double matching_loss(std::span<const double> consistencies) {
  if (consistencies.empty()) {
    fail(ErrorKind::kDomain, "matching_loss needs at least one layer");
  }
  double total = 0.0;
  for (double c : consistencies) total += -c;
  return total / static_cast<double>(consistencies.size());
}

double matching_loss(std::span<const IdentityMatchingGraph> graphs) {
  std::vector<double> cs;
  for (const IdentityMatchingGraph& g : graphs) {
    const Consistency c = consistency_score(g);
    if (c.degenerate) {
      fail(ErrorKind::kPrecondition,
           "matching_loss: degenerate graph at layer " +
               std::to_string(g.layer));
    }
    cs.push_back(c.value);
  }
  return matching_loss(std::span<const double>(cs));
}

}  // namespace imgmatch::graph
