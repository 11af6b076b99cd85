#include "imgmatch/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "imgmatch/error.hpp"
#include "imgmatch/gradcheck.hpp"
#include "imgmatch/io.hpp"
#include "imgmatch/sampling.hpp"

namespace imgmatch::train {

using graph::CharacterMask;
using graph::FeatureMap;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Consecutive skipped draws before training gives up.
constexpr std::size_t kMaxConsecutiveSkips = 1000;

double parse_number(const std::string& key, const std::string& value,
                    std::string_view source) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::kParse, std::string(source) + ": key '" + key +
                                "' expects a number, got '" + value + "'");
  }
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& value,
                             std::string_view source) {
  std::uint64_t v = 0;
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || p != end || value.empty()) {
    fail(ErrorKind::kParse, std::string(source) + ": key '" + key +
                                "' expects a non-negative integer, got '" +
                                value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value,
                std::string_view source) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(ErrorKind::kParse, std::string(source) + ": key '" + key +
                              "' expects true or false, got '" + value + "'");
}

Tensor normal_tensor(numcore::Shape shape, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

Tensor64 tokens_from(const Tensor& chw) { return graph::to_tokens(chw); }

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    fail(ErrorKind::kDomain, "lambda must be >= 0");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) fail(ErrorKind::kDomain, "rho must lie in [0, 1]");
  if (layers < 1) fail(ErrorKind::kDomain, "layers must be >= 1");
  if (steps < 1) fail(ErrorKind::kDomain, "steps must be >= 1");
  if (!(lr > 0.0)) fail(ErrorKind::kDomain, "lr must be positive");
  if (d < 1) fail(ErrorKind::kDomain, "d must be >= 1");
}

TrainConfig parse_config(std::string_view text, std::string_view source,
                         const std::filesystem::path& base_dir) {
  TrainConfig c;
  for (const auto& [key, value] : io::parse_key_values(text, source)) {
    if (key == "lambda") {
      c.lambda = parse_number(key, value, source);
    } else if (key == "rho") {
      c.rho = parse_number(key, value, source);
    } else if (key == "layers") {
      c.layers = parse_unsigned(key, value, source);
    } else if (key == "steps") {
      c.steps = parse_unsigned(key, value, source);
    } else if (key == "lr") {
      c.lr = parse_number(key, value, source);
    } else if (key == "seed") {
      c.seed = parse_unsigned(key, value, source);
    } else if (key == "d") {
      c.d = parse_unsigned(key, value, source);
    } else if (key == "manifest") {
      std::filesystem::path p(value);
      c.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    } else if (key == "background_mask") {
      c.background_mask = parse_bool(key, value, source);
    } else if (key == "mode") {
      if (value == "fast") {
        c.mode = graph::MqaMode::kFast;
      } else if (value == "pairwise") {
        c.mode = graph::MqaMode::kPairwise;
      } else {
        fail(ErrorKind::kParse, std::string(source) +
                                    ": mode must be fast or pairwise, got '" +
                                    value + "'");
      }
    } else {
      fail(ErrorKind::kParse, std::string(source) + ": unknown key '" + key + "'");
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kParse, std::string(source) + ": " + e.what());
  }
  return c;
}

TrainConfig read_config(const std::filesystem::path& path) {
  return parse_config(io::read_file(path), path.string(), path.parent_path());
}

std::string dump_config(const TrainConfig& c) {
  std::vector<std::pair<std::string, std::string>> kv{
      {"lambda", io::format_double(c.lambda)},
      {"rho", io::format_double(c.rho)},
      {"layers", std::to_string(c.layers)},
      {"steps", std::to_string(c.steps)},
      {"lr", io::format_double(c.lr)},
      {"seed", std::to_string(c.seed)},
      {"d", std::to_string(c.d)},
      {"manifest", c.manifest.string()},
      {"background_mask", c.background_mask ? "true" : "false"},
      {"mode", c.mode == graph::MqaMode::kFast ? "fast" : "pairwise"},
  };
  return io::dump_key_values(kv);
}

// ---- model ----

ToyModel ToyModel::init(std::size_t cue_channels, std::size_t channels,
                        std::size_t layers, std::size_t d, std::uint64_t seed) {
  if (cue_channels < 1 || channels < 1 || layers < 1 || d < 1) {
    fail(ErrorKind::kDomain, "model dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  ToyModel m;
  m.generator = normal_tensor({cue_channels, channels}, rng, kInitStddev);
  for (std::size_t l = 0; l < layers; ++l) {
    m.wq.push_back(normal_tensor({channels, d}, rng, kInitStddev));
    m.wk.push_back(normal_tensor({channels, d}, rng, kInitStddev));
  }
  return m;
}

Tensor ToyModel::flatten() const {
  std::vector<float> out(generator.data().begin(), generator.data().end());
  for (std::size_t l = 0; l < layers(); ++l) {
    out.insert(out.end(), wq[l].data().begin(), wq[l].data().end());
    out.insert(out.end(), wk[l].data().begin(), wk[l].data().end());
  }
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

ToyModel ToyModel::unflatten(const Tensor& flat, std::size_t cue_channels,
                             std::size_t channels, std::size_t layers,
                             std::size_t d) {
  const std::size_t expected =
      cue_channels * channels + layers * 2 * channels * d;
  if (flat.rank() != 1 || flat.size() != expected) {
    fail(ErrorKind::kShape, "model tensor has shape " +
                                numcore::shape_string(flat.shape()) +
                                ", expected [" + std::to_string(expected) +
                                "] for this configuration");
  }
  std::size_t off = 0;
  auto take = [&](std::size_t rows, std::size_t cols) {
    std::vector<float> v(flat.data().begin() + static_cast<std::ptrdiff_t>(off),
                         flat.data().begin() + static_cast<std::ptrdiff_t>(off + rows * cols));
    off += rows * cols;
    return Tensor({rows, cols}, std::move(v));
  };
  ToyModel m;
  m.generator = take(cue_channels, channels);
  for (std::size_t l = 0; l < layers; ++l) {
    m.wq.push_back(take(channels, d));
    m.wk.push_back(take(channels, d));
  }
  return m;
}

// ---- losses ----

double diffusion_proxy_loss(const FeatureMap& f_gen, const FeatureMap& target) {
  if (f_gen.values.shape() != target.values.shape()) {
    fail(ErrorKind::kShape, "diffusion_proxy_loss: shapes " +
                                numcore::shape_string(f_gen.values.shape()) +
                                " and " +
                                numcore::shape_string(target.values.shape()) +
                                " differ");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < f_gen.values.size(); ++k) {
    const double d = static_cast<double>(f_gen.values[k]) - target.values[k];
    total += d * d;
  }
  return total / static_cast<double>(f_gen.values.size());
}

double total_loss(double l_diff, double l_match, double lambda) {
  if (!(lambda >= 0.0)) fail(ErrorKind::kDomain, "lambda must be >= 0");
  return l_diff + lambda * l_match;
}

// ---- scene preparation ----

Tensor64 pooling_matrix(std::size_t height, std::size_t width) {
  if (height % 2 != 0 || width % 2 != 0) {
    fail(ErrorKind::kShape, "2x2 pooling needs even dimensions, got " +
                                std::to_string(height) + "x" +
                                std::to_string(width));
  }
  const std::size_t h = height / 2;
  const std::size_t w = width / 2;
  Tensor64 p({h * w, height * width});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
          p.at(y * w + x, (2 * y + dy) * width + 2 * x + dx) = 0.25;
  return p;
}

PreparedScene prepare_scene(const synth::SynthScene& scene, std::size_t layers,
                            std::string name) {
  if (layers < 1) fail(ErrorKind::kDomain, "layers must be >= 1");
  PreparedScene p;
  p.name = std::move(name);
  p.swap = scene.swap;
  p.height = scene.f_ref.height();
  p.width = scene.f_ref.width();
  const std::size_t factor = std::size_t{1} << (layers - 1);
  if (p.height % factor != 0 || p.width % factor != 0) {
    fail(ErrorKind::kShape, std::to_string(layers) + " layers need H and W "
                            "divisible by " + std::to_string(factor) +
                            ", got " + std::to_string(p.height) + "x" +
                            std::to_string(p.width));
  }
  if (scene.cue.height() != p.height || scene.cue.width() != p.width ||
      scene.target_features.values.shape() != scene.f_ref.values.shape()) {
    fail(ErrorKind::kShape, "scene tensors disagree in shape");
  }
  p.cue_tokens = tokens_from(scene.cue.values);
  p.target_tokens = tokens_from(scene.target_features.values);
  p.gt = scene.gt;

  const std::size_t hw = p.height * p.width;
  Tensor64 pool({hw, hw});  // identity at layer 1
  for (std::size_t k = 0; k < hw; ++k) pool.at(k, k) = 1.0;
  std::size_t h = p.height;
  std::size_t w = p.width;
  Tensor64 ref = tokens_from(scene.f_ref.values);
  for (std::size_t l = 0; l < layers; ++l) {
    if (l > 0) {
      const Tensor64 step = pooling_matrix(h, w);
      pool = numcore::matmul(step, pool);
      ref = numcore::matmul(step, ref);
      h /= 2;
      w /= 2;
    }
    p.pool.push_back(pool);
    p.ref_tokens.push_back(ref);
    p.layer_height.push_back(h);
    p.layer_width.push_back(w);
    p.masks_ref.push_back(l == 0 ? scene.masks_ref
                                 : graph::downsample_masks(scene.masks_ref, h, w));
    p.masks_gen.push_back(l == 0 ? scene.masks_gen
                                 : graph::downsample_masks(scene.masks_gen, h, w));
  }
  return p;
}

// ---- forward ----

namespace {

graph::TapeProjections projections(Var wq, Var wk, const TrainConfig& config) {
  graph::TapeProjections proj;
  proj.wq = wq;
  proj.wk = wk;
  proj.d = config.d;
  proj.background_mask_enabled = config.background_mask;
  proj.mode = config.mode;
  return proj;
}

struct LayerMatch {
  std::vector<Var> consistencies;
  std::vector<double> c_layers;
};

LayerMatch match_layers(Tape& tape, Var gen_tokens, const std::vector<Var>& wq,
                        const std::vector<Var>& wk, const PreparedScene& scene,
                        const TrainConfig& config) {
  LayerMatch out;
  for (std::size_t l = 0; l < config.layers; ++l) {
    Var gen_l = l == 0 ? gen_tokens
                       : tape.matmul(tape.constant(scene.pool[l]), gen_tokens);
    graph::TapeFeatures ref{tape.constant(scene.ref_tokens[l]),
                            scene.layer_height[l], scene.layer_width[l]};
    graph::TapeFeatures gen{gen_l, scene.layer_height[l], scene.layer_width[l]};
    const graph::TapeGraph g = graph::build_img_on_tape(
        tape, ref, gen, projections(wq[l], wk[l], config), scene.masks_ref[l],
        scene.masks_gen[l], scene.gt, static_cast<int>(l + 1));
    if (g.graph.empty() || g.degenerate) {
      out.c_layers.push_back(kNaN);
      continue;
    }
    out.c_layers.push_back(g.consistency.item());
    out.consistencies.push_back(g.consistency);
  }
  return out;
}

// -(1/N) sum C over the non-degenerate layers.
Var negative_mean(Tape& tape, const std::vector<Var>& cs) {
  Var total = graph::sum_scalars(tape, cs);
  return tape.scale(total, -1.0 / static_cast<double>(cs.size()));
}

}  // namespace

ForwardResult forward(Tape& tape, const ForwardVars& vars,
                      const PreparedScene& scene, const TrainConfig& config) {
  if (vars.wq.size() < config.layers || vars.wk.size() < config.layers) {
    fail(ErrorKind::kShape, "model has fewer layers than the configuration");
  }
  ForwardResult r;
  Var gen_tokens = tape.matmul(tape.constant(scene.cue_tokens), vars.generator);
  r.l_diff = tape.squared_error(gen_tokens, tape.constant(scene.target_tokens));

  LayerMatch lm = match_layers(tape, gen_tokens, vars.wq, vars.wk, scene, config);
  r.c_layers = std::move(lm.c_layers);
  if (lm.consistencies.empty()) {
    r.all_degenerate = true;
    r.l_total = r.l_diff;
    return r;
  }
  r.l_match = negative_mean(tape, lm.consistencies);
  r.l_total = tape.add(r.l_diff, tape.scale(r.l_match, config.lambda));
  return r;
}

Var matching_loss_on_tape(Tape& tape, Var gen_tokens, Var wq, Var wk,
                          const PreparedScene& scene, const TrainConfig& config) {
  std::vector<Var> wqs(config.layers, wq);
  std::vector<Var> wks(config.layers, wk);
  LayerMatch lm = match_layers(tape, gen_tokens, wqs, wks, scene, config);
  if (lm.consistencies.empty()) {
    fail(ErrorKind::kPrecondition, "every layer is degenerate");
  }
  return negative_mean(tape, lm.consistencies);
}

// ---- optimizer ----

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<Tensor64*> params,
                const std::vector<const Tensor64*>& grads) {
  if (params.size() != grads.size()) {
    fail(ErrorKind::kPrecondition, "one gradient per parameter required");
  }
  if (m_.empty()) {
    for (const Tensor64* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor64& p = *params[k];
    const Tensor64& g = *grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
      const double mh = m_[k][i] / c1;
      const double vh = v_[k][i] / c2;
      p[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

// ---- training ----

std::vector<PreparedScene> load_scenes(const synth::Manifest& manifest,
                                       std::size_t layers) {
  if (manifest.entries.empty()) fail(ErrorKind::kPrecondition, "empty manifest");
  std::vector<PreparedScene> out;
  for (const auto& e : manifest.entries)
    out.push_back(prepare_scene(synth::read_scene(manifest, e), layers, e.scene));
  return out;
}

ToyModel init_model(const std::vector<PreparedScene>& scenes,
                    const TrainConfig& config) {
  if (scenes.empty()) fail(ErrorKind::kPrecondition, "no scenes");
  return ToyModel::init(scenes.front().cue_tokens.dim(1),
                        scenes.front().target_tokens.dim(1), config.layers,
                        config.d, config.seed);
}

namespace {

void check_compatible(const ToyModel& model,
                      const std::vector<PreparedScene>& scenes,
                      const TrainConfig& config) {
  if (scenes.empty()) fail(ErrorKind::kPrecondition, "manifest has no scenes");
  if (model.layers() < config.layers || model.d() != config.d) {
    fail(ErrorKind::kShape, "model does not match the configured layers/d");
  }
  for (const PreparedScene& s : scenes) {
    if (s.cue_tokens.dim(1) != model.cue_channels() ||
        s.target_tokens.dim(1) != model.channels()) {
      fail(ErrorKind::kShape, "scene " + s.name +
                                  " does not match the model's channel counts");
    }
    if (s.pool.size() < config.layers) {
      fail(ErrorKind::kShape, "scene " + s.name + " prepared with too few layers");
    }
  }
}

// Each scene is one (reference, target) frame pair: frames 2i and 2i+1.
sampling::PairIndex scene_pairs(const std::vector<PreparedScene>& scenes) {
  sampling::PairIndex index;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::vector<sampling::CharacterPositions> clip(2);
    clip[0].frame = static_cast<int>(2 * i);
    clip[1].frame = static_cast<int>(2 * i + 1);
    for (const auto& m : scenes[i].masks_ref.front())
      clip[0].entries.emplace_back(m.identity, m.centroid_x());
    for (const auto& m : scenes[i].masks_gen.front())
      clip[1].entries.emplace_back(m.identity, m.centroid_x());
    const sampling::FramePair pair{clip[0].frame, clip[1].frame};
    index.all_pairs.push_back(pair);
    if (sampling::classify_pairs(clip).is_swap(pair)) index.swap_pairs.push_back(pair);
  }
  return index;
}

}  // namespace

TrainResult run_training(ToyModel model, const TrainConfig& config,
                         const std::vector<PreparedScene>& scenes) {
  config.validate();
  check_compatible(model, scenes, config);

  std::vector<Tensor64> params;
  params.push_back(model.generator.cast<double>());
  for (std::size_t l = 0; l < config.layers; ++l) {
    params.push_back(model.wq[l].cast<double>());
    params.push_back(model.wk[l].cast<double>());
  }

  TrainResult result;
  sampling::PairSampler sampler(scene_pairs(scenes), {config.rho, config.seed + 1});
  Adam adam(config.lr, config.beta1, config.beta2, config.adam_eps);
  bool warned_fallback = false;
  std::size_t consecutive_skips = 0;

  while (result.records.size() < config.steps) {
    const sampling::Draw draw = sampler.next();
    if (sampler.fell_back() && !warned_fallback) {
      warned_fallback = true;
      result.warnings.push_back("no swap scenes in the manifest; sampling uniformly");
    }
    const std::size_t idx = static_cast<std::size_t>(draw.pair.a) / 2;
    const PreparedScene& scene = scenes[idx];

    Tape tape;
    ForwardVars vars;
    vars.generator = tape.leaf(params[0]);
    for (std::size_t l = 0; l < config.layers; ++l) {
      vars.wq.push_back(tape.leaf(params[1 + 2 * l]));
      vars.wk.push_back(tape.leaf(params[2 + 2 * l]));
    }
    const ForwardResult fr = forward(tape, vars, scene, config);
    if (fr.all_degenerate) {
      ++result.skipped;
      result.warnings.push_back("scene " + scene.name +
                                " is degenerate at every layer; skipped");
      if (++consecutive_skips >= kMaxConsecutiveSkips) {
        fail(ErrorKind::kDomain, "every sampled scene is degenerate");
      }
      continue;
    }
    consecutive_skips = 0;
    tape.backward(fr.l_total);

    LossRecord rec;
    rec.step = result.records.size() + 1;
    rec.scene = idx;
    rec.l_diff = fr.l_diff.item();
    rec.l_match = fr.l_match.item();
    rec.l_total = fr.l_total.item();
    rec.c_layers = fr.c_layers;
    rec.c_mean = -rec.l_match;
    result.records.push_back(std::move(rec));

    std::vector<Tensor64*> ps;
    std::vector<const Tensor64*> gs;
    ps.push_back(&params[0]);
    gs.push_back(&tape.grad(vars.generator));
    for (std::size_t l = 0; l < config.layers; ++l) {
      ps.push_back(&params[1 + 2 * l]);
      gs.push_back(&tape.grad(vars.wq[l]));
      ps.push_back(&params[2 + 2 * l]);
      gs.push_back(&tape.grad(vars.wk[l]));
    }
    adam.step(ps, gs);
  }

  model.generator = params[0].cast<float>();
  for (std::size_t l = 0; l < config.layers; ++l) {
    model.wq[l] = params[1 + 2 * l].cast<float>();
    model.wk[l] = params[2 + 2 * l].cast<float>();
  }
  result.model = std::move(model);
  return result;
}

TrainResult run_training(const TrainConfig& config) {
  config.validate();
  if (config.manifest.empty()) {
    fail(ErrorKind::kPrecondition, "configuration names no manifest");
  }
  const auto scenes = load_scenes(synth::read_manifest(config.manifest), config.layers);
  return run_training(init_model(scenes, config), config, scenes);
}

namespace {

std::string csv_number(double v) {
  return std::isnan(v) ? "nan" : io::format_double(v);
}

}  // namespace

std::string metrics_csv(const std::vector<LossRecord>& records,
                        std::size_t layers) {
  std::string out = "step,l_diff,l_match,l_total,c_mean";
  for (std::size_t l = 1; l <= layers; ++l) out += ",c_l" + std::to_string(l);
  out += "\n";
  for (const LossRecord& r : records) {
    out += std::to_string(r.step) + "," + csv_number(r.l_diff) + "," +
           csv_number(r.l_match) + "," + csv_number(r.l_total) + "," +
           csv_number(r.c_mean);
    for (std::size_t l = 0; l < layers; ++l)
      out += "," + csv_number(l < r.c_layers.size() ? r.c_layers[l] : kNaN);
    out += "\n";
  }
  return out;
}

// ---- evaluation ----

EvalResult evaluate_ic(const ToyModel& model,
                       const std::vector<PreparedScene>& scenes,
                       const TrainConfig& config) {
  config.validate();
  check_compatible(model, scenes, config);
  EvalResult result;
  std::vector<std::vector<double>> per_layer(config.layers);
  std::vector<double> means;
  for (const PreparedScene& scene : scenes) {
    Tape tape;
    ForwardVars vars;
    vars.generator = tape.constant(model.generator.cast<double>());
    for (std::size_t l = 0; l < config.layers; ++l) {
      vars.wq.push_back(tape.constant(model.wq[l].cast<double>()));
      vars.wk.push_back(tape.constant(model.wk[l].cast<double>()));
    }
    const ForwardResult fr = forward(tape, vars, scene, config);
    SceneEval se{scene.name, fr.c_layers, kNaN};
    if (!fr.all_degenerate) {
      se.c_mean = -fr.l_match.item();
      means.push_back(se.c_mean);
    }
    for (std::size_t l = 0; l < config.layers; ++l)
      if (!std::isnan(fr.c_layers[l])) per_layer[l].push_back(fr.c_layers[l]);
    result.scenes.push_back(std::move(se));
  }
  // Fixed reduction order: scene order.
  auto average = [](const std::vector<double>& xs) {
    if (xs.empty()) return kNaN;
    double t = 0.0;
    for (double x : xs) t += x;
    return t / static_cast<double>(xs.size());
  };
  for (const auto& xs : per_layer) result.layer_means.push_back(average(xs));
  result.mean_c = average(means);
  return result;
}

std::string eval_csv(const EvalResult& result) {
  std::string out = "scene";
  for (std::size_t l = 1; l <= result.layer_means.size(); ++l)
    out += ",c_l" + std::to_string(l);
  out += ",c_mean\n";
  for (const SceneEval& s : result.scenes) {
    out += s.name;
    for (double c : s.c_layers) out += "," + csv_number(c);
    out += "," + csv_number(s.c_mean) + "\n";
  }
  out += "mean";
  for (double c : result.layer_means) out += "," + csv_number(c);
  out += "," + csv_number(result.mean_c) + "\n";
  return out;
}

std::vector<double> moving_average(const std::vector<double>& xs,
                                   std::size_t window) {
  if (window < 1) fail(ErrorKind::kDomain, "window must be >= 1");
  std::vector<double> out;
  double run = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    run += xs[k];
    if (k >= window) run -= xs[k - window];
    if (k + 1 >= window) out.push_back(run / static_cast<double>(window));
  }
  return out;
}

// ---- gradient check ----

double SceneGradCheck::max() const { return std::max({wq, wk, features}); }

SceneGradCheck gradcheck_scene(std::uint64_t seed, double eps) {
  synth::SceneSpec spec;
  spec.height = 8;
  spec.width = 8;
  spec.channels = 4;
  spec.characters = 2;
  spec.swap = seed % 2 == 1;
  const synth::SynthScene s = synth::gen_scene(spec, seed);

  TrainConfig config;
  config.layers = 2;
  config.d = 4;
  const PreparedScene scene = prepare_scene(s, config.layers);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> noise(0.0, 0.5);
  Tensor64 gen = scene.target_tokens;
  for (double& v : gen.data()) v += noise(rng);
  auto draw = [&] {
    Tensor64 w({spec.channels, config.d});
    for (double& v : w.data()) v = noise(rng) * 2.0;
    return w;
  };
  const Tensor64 wq = draw();
  const Tensor64 wk = draw();

  SceneGradCheck out;
  out.wq = numcore::grad_check(
               [&](Tape& t, Var x) {
                 return matching_loss_on_tape(t, t.constant(gen), x, t.constant(wk),
                                              scene, config);
               },
               wq, eps)
               .max_rel_error;
  out.wk = numcore::grad_check(
               [&](Tape& t, Var x) {
                 return matching_loss_on_tape(t, t.constant(gen), t.constant(wq), x,
                                              scene, config);
               },
               wk, eps)
               .max_rel_error;
  out.features = numcore::grad_check(
                     [&](Tape& t, Var x) {
                       return matching_loss_on_tape(t, x, t.constant(wq),
                                                    t.constant(wk), scene, config);
                     },
                     gen, eps)
                     .max_rel_error;
  return out;
}

}  // namespace imgmatch::train
