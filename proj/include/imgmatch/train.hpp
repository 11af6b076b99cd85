#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "imgmatch/graph.hpp"
#include "imgmatch/synth.hpp"
#include "imgmatch/tape.hpp"

namespace imgmatch::train {

using numcore::Tape;
using numcore::Tensor;
using numcore::Tensor64;
using numcore::Var;

struct TrainConfig {
  double lambda = 0.20;
  double rho = 0.3;
  std::size_t layers = 3;
  std::size_t steps = 2000;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 7;
  std::size_t d = 8;  // projection width
  std::filesystem::path manifest;
  bool background_mask = false;
  graph::MqaMode mode = graph::MqaMode::kFast;

  void validate() const;
};

// key=value run configuration. A relative manifest path is resolved against
// base_dir. Unknown keys are parse errors.
TrainConfig parse_config(std::string_view text, std::string_view source = "<memory>",
                         const std::filesystem::path& base_dir = {});
TrainConfig read_config(const std::filesystem::path& path);
std::string dump_config(const TrainConfig& config);

inline constexpr double kInitStddev = 0.02;

struct ToyModel {
  Tensor generator;         // cue channels x c
  std::vector<Tensor> wq;   // per layer, c x d
  std::vector<Tensor> wk;   // per layer, c x d

  std::size_t cue_channels() const { return generator.dim(0); }
  std::size_t channels() const { return generator.dim(1); }
  std::size_t layers() const { return wq.size(); }
  std::size_t d() const { return wq.front().dim(1); }

  // Every entry ~ N(0, 0.02^2) from `seed`.
  static ToyModel init(std::size_t cue_channels, std::size_t channels,
                       std::size_t layers, std::size_t d, std::uint64_t seed);

  // Flat parameter vector: generator, then W_Q and W_K per layer.
  Tensor flatten() const;
  static ToyModel unflatten(const Tensor& flat, std::size_t cue_channels,
                            std::size_t channels, std::size_t layers,
                            std::size_t d);
};

struct LossRecord {
  std::size_t step = 0;
  std::size_t scene = 0;
  double l_diff = 0.0;
  double l_match = 0.0;
  double l_total = 0.0;
  std::vector<double> c_layers;  // NaN where the layer is degenerate
  double c_mean = 0.0;
};

// Mean squared difference over all entries.
double diffusion_proxy_loss(const graph::FeatureMap& f_gen,
                            const graph::FeatureMap& target);
double total_loss(double l_diff, double l_match, double lambda);

// A scene prepared for the multi-scale forward pass.
struct PreparedScene {
  std::string name;
  bool swap = false;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor64 cue_tokens;     // (H*W) x cue channels
  Tensor64 target_tokens;  // (H*W) x c
  std::vector<Tensor64> pool;            // per layer, (h_l*w_l) x (H*W)
  std::vector<Tensor64> ref_tokens;      // per layer, (h_l*w_l) x c
  std::vector<std::size_t> layer_height;
  std::vector<std::size_t> layer_width;
  std::vector<std::vector<graph::CharacterMask>> masks_ref;  // per layer
  std::vector<std::vector<graph::CharacterMask>> masks_gen;  // per layer
  graph::GroundTruth gt;
};

// H and W must be divisible by 2^(layers-1).
PreparedScene prepare_scene(const synth::SynthScene& scene, std::size_t layers,
                            std::string name = {});

// 2x2 average pooling as a (h/2*w/2) x (h*w) token matrix.
Tensor64 pooling_matrix(std::size_t height, std::size_t width);

struct ForwardVars {
  Var generator;
  std::vector<Var> wq;
  std::vector<Var> wk;
};

struct ForwardResult {
  Var l_diff;
  Var l_match;  // valid only when some layer is non-degenerate
  Var l_total;
  std::vector<double> c_layers;
  bool all_degenerate = false;
};

// Builds L_diff, the per-layer graphs and L_total on `tape`. f_gen at layer l
// is pool_l * (cue_tokens * generator).
ForwardResult forward(Tape& tape, const ForwardVars& vars,
                      const PreparedScene& scene, const TrainConfig& config);

// Matching loss of explicit generated tokens, for gradient checking.
Var matching_loss_on_tape(Tape& tape, Var gen_tokens, Var wq, Var wk,
                          const PreparedScene& scene, const TrainConfig& config);

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps);
  void step(std::vector<Tensor64*> params, const std::vector<const Tensor64*>& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor64> m_, v_;
};

struct TrainResult {
  ToyModel model;
  std::vector<LossRecord> records;
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
};

std::vector<PreparedScene> load_scenes(const synth::Manifest& manifest,
                                       std::size_t layers);

// Model shape follows the scenes: cue channels = characters, c = channels.
ToyModel init_model(const std::vector<PreparedScene>& scenes,
                    const TrainConfig& config);

TrainResult run_training(ToyModel model, const TrainConfig& config,
                         const std::vector<PreparedScene>& scenes);
// Loads config.manifest.
TrainResult run_training(const TrainConfig& config);

std::string metrics_csv(const std::vector<LossRecord>& records,
                        std::size_t layers);

struct SceneEval {
  std::string name;
  std::vector<double> c_layers;
  double c_mean = 0.0;
};

struct EvalResult {
  std::vector<SceneEval> scenes;
  std::vector<double> layer_means;
  double mean_c = 0.0;
};

EvalResult evaluate_ic(const ToyModel& model,
                       const std::vector<PreparedScene>& scenes,
                       const TrainConfig& config);
std::string eval_csv(const EvalResult& result);

// Moving average over a trailing window; output[k] averages inputs
// [k-window+1, k].
std::vector<double> moving_average(const std::vector<double>& xs,
                                   std::size_t window);

struct SceneGradCheck {
  double wq = 0.0;
  double wk = 0.0;
  double features = 0.0;
  double max() const;
};

// 2-character 8x8 scene from `seed` with noisy generated features and
// random projections; central-difference check of the matching loss.
SceneGradCheck gradcheck_scene(std::uint64_t seed, double eps);

}  // namespace imgmatch::train
