// imgmatch command-line tool. Exit codes: 0 success, 1 usage error,
// 2 data error. Diagnostics go to stderr.
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "imgmatch/imgmatch.h"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct DataError {
  std::string message;
};

void check(imgmatch_status st, const std::string& what) {
  if (st == IMGMATCH_OK) return;
  throw DataError{what + ": " + imgmatch_status_name(st) + ": " + imgmatch_last_error()};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using TensorPtr = std::unique_ptr<imgmatch_tensor, Deleter<imgmatch_tensor, imgmatch_tensor_free>>;
using GraphPtr = std::unique_ptr<imgmatch_graph, Deleter<imgmatch_graph, imgmatch_graph_free>>;
using ConfigPtr = std::unique_ptr<imgmatch_config, Deleter<imgmatch_config, imgmatch_config_free>>;
using ModelPtr = std::unique_ptr<imgmatch_model, Deleter<imgmatch_model, imgmatch_model_free>>;
using RunPtr = std::unique_ptr<imgmatch_run, Deleter<imgmatch_run, imgmatch_run_free>>;
using EvalPtr = std::unique_ptr<imgmatch_eval, Deleter<imgmatch_eval, imgmatch_eval_free>>;

TensorPtr load_tensor(const std::string& path) {
  imgmatch_tensor* t = nullptr;
  check(imgmatch_tensor_read(path.c_str(), &t), path);
  return TensorPtr(t);
}

ConfigPtr load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  imgmatch_config* c = nullptr;
  check(imgmatch_config_read(path.c_str(), &c), path);
  ConfigPtr cfg(c);
  if (seed) check(imgmatch_config_set(cfg.get(), "seed", std::to_string(*seed).c_str()), "--seed");
  return cfg;
}

// WIDTHxHEIGHT, both positive.
bool parse_size(const std::string& text, std::size_t& width, std::size_t& height) {
  const auto x = text.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == text.size()) return false;
  try {
    std::size_t used = 0;
    const auto w = std::stoul(text.substr(0, x), &used);
    if (used != x) return false;
    const auto h = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) return false;
    if (w == 0 || h == 0) return false;
    width = w;
    height = h;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

struct ImgScoreArgs {
  std::string features_ref, features_gen, masks_ref, masks_gen, matching;
  std::string out = "weights.csv";
  std::string wq, wk;
  std::size_t d = 16;
  std::string mode = "fast";
  bool background_mask = false;
  double gamma = 1e-8;
  std::uint64_t seed = 0;
};

int run_img_score(const ImgScoreArgs& a) {
  imgmatch_score_options opts;
  imgmatch_score_options_init(&opts);
  opts.d = a.d;
  opts.mode = a.mode == "pairwise" ? IMGMATCH_MODE_PAIRWISE : IMGMATCH_MODE_FAST;
  opts.background_mask = a.background_mask;
  opts.gamma = a.gamma;
  opts.seed = a.seed;
  TensorPtr wq, wk;
  if (!a.wq.empty()) {
    wq = load_tensor(a.wq);
    wk = load_tensor(a.wk);
    opts.wq = wq.get();
    opts.wk = wk.get();
  }
  imgmatch_graph* g = nullptr;
  check(imgmatch_img_score_files(a.features_ref.c_str(), a.features_gen.c_str(),
                                 a.masks_ref.c_str(), a.masks_gen.c_str(),
                                 a.matching.c_str(), &opts, &g),
        "img-score");
  GraphPtr graph(g);
  check(imgmatch_graph_write_weights_csv(graph.get(), a.out.c_str()), a.out);
  if (imgmatch_graph_degenerate(graph.get())) {
    throw DataError{"img-score: degenerate graph (no generated character or no weight mass)"};
  }
  std::printf("C,%.6f\n", imgmatch_graph_consistency(graph.get()));
  return 0;
}

struct IegArgs {
  std::string poses, assign, out;
  double tau = 0.6;
  double min_confidence = 0.3;
  std::string size = "256x256";
  long frame = -1;
  std::uint64_t seed = 0;  // accepted for uniformity; assignment is deterministic
};

int run_ieg_assign(const IegArgs& a) {
  imgmatch_ieg_options opts{a.tau, a.min_confidence};
  std::size_t matched = 0, unmatched = 0;
  check(imgmatch_ieg_assign_file(a.poses.c_str(), &opts, a.out.c_str(), &matched, &unmatched),
        "ieg-assign");
  std::printf("matched,%zu\nunmatched,%zu\n", matched, unmatched);
  return 0;
}

int run_ieg_render(const IegArgs& a, std::size_t width, std::size_t height) {
  imgmatch_ieg_options opts{a.tau, a.min_confidence};
  check(imgmatch_ieg_render_file(a.poses.c_str(), a.assign.c_str(), a.frame, height, width,
                                 &opts, a.out.c_str()),
        "ieg-render");
  return 0;
}

struct PcsArgs {
  std::string positions, out, pairs;
  double rho = 0.3;
  std::size_t draws = 10000;
  std::size_t min_gap = 1;
  std::size_t max_gap = 0;
  std::uint64_t seed = 0;
};

int run_pcs_plan(const PcsArgs& a) {
  imgmatch_pcs_stats s{};
  check(imgmatch_pcs_plan_file(a.positions.c_str(), a.rho, a.draws, a.seed, a.min_gap,
                               a.max_gap, a.out.c_str(),
                               a.pairs.empty() ? nullptr : a.pairs.c_str(), &s),
        "pcs-plan");
  if (s.fell_back) std::fprintf(stderr, "warning: no swap pairs; sampled uniformly\n");
  std::printf("pairs,%zu\nswap_pairs,%zu\nswap_fraction,%.6f\n", s.all_pairs, s.swap_pairs,
              s.swap_fraction);
  return 0;
}

struct SynthArgs {
  imgmatch_synth_options spec{};
  std::size_t count = 100;
  double swap_share = 0.3;
  std::string out;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> embedding_seed;
};

int run_synth_gen(SynthArgs a) {
  a.spec.embedding_seed = a.embedding_seed.value_or(a.seed);
  std::size_t swaps = 0;
  check(imgmatch_synth_dataset(&a.spec, a.count, a.swap_share, a.seed, a.out.c_str(), &swaps),
        "synth-gen");
  std::printf("scenes,%zu\nswap_scenes,%zu\n", a.count, swaps);
  return 0;
}

struct TrainArgs {
  std::string config, out, model_out, model;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
};

int run_train_demo(const TrainArgs& a) {
  ConfigPtr cfg = load_config(a.config, a.seed);
  if (a.steps) check(imgmatch_config_set(cfg.get(), "steps", std::to_string(*a.steps).c_str()), "--steps");
  imgmatch_run* r = nullptr;
  check(imgmatch_train(cfg.get(), &r), "train-demo");
  RunPtr run(r);
  for (std::size_t k = 0; k < imgmatch_run_warning_count(run.get()); ++k)
    std::fprintf(stderr, "warning: %s\n", imgmatch_run_warning(run.get(), k));
  check(imgmatch_run_write_metrics(run.get(), a.out.c_str()), a.out);
  if (!a.model_out.empty()) {
    imgmatch_model* m = nullptr;
    check(imgmatch_run_model(run.get(), &m), "train-demo");
    ModelPtr model(m);
    check(imgmatch_model_write(model.get(), a.model_out.c_str()), a.model_out);
  }
  std::printf("steps,%zu\nskipped,%zu\nfinal_c_mean,%.6f\n", imgmatch_run_steps(run.get()),
              imgmatch_run_skipped(run.get()), imgmatch_run_final_c(run.get()));
  return 0;
}

int run_evaluate(const TrainArgs& a) {
  ConfigPtr cfg = load_config(a.config, a.seed);
  imgmatch_model* m = nullptr;
  check(imgmatch_model_read(cfg.get(), a.model.c_str(), &m), a.model);
  ModelPtr model(m);
  imgmatch_eval* e = nullptr;
  check(imgmatch_evaluate(cfg.get(), model.get(), &e), "evaluate");
  EvalPtr ev(e);
  check(imgmatch_eval_write_csv(ev.get(), a.out.c_str()), a.out);
  std::printf("scenes,%zu\nmean_c,%.6f\n", imgmatch_eval_scene_count(ev.get()),
              imgmatch_eval_mean_c(ev.get()));
  return 0;
}

int run_gradcheck(std::uint64_t scene, double eps) {
  double wq = 0, wk = 0, f = 0;
  check(imgmatch_gradcheck_scene(scene, eps, &wq, &wk, &f), "gradcheck");
  std::printf("wq,%.3e\nwk,%.3e\nfeatures,%.3e\nmax_rel_error,%.3e\n", wq, wk, f,
              std::max({wq, wk, f}));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identity matching graph tools"};
  app.require_subcommand(1);
  app.set_version_flag("--version", imgmatch_version());

  ImgScoreArgs score;
  auto* img = app.add_subcommand("img-score", "Score identity correspondence of one frame pair");
  img->add_option("--features-ref", score.features_ref, "Reference features (TSR1, c x h x w)")->required();
  img->add_option("--features-gen", score.features_gen, "Generated features (TSR1, c x h x w)")->required();
  img->add_option("--masks-ref", score.masks_ref, "Reference mask directory")->required();
  img->add_option("--masks-gen", score.masks_gen, "Generated mask directory")->required();
  img->add_option("--matching", score.matching, "Ground-truth matching JSON")->required();
  img->add_option("--d", score.d, "Projection width")->capture_default_str()->check(CLI::PositiveNumber);
  img->add_option("--mode", score.mode, "fast or pairwise")->capture_default_str()->check(CLI::IsMember({"fast", "pairwise"}));
  img->add_flag("--background-mask", score.background_mask, "Exclude out-of-mask keys from the softmax");
  img->add_option("--gamma", score.gamma, "Edge normalization constant")->capture_default_str();
  auto* wq_opt = img->add_option("--wq", score.wq, "Query projection (TSR1, c x d)");
  auto* wk_opt = img->add_option("--wk", score.wk, "Key projection (TSR1, c x d)");
  wq_opt->needs(wk_opt);
  wk_opt->needs(wq_opt);
  img->add_option("--out", score.out, "Weight CSV output")->capture_default_str();
  img->add_option("--seed", score.seed, "Seed of the shared random projection")->capture_default_str();

  IegArgs ieg;
  auto* assign = app.add_subcommand("ieg-assign", "Assign pose skeletons to identity boxes");
  assign->add_option("--poses", ieg.poses, "Pose JSON")->required();
  assign->add_option("--tau", ieg.tau, "Enclosure threshold")->capture_default_str();
  assign->add_option("--min-confidence", ieg.min_confidence, "Keypoint confidence cutoff")->capture_default_str();
  assign->add_option("--out", ieg.out, "Assignment JSON output")->required();
  assign->add_option("--seed", ieg.seed, "Accepted for uniformity; unused");

  std::size_t width = 0, height = 0;
  auto* render = app.add_subcommand("ieg-render", "Render identity-embedded guidance as PPM");
  render->add_option("--poses", ieg.poses, "Pose JSON")->required();
  render->add_option("--assign", ieg.assign, "Assignment JSON")->required();
  render->add_option("--size", ieg.size, "WIDTHxHEIGHT")->capture_default_str()->check(
      [&](const std::string& s) {
        std::size_t w, h;
        return parse_size(s, w, h) ? std::string() : "expected WIDTHxHEIGHT, got " + s;
      });
  render->add_option("--frame", ieg.frame, "Frame index (default: first frame)");
  render->add_option("--min-confidence", ieg.min_confidence, "Keypoint confidence cutoff")->capture_default_str();
  render->add_option("--out", ieg.out, "PPM output")->required();
  render->add_option("--seed", ieg.seed, "Accepted for uniformity; unused");

  PcsArgs pcs;
  auto* plan = app.add_subcommand("pcs-plan", "Classify frame pairs and simulate pre-classified sampling");
  plan->add_option("--positions", pcs.positions, "Positions JSON")->required();
  plan->add_option("--rho", pcs.rho, "Swap-branch probability")->capture_default_str();
  plan->add_option("--draws", pcs.draws, "Number of draws")->capture_default_str();
  plan->add_option("--min-gap", pcs.min_gap, "Smallest frame distance of a pair")->capture_default_str();
  plan->add_option("--max-gap", pcs.max_gap, "Largest frame distance (0: unbounded)")->capture_default_str();
  plan->add_option("--pairs", pcs.pairs, "Pair index CSV output");
  plan->add_option("--out", pcs.out, "Sampling stats CSV output")->required();
  plan->add_option("--seed", pcs.seed, "Sampler seed")->capture_default_str();

  SynthArgs syn;
  imgmatch_synth_options_init(&syn.spec);
  auto* gen = app.add_subcommand("synth-gen", "Generate a synthetic scene dataset");
  gen->add_option("--chars", syn.spec.characters, "Characters per scene (2-5)")->capture_default_str();
  gen->add_option("--count", syn.count, "Number of scenes")->capture_default_str();
  gen->add_option("--swap-share", syn.swap_share, "Fraction of position-swap scenes")->capture_default_str();
  gen->add_option("--height", syn.spec.height, "Latent height")->capture_default_str();
  gen->add_option("--width", syn.spec.width, "Latent width")->capture_default_str();
  gen->add_option("--channels", syn.spec.channels, "Feature channels")->capture_default_str();
  gen->add_option("--region-fraction", syn.spec.region_width_fraction, "Strip width within its slot")->capture_default_str();
  gen->add_option("--scale", syn.spec.embedding_scale, "Identity embedding scale")->capture_default_str();
  gen->add_option("--sigma", syn.spec.sigma, "Reference feature noise")->capture_default_str();
  gen->add_option("--corruption", syn.spec.cue_corruption, "Cue corruption probability")->capture_default_str();
  gen->add_option("--embedding-seed", syn.embedding_seed, "Identity embedding seed (default: --seed)");
  gen->add_option("--out", syn.out, "Output directory")->required();
  gen->add_option("--seed", syn.seed, "Base seed; scene i uses seed + i")->capture_default_str();

  TrainArgs tr;
  auto* demo = app.add_subcommand("train-demo", "Train the toy model and log metrics");
  demo->add_option("--config", tr.config, "Run configuration (key=value)")->required();
  demo->add_option("--out", tr.out, "Metrics CSV output")->required();
  demo->add_option("--model-out", tr.model_out, "Trained model output (TSR1)");
  demo->add_option("--steps", tr.steps, "Override the configured step count");
  demo->add_option("--seed", tr.seed, "Override the configured seed");

  TrainArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a trained model over a manifest");
  evaluate->add_option("--config", ev.config, "Run configuration (key=value)")->required();
  evaluate->add_option("--model", ev.model, "Model (TSR1)")->required();
  evaluate->add_option("--out", ev.out, "Evaluation CSV output")->required();
  evaluate->add_option("--seed", ev.seed, "Override the configured seed");

  std::uint64_t scene = 0;
  double eps = 1e-3;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of matching-loss gradients");
  grad->add_option("--scene,--seed", scene, "Scene seed")->capture_default_str();
  grad->add_option("--eps", eps, "Central-difference step")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*img) return run_img_score(score);
    if (*assign) return run_ieg_assign(ieg);
    if (*render) {
      parse_size(ieg.size, width, height);
      return run_ieg_render(ieg, width, height);
    }
    if (*plan) return run_pcs_plan(pcs);
    if (*gen) return run_synth_gen(syn);
    if (*demo) return run_train_demo(tr);
    if (*evaluate) return run_evaluate(ev);
    if (*grad) return run_gradcheck(scene, eps);
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.message.c_str());
    return kExitData;
  }
  return kExitUsage;
}
