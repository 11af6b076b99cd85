#include "imgmatch/imgmatch.h"

#include <algorithm>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>

#include "imgmatch/error.hpp"
#include "imgmatch/graph.hpp"
#include "imgmatch/guidance.hpp"
#include "imgmatch/io.hpp"
#include "imgmatch/sampling.hpp"
#include "imgmatch/synth.hpp"
#include "imgmatch/train.hpp"

using namespace imgmatch;

struct imgmatch_tensor {
  numcore::Tensor t;
};
struct imgmatch_graph {
  graph::IdentityMatchingGraph img;
  graph::Consistency c;
};
struct imgmatch_config {
  train::TrainConfig cfg;
};
struct imgmatch_model {
  train::ToyModel model;
};
struct imgmatch_run {
  train::TrainResult result;
  std::size_t layers = 0;
};
struct imgmatch_eval {
  train::EvalResult result;
};

namespace {

thread_local std::string g_error;

imgmatch_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return IMGMATCH_E_SHAPE;
    case ErrorKind::kDomain: return IMGMATCH_E_DOMAIN;
    case ErrorKind::kNumeric: return IMGMATCH_E_NUMERIC;
    case ErrorKind::kPrecondition: return IMGMATCH_E_PRECONDITION;
    case ErrorKind::kParse: return IMGMATCH_E_PARSE;
    case ErrorKind::kIo: return IMGMATCH_E_IO;
  }
  return IMGMATCH_E_INTERNAL;
}

struct ArgumentError {
  const char* what;
};

template <class F>
imgmatch_status guard(F&& f) noexcept {
  try {
    f();
    g_error.clear();
    return IMGMATCH_OK;
  } catch (const Error& e) {
    g_error = e.what();
    return status_of(e.kind());
  } catch (const ArgumentError& e) {
    g_error = e.what;
    return IMGMATCH_E_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return IMGMATCH_E_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    return IMGMATCH_E_INTERNAL;
  } catch (...) {
    g_error = "unknown failure";
    return IMGMATCH_E_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) throw ArgumentError{what};
}

graph::MqaMode mode_of(imgmatch_mode m) {
  if (m == IMGMATCH_MODE_FAST) return graph::MqaMode::kFast;
  if (m == IMGMATCH_MODE_PAIRWISE) return graph::MqaMode::kPairwise;
  throw ArgumentError{"unknown mode"};
}

// Puts masks in the order listed by the matching document.
std::vector<graph::CharacterMask> in_order(std::vector<graph::CharacterMask> masks,
                                           const std::vector<int>& ids,
                                           const std::string& what) {
  if (masks.size() != ids.size()) {
    fail(ErrorKind::kPrecondition, what + ": " + std::to_string(masks.size()) +
                                       " masks but the matching lists " +
                                       std::to_string(ids.size()) + " identities");
  }
  std::vector<graph::CharacterMask> out;
  for (int id : ids) {
    auto it = std::find_if(masks.begin(), masks.end(),
                           [&](const auto& m) { return m.identity == id; });
    if (it == masks.end()) {
      fail(ErrorKind::kPrecondition,
           what + ": no mask for identity " + std::to_string(id));
    }
    out.push_back(*it);
  }
  return out;
}

std::vector<graph::CharacterMask> at_resolution(std::vector<graph::CharacterMask> masks,
                                                const graph::FeatureMap& f) {
  if (masks.empty() || (masks.front().height == f.height() &&
                        masks.front().width == f.width())) {
    return masks;
  }
  return graph::downsample_masks(masks, f.height(), f.width());
}

guidance::GuidanceConfig guidance_config(const imgmatch_ieg_options* opts) {
  guidance::GuidanceConfig c;
  if (opts != nullptr) {
    c.tau = opts->tau;
    c.min_confidence = opts->min_confidence;
  }
  c.validate();
  return c;
}

const synth::ManifestEntry& first_entry(const synth::Manifest& m) {
  if (m.entries.empty()) fail(ErrorKind::kPrecondition, "empty manifest");
  return m.entries.front();
}

}  // namespace

extern "C" {

const char* imgmatch_status_name(imgmatch_status status) {
  switch (status) {
    case IMGMATCH_OK: return "ok";
    case IMGMATCH_E_SHAPE: return "shape error";
    case IMGMATCH_E_DOMAIN: return "domain error";
    case IMGMATCH_E_NUMERIC: return "numeric error";
    case IMGMATCH_E_PRECONDITION: return "precondition error";
    case IMGMATCH_E_PARSE: return "parse error";
    case IMGMATCH_E_IO: return "i/o error";
    case IMGMATCH_E_ARGUMENT: return "invalid argument";
    case IMGMATCH_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* imgmatch_last_error(void) { return g_error.c_str(); }

const char* imgmatch_version(void) { return "1.0.0"; }

// ---- tensors ----

imgmatch_status imgmatch_tensor_create(const size_t* shape, size_t rank,
                                       const float* data, imgmatch_tensor** out) {
  return guard([&] {
    need(out, "out is null");
    if (rank > 0) need(shape, "shape is null");
    numcore::Tensor t(numcore::Shape(shape, shape + rank));
    if (data != nullptr) std::copy(data, data + t.size(), t.data().begin());
    *out = new imgmatch_tensor{std::move(t)};
  });
}

imgmatch_status imgmatch_tensor_read(const char* path, imgmatch_tensor** out) {
  return guard([&] {
    need(path, "path is null");
    need(out, "out is null");
    *out = new imgmatch_tensor{io::read_tensor(path)};
  });
}

imgmatch_status imgmatch_tensor_write(const imgmatch_tensor* t, const char* path) {
  return guard([&] {
    need(t, "tensor is null");
    need(path, "path is null");
    io::write_tensor(path, t->t);
  });
}

size_t imgmatch_tensor_rank(const imgmatch_tensor* t) { return t ? t->t.rank() : 0; }

size_t imgmatch_tensor_dim(const imgmatch_tensor* t, size_t axis) {
  return t && axis < t->t.rank() ? t->t.dim(axis) : 0;
}

size_t imgmatch_tensor_size(const imgmatch_tensor* t) { return t ? t->t.size() : 0; }

const float* imgmatch_tensor_data(const imgmatch_tensor* t) {
  return t ? t->t.data().data() : nullptr;
}

void imgmatch_tensor_free(imgmatch_tensor* t) { delete t; }

// ---- graph ----

void imgmatch_score_options_init(imgmatch_score_options* opts) {
  if (opts == nullptr) return;
  *opts = {};
  opts->d = 16;
  opts->mode = IMGMATCH_MODE_FAST;
  opts->gamma = 1e-8;
}

imgmatch_status imgmatch_img_score_files(const char* features_ref,
                                         const char* features_gen,
                                         const char* masks_ref_dir,
                                         const char* masks_gen_dir, const char* matching,
                                         const imgmatch_score_options* opts,
                                         imgmatch_graph** out) {
  return guard([&] {
    for (const char* p : {features_ref, features_gen, masks_ref_dir, masks_gen_dir, matching})
      need(p, "path is null");
    need(opts, "options are null");
    need(out, "out is null");
    const graph::FeatureMap f_ref{io::read_tensor(features_ref), 1};
    const graph::FeatureMap f_gen{io::read_tensor(features_gen), 1};
    graph::validate_feature_map(f_ref);
    graph::validate_feature_map(f_gen);
    const io::MatchingDocument doc = io::parse_matching(io::read_file(matching), matching);
    const auto masks_ref = in_order(at_resolution(io::read_mask_dir(masks_ref_dir, "ref"), f_ref),
                                    doc.ref_ids, "reference masks");
    const auto masks_gen = in_order(at_resolution(io::read_mask_dir(masks_gen_dir, "gen"), f_gen),
                                    doc.gen_ids, "generated masks");

    graph::MqaParams p;
    p.d = opts->d;
    p.gamma = opts->gamma;
    p.background_mask_enabled = opts->background_mask != 0;
    p.mode = mode_of(opts->mode);
    if ((opts->wq == nullptr) != (opts->wk == nullptr)) {
      throw ArgumentError{"give both projections or neither"};
    }
    if (opts->wq != nullptr) {
      p.wq = opts->wq->t;
      p.wk = opts->wk->t;
    } else {
      if (p.d < 1) fail(ErrorKind::kDomain, "d must be >= 1");
      std::mt19937_64 rng(opts->seed);
      std::normal_distribution<double> normal(0.0, 2.0);
      p.wq = numcore::Tensor({f_ref.channels(), p.d});
      for (float& v : p.wq.data()) v = static_cast<float>(normal(rng));
      p.wk = p.wq;
    }
    auto g = std::make_unique<imgmatch_graph>();
    g->img = graph::build_img(f_ref, f_gen, masks_ref, masks_gen, doc.gt, p);
    g->c = graph::consistency_score(g->img);
    *out = g.release();
  });
}

double imgmatch_graph_consistency(const imgmatch_graph* g) {
  return g ? g->c.value : 0.0;
}
int imgmatch_graph_degenerate(const imgmatch_graph* g) { return g ? g->c.degenerate : 1; }
size_t imgmatch_graph_m(const imgmatch_graph* g) { return g ? g->img.m() : 0; }
size_t imgmatch_graph_n(const imgmatch_graph* g) { return g ? g->img.n() : 0; }
int imgmatch_graph_ref_id(const imgmatch_graph* g, size_t i) {
  return g && i < g->img.m() ? g->img.ref_ids[i] : -1;
}
int imgmatch_graph_gen_id(const imgmatch_graph* g, size_t j) {
  return g && j < g->img.n() ? g->img.gen_ids[j] : -1;
}
double imgmatch_graph_weight(const imgmatch_graph* g, size_t j, size_t i) {
  return g && j < g->img.n() && i < g->img.m() ? g->img.weight(j, i) : 0.0;
}

imgmatch_status imgmatch_graph_write_weights_csv(const imgmatch_graph* g,
                                                 const char* path) {
  return guard([&] {
    need(g, "graph is null");
    need(path, "path is null");
    io::write_file(path, io::weights_csv(std::span(&g->img, 1)));
  });
}

void imgmatch_graph_free(imgmatch_graph* g) { delete g; }

// ---- guidance ----

void imgmatch_ieg_options_init(imgmatch_ieg_options* opts) {
  if (opts == nullptr) return;
  const guidance::GuidanceConfig c;
  opts->tau = c.tau;
  opts->min_confidence = c.min_confidence;
}

imgmatch_status imgmatch_ieg_assign_file(const char* poses,
                                         const imgmatch_ieg_options* opts,
                                         const char* out, size_t* matched,
                                         size_t* unmatched) {
  return guard([&] {
    need(poses, "path is null");
    need(out, "path is null");
    const auto config = guidance_config(opts);
    const io::PoseDocument doc = io::read_poses(poses);
    std::vector<io::AssignmentFrame> frames;
    std::size_t n_matched = 0;
    std::size_t n_unmatched = 0;
    for (const auto& rec : doc.frames) {
      io::AssignmentFrame af;
      af.index = rec.frame.index;
      af.assignment = guidance::assign_identities(rec.frame.persons, rec.boxes, config);
      n_matched += af.assignment.matches.size();
      n_unmatched += af.assignment.unmatched_persons.size();
      frames.push_back(std::move(af));
    }
    io::write_file(out, io::dump_assignments(frames));
    if (matched) *matched = n_matched;
    if (unmatched) *unmatched = n_unmatched;
  });
}

imgmatch_status imgmatch_ieg_render_file(const char* poses, const char* assignments,
                                         long frame_index, size_t height, size_t width,
                                         const imgmatch_ieg_options* opts,
                                         const char* out) {
  return guard([&] {
    need(poses, "path is null");
    need(assignments, "path is null");
    need(out, "path is null");
    const auto config = guidance_config(opts);
    const io::PoseDocument doc = io::read_poses(poses);
    const auto assigned =
        io::parse_assignments(io::read_file(assignments), assignments);
    if (doc.frames.empty()) fail(ErrorKind::kPrecondition, "pose document has no frames");
    const int index =
        frame_index < 0 ? doc.frames.front().frame.index : static_cast<int>(frame_index);
    auto pf = std::find_if(doc.frames.begin(), doc.frames.end(),
                           [&](const auto& r) { return r.frame.index == index; });
    if (pf == doc.frames.end()) {
      fail(ErrorKind::kPrecondition, "no pose frame with index " + std::to_string(index));
    }
    auto af = std::find_if(assigned.begin(), assigned.end(),
                           [&](const auto& a) { return a.index == index; });
    if (af == assigned.end()) {
      fail(ErrorKind::kPrecondition,
           "no assignment for frame index " + std::to_string(index));
    }
    for (const auto& m : af->assignment.matches) {
      if (m.person >= pf->frame.persons.size()) {
        fail(ErrorKind::kPrecondition,
             "assignment names person " + std::to_string(m.person) + " but frame " +
                 std::to_string(index) + " has " +
                 std::to_string(pf->frame.persons.size()));
      }
    }
    io::write_ppm(out, guidance::render_ieg(pf->frame, af->assignment, config, height, width));
  });
}

// ---- sampling ----

imgmatch_status imgmatch_pcs_plan_file(const char* positions, double rho, size_t draws,
                                       uint64_t seed, size_t min_gap, size_t max_gap,
                                       const char* stats_out, const char* pairs_out,
                                       imgmatch_pcs_stats* stats) {
  return guard([&] {
    need(positions, "path is null");
    need(stats_out, "path is null");
    const auto frames = io::parse_positions(io::read_file(positions), positions);
    sampling::PairPolicy policy;
    policy.min_gap = static_cast<int>(min_gap);
    policy.max_gap = static_cast<int>(max_gap);
    const auto index = sampling::classify_pairs(frames, policy);
    bool fell_back = false;
    const auto s = sampling::run_draws(index, {rho, seed}, draws, &fell_back);
    io::write_file(stats_out, io::sampling_stats_csv(s));
    if (pairs_out != nullptr) io::write_file(pairs_out, io::pair_index_csv(index));
    if (stats != nullptr) {
      stats->all_pairs = index.all_pairs.size();
      stats->swap_pairs = index.swap_pairs.size();
      stats->draws = s.draws;
      stats->swap_draws = s.swap_draws;
      stats->swap_fraction = s.swap_fraction;
      stats->fell_back = fell_back;
    }
  });
}

// ---- synth ----

void imgmatch_synth_options_init(imgmatch_synth_options* opts) {
  if (opts == nullptr) return;
  const synth::SceneSpec s;
  opts->height = s.height;
  opts->width = s.width;
  opts->channels = s.channels;
  opts->characters = s.characters;
  opts->region_width_fraction = s.region_width_fraction;
  opts->embedding_scale = s.embedding_scale;
  opts->sigma = s.sigma;
  opts->cue_corruption = s.cue_corruption;
  opts->embedding_seed = s.embedding_seed;
}

imgmatch_status imgmatch_synth_dataset(const imgmatch_synth_options* opts, size_t count,
                                       double swap_share, uint64_t seed,
                                       const char* out_dir, size_t* swap_count) {
  return guard([&] {
    need(opts, "options are null");
    need(out_dir, "path is null");
    synth::SceneSpec s;
    s.height = opts->height;
    s.width = opts->width;
    s.channels = opts->channels;
    s.characters = opts->characters;
    s.region_width_fraction = opts->region_width_fraction;
    s.embedding_scale = opts->embedding_scale;
    s.sigma = opts->sigma;
    s.cue_corruption = opts->cue_corruption;
    s.embedding_seed = opts->embedding_seed;
    const auto m = synth::gen_dataset(s, count, swap_share, seed, out_dir);
    if (swap_count != nullptr) {
      *swap_count = static_cast<size_t>(std::count_if(
          m.entries.begin(), m.entries.end(), [](const auto& e) { return e.swap; }));
    }
  });
}

// ---- training ----

imgmatch_status imgmatch_config_create(imgmatch_config** out) {
  return guard([&] {
    need(out, "out is null");
    *out = new imgmatch_config{};
  });
}

imgmatch_status imgmatch_config_read(const char* path, imgmatch_config** out) {
  return guard([&] {
    need(path, "path is null");
    need(out, "out is null");
    *out = new imgmatch_config{train::read_config(path)};
  });
}

imgmatch_status imgmatch_config_set(imgmatch_config* cfg, const char* key,
                                    const char* value) {
  return guard([&] {
    need(cfg, "config is null");
    need(key, "key is null");
    need(value, "value is null");
    // Re-parse the whole configuration so the usual key checks apply.
    auto entries = io::parse_key_values(train::dump_config(cfg->cfg));
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const auto& kv) { return kv.first == key; });
    if (it == entries.end()) {
      fail(ErrorKind::kParse, std::string("unknown key '") + key + "'");
    }
    it->second = value;
    cfg->cfg = train::parse_config(io::dump_key_values(entries), "<config>");
  });
}

imgmatch_status imgmatch_config_write(const imgmatch_config* cfg, const char* path) {
  return guard([&] {
    need(cfg, "config is null");
    need(path, "path is null");
    io::write_file(path, train::dump_config(cfg->cfg));
  });
}

size_t imgmatch_config_layers(const imgmatch_config* cfg) {
  return cfg ? cfg->cfg.layers : 0;
}

void imgmatch_config_free(imgmatch_config* cfg) { delete cfg; }

imgmatch_status imgmatch_model_read(const imgmatch_config* cfg, const char* path,
                                    imgmatch_model** out) {
  return guard([&] {
    need(cfg, "config is null");
    need(path, "path is null");
    need(out, "out is null");
    if (cfg->cfg.manifest.empty()) {
      fail(ErrorKind::kPrecondition, "configuration names no manifest");
    }
    const auto manifest = synth::read_manifest(cfg->cfg.manifest);
    const auto& spec = first_entry(manifest).spec;
    const numcore::Tensor flat = io::read_tensor(path);
    *out = new imgmatch_model{train::ToyModel::unflatten(
        flat, spec.characters, spec.channels, cfg->cfg.layers, cfg->cfg.d)};
  });
}

imgmatch_status imgmatch_model_write(const imgmatch_model* model, const char* path) {
  return guard([&] {
    need(model, "model is null");
    need(path, "path is null");
    io::write_tensor(path, model->model.flatten());
  });
}

void imgmatch_model_free(imgmatch_model* model) { delete model; }

imgmatch_status imgmatch_train(const imgmatch_config* cfg, imgmatch_run** out) {
  return guard([&] {
    need(cfg, "config is null");
    need(out, "out is null");
    *out = new imgmatch_run{train::run_training(cfg->cfg), cfg->cfg.layers};
  });
}

size_t imgmatch_run_steps(const imgmatch_run* run) {
  return run ? run->result.records.size() : 0;
}
size_t imgmatch_run_skipped(const imgmatch_run* run) { return run ? run->result.skipped : 0; }
double imgmatch_run_final_c(const imgmatch_run* run) {
  return run && !run->result.records.empty() ? run->result.records.back().c_mean : 0.0;
}
size_t imgmatch_run_warning_count(const imgmatch_run* run) {
  return run ? run->result.warnings.size() : 0;
}
const char* imgmatch_run_warning(const imgmatch_run* run, size_t k) {
  return run && k < run->result.warnings.size() ? run->result.warnings[k].c_str() : "";
}

imgmatch_status imgmatch_run_write_metrics(const imgmatch_run* run, const char* path) {
  return guard([&] {
    need(run, "run is null");
    need(path, "path is null");
    io::write_file(path, train::metrics_csv(run->result.records, run->layers));
  });
}

imgmatch_status imgmatch_run_model(const imgmatch_run* run, imgmatch_model** out) {
  return guard([&] {
    need(run, "run is null");
    need(out, "out is null");
    *out = new imgmatch_model{run->result.model};
  });
}

void imgmatch_run_free(imgmatch_run* run) { delete run; }

imgmatch_status imgmatch_evaluate(const imgmatch_config* cfg, const imgmatch_model* model,
                                  imgmatch_eval** out) {
  return guard([&] {
    need(cfg, "config is null");
    need(model, "model is null");
    need(out, "out is null");
    if (cfg->cfg.manifest.empty()) {
      fail(ErrorKind::kPrecondition, "configuration names no manifest");
    }
    const auto scenes =
        train::load_scenes(synth::read_manifest(cfg->cfg.manifest), cfg->cfg.layers);
    *out = new imgmatch_eval{train::evaluate_ic(model->model, scenes, cfg->cfg)};
  });
}

double imgmatch_eval_mean_c(const imgmatch_eval* ev) { return ev ? ev->result.mean_c : 0.0; }
size_t imgmatch_eval_scene_count(const imgmatch_eval* ev) {
  return ev ? ev->result.scenes.size() : 0;
}

imgmatch_status imgmatch_eval_write_csv(const imgmatch_eval* ev, const char* path) {
  return guard([&] {
    need(ev, "evaluation is null");
    need(path, "path is null");
    io::write_file(path, train::eval_csv(ev->result));
  });
}

void imgmatch_eval_free(imgmatch_eval* ev) { delete ev; }

imgmatch_status imgmatch_gradcheck_scene(uint64_t seed, double eps, double* wq,
                                         double* wk, double* features) {
  return guard([&] {
    if (!(eps > 0.0)) fail(ErrorKind::kDomain, "eps must be positive");
    const auto g = train::gradcheck_scene(seed, eps);
    if (wq) *wq = g.wq;
    if (wk) *wk = g.wk;
    if (features) *features = g.features;
  });
}

}  // extern "C"
