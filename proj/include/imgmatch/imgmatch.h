/* C interface to the identity-matching engine.
 *
 * Every fallible call returns an imgmatch_status; on failure the message is
 * available from imgmatch_last_error() on the same thread. Handles are
 * opaque and owned by the caller, who releases them with the matching
 * *_free function (passing NULL is allowed). */
#ifndef IMGMATCH_H
#define IMGMATCH_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define IMGMATCH_API __declspec(dllexport)
#else
#define IMGMATCH_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum imgmatch_status {
  IMGMATCH_OK = 0,
  IMGMATCH_E_SHAPE = 1,
  IMGMATCH_E_DOMAIN = 2,
  IMGMATCH_E_NUMERIC = 3,
  IMGMATCH_E_PRECONDITION = 4,
  IMGMATCH_E_PARSE = 5,
  IMGMATCH_E_IO = 6,
  IMGMATCH_E_ARGUMENT = 7, /* null pointer or out-of-range enum */
  IMGMATCH_E_INTERNAL = 8
} imgmatch_status;

typedef enum imgmatch_mode {
  IMGMATCH_MODE_FAST = 0,
  IMGMATCH_MODE_PAIRWISE = 1
} imgmatch_mode;

IMGMATCH_API const char* imgmatch_status_name(imgmatch_status status);
/* Message of the last failure on this thread; "" if none. */
IMGMATCH_API const char* imgmatch_last_error(void);
IMGMATCH_API const char* imgmatch_version(void);

/* ---- tensors (TSR1, f32) ---- */

typedef struct imgmatch_tensor imgmatch_tensor;

/* data may be NULL for zeros. */
IMGMATCH_API imgmatch_status imgmatch_tensor_create(const size_t* shape, size_t rank,
                                                    const float* data,
                                                    imgmatch_tensor** out);
IMGMATCH_API imgmatch_status imgmatch_tensor_read(const char* path, imgmatch_tensor** out);
IMGMATCH_API imgmatch_status imgmatch_tensor_write(const imgmatch_tensor* t,
                                                   const char* path);
IMGMATCH_API size_t imgmatch_tensor_rank(const imgmatch_tensor* t);
IMGMATCH_API size_t imgmatch_tensor_dim(const imgmatch_tensor* t, size_t axis);
IMGMATCH_API size_t imgmatch_tensor_size(const imgmatch_tensor* t);
IMGMATCH_API const float* imgmatch_tensor_data(const imgmatch_tensor* t);
IMGMATCH_API void imgmatch_tensor_free(imgmatch_tensor* t);

/* ---- identity matching graph ---- */

typedef struct imgmatch_score_options {
  size_t d;               /* projection width */
  imgmatch_mode mode;
  int background_mask;    /* nonzero excludes out-of-mask keys */
  double gamma;
  uint64_t seed;          /* projections when wq/wk are NULL */
  const imgmatch_tensor* wq; /* c x d, optional */
  const imgmatch_tensor* wk; /* c x d, optional */
} imgmatch_score_options;

/* d=16, fast, background keys included, gamma=1e-8, seed 0, no weights. */
IMGMATCH_API void imgmatch_score_options_init(imgmatch_score_options* opts);

typedef struct imgmatch_graph imgmatch_graph;

/* Scores one frame pair from files: two c x h x w feature tensors, two mask
 * directories (ref_<id>.pgm / gen_<id>.pgm or <id>.pgm) and a matching
 * document. Masks at another resolution are any-pooled to the features.
 * Without wq/wk, one N(0, 2^2) draw from `seed` serves as both. */
IMGMATCH_API imgmatch_status imgmatch_img_score_files(
    const char* features_ref, const char* features_gen, const char* masks_ref_dir,
    const char* masks_gen_dir, const char* matching, const imgmatch_score_options* opts,
    imgmatch_graph** out);
IMGMATCH_API double imgmatch_graph_consistency(const imgmatch_graph* g);
IMGMATCH_API int imgmatch_graph_degenerate(const imgmatch_graph* g);
IMGMATCH_API size_t imgmatch_graph_m(const imgmatch_graph* g);
IMGMATCH_API size_t imgmatch_graph_n(const imgmatch_graph* g);
IMGMATCH_API int imgmatch_graph_ref_id(const imgmatch_graph* g, size_t i);
IMGMATCH_API int imgmatch_graph_gen_id(const imgmatch_graph* g, size_t j);
/* w(r_i, g_j) */
IMGMATCH_API double imgmatch_graph_weight(const imgmatch_graph* g, size_t j, size_t i);
IMGMATCH_API imgmatch_status imgmatch_graph_write_weights_csv(const imgmatch_graph* g,
                                                              const char* path);
IMGMATCH_API void imgmatch_graph_free(imgmatch_graph* g);

/* ---- identity-embedded guidance ---- */

typedef struct imgmatch_ieg_options {
  double tau;
  double min_confidence;
} imgmatch_ieg_options;

IMGMATCH_API void imgmatch_ieg_options_init(imgmatch_ieg_options* opts);

/* Assigns every frame of a pose document; writes assignment JSON. Counts
 * over all frames are returned through the optional pointers. */
IMGMATCH_API imgmatch_status imgmatch_ieg_assign_file(const char* poses,
                                                      const imgmatch_ieg_options* opts,
                                                      const char* out, size_t* matched,
                                                      size_t* unmatched);

/* Renders the frame with the given index (the first frame when index < 0)
 * as a height x width PPM. */
IMGMATCH_API imgmatch_status imgmatch_ieg_render_file(const char* poses,
                                                      const char* assignments,
                                                      long frame_index, size_t height,
                                                      size_t width,
                                                      const imgmatch_ieg_options* opts,
                                                      const char* out);

/* ---- pre-classified sampling ---- */

typedef struct imgmatch_pcs_stats {
  size_t all_pairs;
  size_t swap_pairs;
  size_t draws;
  size_t swap_draws;
  double swap_fraction;
  int fell_back; /* no swap pairs; sampled uniformly */
} imgmatch_pcs_stats;

/* max_gap 0 means unbounded. pairs_out may be NULL. */
IMGMATCH_API imgmatch_status imgmatch_pcs_plan_file(const char* positions, double rho,
                                                    size_t draws, uint64_t seed,
                                                    size_t min_gap, size_t max_gap,
                                                    const char* stats_out,
                                                    const char* pairs_out,
                                                    imgmatch_pcs_stats* stats);

/* ---- synthetic scenes ---- */

typedef struct imgmatch_synth_options {
  size_t height;
  size_t width;
  size_t channels;
  size_t characters;
  double region_width_fraction;
  double embedding_scale;
  double sigma;
  double cue_corruption;
  uint64_t embedding_seed;
} imgmatch_synth_options;

IMGMATCH_API void imgmatch_synth_options_init(imgmatch_synth_options* opts);

/* Writes `count` scenes and manifest.jsonl under out_dir. */
IMGMATCH_API imgmatch_status imgmatch_synth_dataset(const imgmatch_synth_options* opts,
                                                    size_t count, double swap_share,
                                                    uint64_t seed, const char* out_dir,
                                                    size_t* swap_count);

/* ---- training ---- */

typedef struct imgmatch_config imgmatch_config;

/* Defaults; no manifest. */
IMGMATCH_API imgmatch_status imgmatch_config_create(imgmatch_config** out);
IMGMATCH_API imgmatch_status imgmatch_config_read(const char* path, imgmatch_config** out);
/* Sets one key as a config line would; a relative manifest path is taken
 * as given. */
IMGMATCH_API imgmatch_status imgmatch_config_set(imgmatch_config* cfg, const char* key,
                                                 const char* value);
IMGMATCH_API imgmatch_status imgmatch_config_write(const imgmatch_config* cfg,
                                                   const char* path);
IMGMATCH_API size_t imgmatch_config_layers(const imgmatch_config* cfg);
IMGMATCH_API void imgmatch_config_free(imgmatch_config* cfg);

typedef struct imgmatch_model imgmatch_model;

/* Model files are the flat parameter vector as a 1-D TSR1 tensor; the
 * layout follows the configuration and the manifest's scene shapes. */
IMGMATCH_API imgmatch_status imgmatch_model_read(const imgmatch_config* cfg,
                                                 const char* path, imgmatch_model** out);
IMGMATCH_API imgmatch_status imgmatch_model_write(const imgmatch_model* model,
                                                  const char* path);
IMGMATCH_API void imgmatch_model_free(imgmatch_model* model);

typedef struct imgmatch_run imgmatch_run;

IMGMATCH_API imgmatch_status imgmatch_train(const imgmatch_config* cfg, imgmatch_run** out);
IMGMATCH_API size_t imgmatch_run_steps(const imgmatch_run* run);
IMGMATCH_API size_t imgmatch_run_skipped(const imgmatch_run* run);
/* c_mean of the last record. */
IMGMATCH_API double imgmatch_run_final_c(const imgmatch_run* run);
IMGMATCH_API size_t imgmatch_run_warning_count(const imgmatch_run* run);
IMGMATCH_API const char* imgmatch_run_warning(const imgmatch_run* run, size_t k);
IMGMATCH_API imgmatch_status imgmatch_run_write_metrics(const imgmatch_run* run,
                                                        const char* path);
/* Copy of the trained model. */
IMGMATCH_API imgmatch_status imgmatch_run_model(const imgmatch_run* run,
                                                imgmatch_model** out);
IMGMATCH_API void imgmatch_run_free(imgmatch_run* run);

typedef struct imgmatch_eval imgmatch_eval;

IMGMATCH_API imgmatch_status imgmatch_evaluate(const imgmatch_config* cfg,
                                               const imgmatch_model* model,
                                               imgmatch_eval** out);
IMGMATCH_API double imgmatch_eval_mean_c(const imgmatch_eval* ev);
IMGMATCH_API size_t imgmatch_eval_scene_count(const imgmatch_eval* ev);
IMGMATCH_API imgmatch_status imgmatch_eval_write_csv(const imgmatch_eval* ev,
                                                     const char* path);
IMGMATCH_API void imgmatch_eval_free(imgmatch_eval* ev);

/* ---- gradient check ---- */

/* Central-difference check of the matching loss on a seeded 2-character
 * 8x8 scene. Each output is a max relative error; any may be NULL. */
IMGMATCH_API imgmatch_status imgmatch_gradcheck_scene(uint64_t seed, double eps,
                                                      double* wq, double* wk,
                                                      double* features);

#ifdef __cplusplus
}
#endif

#endif
