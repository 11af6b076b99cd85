#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imgmatch/graph.hpp"

namespace imgmatch::synth {

struct SceneSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 8;
  std::size_t characters = 2;
  // Strip width as a fraction of each character's horizontal slot.
  double region_width_fraction = 0.75;
  double embedding_scale = 1.0;
  double sigma = 0.0;
  bool swap = false;
  double cue_corruption = 0.25;
  // Identity embeddings come from this seed, not the scene seed, so a
  // character looks the same in every scene of a dataset.
  std::uint64_t embedding_seed = 0;

  void validate() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct SynthScene {
  graph::FeatureMap f_ref;            // c x H x W
  graph::FeatureMap cue;              // m x H x W identity one-hot
  graph::FeatureMap target_features;  // c x H x W
  std::vector<graph::CharacterMask> masks_ref;  // left to right
  std::vector<graph::CharacterMask> masks_gen;  // left to right
  graph::GroundTruth gt;
  bool swap = false;
  std::uint64_t seed = 0;
  std::vector<int> target_layout;  // slot -> identity
  std::vector<int> cue_layout;     // slot -> identity painted in the cue
  numcore::Tensor embeddings;      // m x c, unit rows before scaling
};

inline constexpr double kMaxEmbeddingCosine = 0.3;
inline constexpr int kMaxEmbeddingAttempts = 1000;

SynthScene gen_scene(const SceneSpec& spec, std::uint64_t seed);

struct ManifestEntry {
  std::string scene;  // directory name relative to the manifest
  std::uint64_t seed = 0;
  bool swap = false;
  graph::GroundTruth gt;
  SceneSpec spec;
};

struct Manifest {
  std::filesystem::path root;  // directory holding manifest.jsonl
  std::vector<ManifestEntry> entries;

  std::filesystem::path scene_dir(const ManifestEntry& e) const {
    return root / e.scene;
  }
};

inline constexpr const char* kManifestName = "manifest.jsonl";

// Writes `count` scenes under `out` plus manifest.jsonl. Exactly
// round(count * swap_share) scenes are position swaps; scene i uses seed
// base_seed + i.
Manifest gen_dataset(const SceneSpec& spec, std::size_t count,
                     double swap_share, std::uint64_t base_seed,
                     const std::filesystem::path& out);

void write_scene(const SynthScene& scene, const std::filesystem::path& dir);
SynthScene read_scene(const Manifest& manifest, const ManifestEntry& entry);

void write_manifest(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace imgmatch::synth
