#include "imgmatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <json.hpp>

#include "imgmatch/error.hpp"
#include "imgmatch/io.hpp"

namespace imgmatch::synth {

using json = nlohmann::json;
using graph::CharacterMask;
using graph::FeatureMap;
using numcore::Tensor;

void SceneSpec::validate() const {
  if (characters < 2 || characters > 5) {
    fail(ErrorKind::kDomain, "character count must lie in [2, 5]");
  }
  if (height < 1 || channels < 1) {
    fail(ErrorKind::kDomain, "height and channels must be positive");
  }
  if (width < characters) {
    fail(ErrorKind::kDomain, "width " + std::to_string(width) +
                                 " cannot hold " + std::to_string(characters) +
                                 " disjoint regions");
  }
  if (!(region_width_fraction > 0.0 && region_width_fraction <= 1.0)) {
    fail(ErrorKind::kDomain, "region width fraction must lie in (0, 1]");
  }
  if (!(embedding_scale > 0.0) || !std::isfinite(embedding_scale)) {
    fail(ErrorKind::kDomain, "embedding scale must be positive");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    fail(ErrorKind::kDomain, "sigma must be >= 0");
  }
  if (!(cue_corruption >= 0.0 && cue_corruption <= 1.0)) {
    fail(ErrorKind::kDomain, "cue corruption must lie in [0, 1]");
  }
}

namespace {

// Column span of the strip in slot k.
std::pair<std::size_t, std::size_t> strip_columns(const SceneSpec& spec,
                                                  std::size_t k) {
  const std::size_t m = spec.characters;
  const std::size_t lo = k * spec.width / m;
  const std::size_t hi = (k + 1) * spec.width / m;
  const std::size_t slot = hi - lo;
  const auto strip = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(spec.region_width_fraction *
                                           static_cast<double>(slot))),
      1, slot);
  const std::size_t left = lo + (slot - strip) / 2;
  return {left, left + strip};
}

CharacterMask strip_mask(const SceneSpec& spec, std::size_t slot, int identity) {
  auto mask = CharacterMask::zeros(identity, spec.height, spec.width);
  const auto [x0, x1] = strip_columns(spec, slot);
  const std::size_t y0 = spec.height / 8;
  const std::size_t y1 = spec.height - spec.height / 8;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) mask.at(y, x) = 1;
  return mask;
}

Tensor draw_embeddings(const SceneSpec& spec, std::mt19937_64& rng) {
  const std::size_t m = spec.characters;
  const std::size_t c = spec.channels;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> rows;
  int attempts = 0;
  while (rows.size() < m) {
    if (++attempts > kMaxEmbeddingAttempts) {
      fail(ErrorKind::kDomain, "cannot separate identities: no set of " +
                                   std::to_string(m) + " embeddings in " +
                                   std::to_string(c) +
                                   " channels with pairwise |cos| <= 0.3");
    }
    std::vector<double> v(c);
    double norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (double& x : v) x /= norm;
    const bool separated = std::all_of(rows.begin(), rows.end(), [&](const auto& r) {
      return std::abs(std::inner_product(r.begin(), r.end(), v.begin(), 0.0)) <=
             kMaxEmbeddingCosine;
    });
    if (separated) rows.push_back(std::move(v));
  }
  Tensor e({m, c});
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t ch = 0; ch < c; ++ch)
      e.at(k, ch) = static_cast<float>(rows[k][ch]);
  return e;
}

}  // namespace

SynthScene gen_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t m = spec.characters;
  const std::size_t c = spec.channels;
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  std::mt19937_64 rng(seed);

  SynthScene s;
  s.seed = seed;
  s.swap = spec.swap;
  std::mt19937_64 embedding_rng(spec.embedding_seed);
  s.embeddings = draw_embeddings(spec, embedding_rng);

  s.target_layout.resize(m);
  std::iota(s.target_layout.begin(), s.target_layout.end(), 0);
  if (spec.swap) {
    const auto identity = s.target_layout;
    while (s.target_layout == identity)
      std::shuffle(s.target_layout.begin(), s.target_layout.end(), rng);
  }

  s.cue_layout = s.target_layout;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> wrong(0, m - 2);
  for (std::size_t slot = 0; slot < m; ++slot) {
    if (coin(rng) >= spec.cue_corruption) continue;
    // Uniform over the m-1 identities other than the true one.
    auto k = static_cast<int>(wrong(rng));
    if (k >= s.target_layout[slot]) ++k;
    s.cue_layout[slot] = k;
  }

  Tensor f_ref({c, h, w});
  Tensor target({c, h, w});
  Tensor cue({m, h, w});
  std::normal_distribution<double> noise(0.0, spec.sigma > 0.0 ? spec.sigma : 1.0);
  const auto scale = spec.embedding_scale;
  for (std::size_t slot = 0; slot < m; ++slot) {
    const int ref_id = static_cast<int>(slot);
    const int gen_id = s.target_layout[slot];
    s.masks_ref.push_back(strip_mask(spec, slot, ref_id));
    s.masks_gen.push_back(strip_mask(spec, slot, gen_id));
    s.gt[gen_id] = gen_id;
    for (std::size_t p : s.masks_ref.back().indices()) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = scale * s.embeddings.at(static_cast<std::size_t>(ref_id), ch);
        if (spec.sigma > 0.0) v += noise(rng);
        f_ref[ch * h * w + p] = static_cast<float>(v);
        target[ch * h * w + p] = static_cast<float>(
            scale * s.embeddings.at(static_cast<std::size_t>(gen_id), ch));
      }
      cue[static_cast<std::size_t>(s.cue_layout[slot]) * h * w + p] = 1.0f;
    }
  }
  s.f_ref = {std::move(f_ref), 1};
  s.target_features = {std::move(target), 1};
  s.cue = {std::move(cue), 1};
  return s;
}

namespace {

json spec_to_json(const SceneSpec& s) {
  return {{"height", s.height},
          {"width", s.width},
          {"channels", s.channels},
          {"characters", s.characters},
          {"region_width_fraction", s.region_width_fraction},
          {"embedding_scale", s.embedding_scale},
          {"sigma", s.sigma},
          {"swap", s.swap},
          {"cue_corruption", s.cue_corruption},
          {"embedding_seed", s.embedding_seed}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec s;
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.channels = j.at("channels").get<std::size_t>();
  s.characters = j.at("characters").get<std::size_t>();
  s.region_width_fraction = j.at("region_width_fraction").get<double>();
  s.embedding_scale = j.at("embedding_scale").get<double>();
  s.sigma = j.at("sigma").get<double>();
  s.swap = j.at("swap").get<bool>();
  s.cue_corruption = j.at("cue_corruption").get<double>();
  s.embedding_seed = j.at("embedding_seed").get<std::uint64_t>();
  s.validate();
  return s;
}

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", i);
  return buf;
}

}  // namespace

void write_scene(const SynthScene& scene, const std::filesystem::path& dir) {
  io::write_tensor(dir / "f_ref.tsr", scene.f_ref.values);
  io::write_tensor(dir / "cue.tsr", scene.cue.values);
  io::write_tensor(dir / "target.tsr", scene.target_features.values);
  for (const CharacterMask& mk : scene.masks_ref)
    io::write_pgm(dir / ("ref_" + std::to_string(mk.identity) + ".pgm"), mk);
  for (const CharacterMask& mk : scene.masks_gen)
    io::write_pgm(dir / ("gen_" + std::to_string(mk.identity) + ".pgm"), mk);
  io::MatchingDocument doc;
  for (const CharacterMask& mk : scene.masks_ref) doc.ref_ids.push_back(mk.identity);
  for (const CharacterMask& mk : scene.masks_gen) doc.gen_ids.push_back(mk.identity);
  doc.gt = scene.gt;
  io::write_file(dir / "matching.json", io::dump_matching(doc));
}

SynthScene read_scene(const Manifest& manifest, const ManifestEntry& entry) {
  const auto dir = manifest.scene_dir(entry);
  SynthScene s;
  s.seed = entry.seed;
  s.swap = entry.swap;
  s.f_ref = {io::read_tensor(dir / "f_ref.tsr"), 1};
  s.cue = {io::read_tensor(dir / "cue.tsr"), 1};
  s.target_features = {io::read_tensor(dir / "target.tsr"), 1};
  s.masks_ref = graph::order_left_to_right(io::read_mask_dir(dir, "ref"));
  s.masks_gen = graph::order_left_to_right(io::read_mask_dir(dir, "gen"));
  s.gt = io::parse_matching(io::read_file(dir / "matching.json"),
                            (dir / "matching.json").string())
             .gt;
  graph::validate_feature_map(s.f_ref);
  graph::validate_feature_map(s.target_features);
  if (s.f_ref.values.shape() != s.target_features.values.shape() ||
      s.cue.height() != s.f_ref.height() || s.cue.width() != s.f_ref.width()) {
    fail(ErrorKind::kShape, "scene " + entry.scene + " has inconsistent tensors");
  }
  for (const CharacterMask& mk : s.masks_gen) {
    s.target_layout.push_back(mk.identity);
    // Cue channel painted over this region.
    const std::size_t p = mk.indices().front();
    const std::size_t hw = s.cue.height() * s.cue.width();
    int painted = -1;
    for (std::size_t ch = 0; ch < s.cue.channels(); ++ch)
      if (s.cue.values[ch * hw + p] != 0.0f) painted = static_cast<int>(ch);
    s.cue_layout.push_back(painted);
  }
  return s;
}

void write_manifest(const Manifest& manifest) {
  std::string out;
  for (const ManifestEntry& e : manifest.entries) {
    json gt = json::array();
    for (const auto& [gen, ref] : e.gt) gt.push_back({{"gen", gen}, {"ref", ref}});
    json files = {{"f_ref", e.scene + "/f_ref.tsr"},
                  {"cue", e.scene + "/cue.tsr"},
                  {"target", e.scene + "/target.tsr"},
                  {"matching", e.scene + "/matching.json"}};
    json line = {{"scene", e.scene}, {"seed", e.seed},  {"swap", e.swap},
                 {"gt", gt},         {"files", files}, {"spec", spec_to_json(e.spec)}};
    out += line.dump() + "\n";
  }
  io::write_file(manifest.root / kManifestName, out);
}

Manifest read_manifest(const std::filesystem::path& path) {
  Manifest m;
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(path)) file = path / kManifestName;
  m.root = file.parent_path();
  const std::string text = io::read_file(file);
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    ++line_no;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = file.string() + ": line " + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.scene = j.at("scene").get<std::string>();
      e.seed = j.at("seed").get<std::uint64_t>();
      e.swap = j.at("swap").get<bool>();
      for (const json& g : j.at("gt")) {
        if (!e.gt.emplace(g.at("gen").get<int>(), g.at("ref").get<int>()).second) {
          fail(ErrorKind::kParse, where + ": duplicate generated identity");
        }
      }
      e.spec = spec_from_json(j.at("spec"));
      m.entries.push_back(std::move(e));
    } catch (const json::parse_error& ex) {
      fail(ErrorKind::kParse, where + ", byte " + std::to_string(ex.byte) + ": " + ex.what());
    } catch (const json::exception& ex) {
      fail(ErrorKind::kParse, where + ": " + ex.what());
    } catch (const Error& ex) {
      if (ex.kind() == ErrorKind::kParse) throw;
      fail(ErrorKind::kParse, where + ": " + ex.what());
    }
  }
  if (m.entries.empty()) fail(ErrorKind::kParse, file.string() + ": empty manifest");
  return m;
}

Manifest gen_dataset(const SceneSpec& spec, std::size_t count,
                     double swap_share, std::uint64_t base_seed,
                     const std::filesystem::path& out) {
  spec.validate();
  if (count < 1) fail(ErrorKind::kDomain, "count must be >= 1");
  if (!(swap_share >= 0.0 && swap_share <= 1.0)) {
    fail(ErrorKind::kDomain, "swap share must lie in [0, 1]");
  }
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out)) {
    fail(ErrorKind::kIo, "cannot create output directory " + out.string());
  }

  const auto swaps = static_cast<std::size_t>(
      std::llround(static_cast<double>(count) * swap_share));
  std::vector<bool> is_swap(count, false);
  std::fill(is_swap.begin(), is_swap.begin() + static_cast<std::ptrdiff_t>(swaps), true);
  std::mt19937_64 rng(base_seed);
  std::shuffle(is_swap.begin(), is_swap.end(), rng);

  Manifest manifest;
  manifest.root = out;
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec s = spec;
    s.swap = is_swap[i];
    const std::uint64_t seed = base_seed + i;
    const SynthScene scene = gen_scene(s, seed);
    ManifestEntry e{scene_name(i), seed, s.swap, scene.gt, s};
    write_scene(scene, out / e.scene);
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(manifest);
  return manifest;
}

}  // namespace imgmatch::synth
