#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace imgmatch::guidance {

inline constexpr std::size_t kKeypointCount = 17;  // COCO ordering

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct Person {
  std::array<Keypoint, kKeypointCount> keypoints{};

  friend bool operator==(const Person&, const Person&) = default;
};

struct PoseFrame {
  int index = 0;
  std::vector<Person> persons;

  friend bool operator==(const PoseFrame&, const PoseFrame&) = default;
};

struct IdentityBox {
  int identity = 0;
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
  int frame = 0;

  friend bool operator==(const IdentityBox&, const IdentityBox&) = default;
};

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr std::array<Rgb, 8> kDefaultPalette{{
    {255, 0, 0},
    {0, 255, 0},
    {0, 0, 255},
    {255, 255, 0},
    {255, 0, 255},
    {0, 255, 255},
    {255, 128, 0},
    {128, 0, 255},
}};

struct GuidanceConfig {
  double tau = 0.6;             // enclosure threshold, (0, 1]
  double min_confidence = 0.3;  // keypoints below are ignored
  std::array<Rgb, 8> palette = kDefaultPalette;

  void validate() const;
};

// The 18 limb segments drawn per skeleton, as COCO keypoint index pairs.
extern const std::array<std::array<std::size_t, 2>, 18> kLimbs;

struct IegRaster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  IegRaster() = default;
  IegRaster(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, 0) {}

  Rgb pixel(std::size_t y, std::size_t x) const {
    const std::size_t k = (y * width + x) * 3;
    return {rgb[k], rgb[k + 1], rgb[k + 2]};
  }
  void set(std::size_t y, std::size_t x, Rgb c) {
    const std::size_t k = (y * width + x) * 3;
    rgb[k] = c.r;
    rgb[k + 1] = c.g;
    rgb[k + 2] = c.b;
  }

  friend bool operator==(const IegRaster&, const IegRaster&) = default;
};

// Fraction of confident keypoints inside the box (boundary counts as inside).
double enclosure_ratio(const Person& person, const IdentityBox& box,
                       double min_confidence);

struct Match {
  std::size_t person = 0;
  int identity = 0;
  double ratio = 0.0;

  friend bool operator==(const Match&, const Match&) = default;
};

struct Assignment {
  std::vector<Match> matches;  // ordered by person index
  std::vector<std::size_t> unmatched_persons;

  std::optional<int> identity_of(std::size_t person) const;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

void validate_boxes(std::span<const IdentityBox> boxes);

// Greedy one-to-one pairing in descending ratio order (ties: smaller
// identity, then smaller person index). Pairs with ratio < tau are skipped.
Assignment assign_identities(std::span<const Person> persons,
                             std::span<const IdentityBox> boxes,
                             const GuidanceConfig& config);

// Skeletons of matched persons in palette[identity mod 8], drawn in
// ascending identity order so later identities overwrite earlier ones.
IegRaster render_ieg(const PoseFrame& frame, const Assignment& assignment,
                     const GuidanceConfig& config, std::size_t height,
                     std::size_t width);

// Replaces each matched identity by its image under `permutation`.
// Identities missing from the map stay put.
Assignment reorder_identities(const Assignment& assignment,
                              const std::map<int, int>& permutation);

struct TemporalReport {
  std::map<int, std::size_t> switches;    // identity -> jump count
  std::vector<std::vector<int>> flagged;  // per frame, identities that jumped
  std::size_t transitions = 0;            // identity-present frame pairs
  std::size_t total_switches = 0;
  double switch_rate = 0.0;
};

// Flags an identity at frame t when its person's mean confident keypoint
// moves more than jump_fraction * image_width from frame t-1.
TemporalReport temporal_consistency_report(
    std::span<const PoseFrame> frames, std::span<const Assignment> assignments,
    double image_width, const GuidanceConfig& config,
    double jump_fraction = 0.25);

}  // namespace imgmatch::guidance
