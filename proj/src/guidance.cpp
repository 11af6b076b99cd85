#include "imgmatch/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "imgmatch/error.hpp"

namespace imgmatch::guidance {

// COCO: 0 nose, 1-2 eyes, 3-4 ears, 5-6 shoulders, 7-8 elbows, 9-10 wrists,
// 11-12 hips, 13-14 knees, 15-16 ankles. The usual 19-link skeleton without
// the eye-to-eye link.
const std::array<std::array<std::size_t, 2>, 18> kLimbs{{
    {15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11},
    {6, 12},  {5, 6},   {5, 7},   {6, 8},   {7, 9},   {8, 10},
    {0, 1},   {0, 2},   {1, 3},   {2, 4},   {3, 5},   {4, 6},
}};

void GuidanceConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) {
    fail(ErrorKind::kDomain, "tau must lie in (0, 1], got " + std::to_string(tau));
  }
  if (!(min_confidence >= 0.0 && min_confidence <= 1.0)) {
    fail(ErrorKind::kDomain, "min_confidence must lie in [0, 1]");
  }
}

std::optional<int> Assignment::identity_of(std::size_t person) const {
  for (const Match& m : matches)
    if (m.person == person) return m.identity;
  return std::nullopt;
}

double enclosure_ratio(const Person& person, const IdentityBox& box,
                       double min_confidence) {
  std::size_t qualifying = 0;
  std::size_t inside = 0;
  for (const Keypoint& k : person.keypoints) {
    if (k.confidence < min_confidence) continue;
    ++qualifying;
    if (k.x >= box.x0 && k.x <= box.x1 && k.y >= box.y0 && k.y <= box.y1) {
      ++inside;
    }
  }
  if (qualifying == 0) fail(ErrorKind::kDomain, "no confident keypoints");
  return static_cast<double>(inside) / static_cast<double>(qualifying);
}

void validate_boxes(std::span<const IdentityBox> boxes) {
  std::set<int> seen;
  for (const IdentityBox& b : boxes) {
    if (!(b.x0 < b.x1 && b.y0 < b.y1)) {
      fail(ErrorKind::kDomain,
           "box " + std::to_string(b.identity) + " has non-positive extent");
    }
    if (!seen.insert(b.identity).second) {
      fail(ErrorKind::kDomain,
           "duplicate box identity " + std::to_string(b.identity) +
               " in frame " + std::to_string(b.frame));
    }
  }
}

Assignment assign_identities(std::span<const Person> persons,
                             std::span<const IdentityBox> boxes,
                             const GuidanceConfig& config) {
  config.validate();
  validate_boxes(boxes);

  struct Candidate {
    double ratio;
    int identity;
    std::size_t person;
    std::size_t box;
  };
  std::vector<Candidate> candidates;
  for (std::size_t p = 0; p < persons.size(); ++p) {
    const auto& kps = persons[p].keypoints;
    const bool any_confident =
        std::any_of(kps.begin(), kps.end(), [&](const Keypoint& k) {
          return k.confidence >= config.min_confidence;
        });
    if (!any_confident) continue;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      const double r = enclosure_ratio(persons[p], boxes[b], config.min_confidence);
      if (r >= config.tau) candidates.push_back({r, boxes[b].identity, p, b});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.ratio != b.ratio) return a.ratio > b.ratio;
              if (a.identity != b.identity) return a.identity < b.identity;
              return a.person < b.person;
            });

  std::vector<bool> person_used(persons.size(), false);
  std::vector<bool> box_used(boxes.size(), false);
  Assignment out;
  for (const Candidate& c : candidates) {
    if (person_used[c.person] || box_used[c.box]) continue;
    person_used[c.person] = true;
    box_used[c.box] = true;
    out.matches.push_back({c.person, c.identity, c.ratio});
  }
  std::sort(out.matches.begin(), out.matches.end(),
            [](const Match& a, const Match& b) { return a.person < b.person; });
  for (std::size_t p = 0; p < persons.size(); ++p)
    if (!person_used[p]) out.unmatched_persons.push_back(p);
  return out;
}

namespace {

void plot(IegRaster& img, long x, long y, Rgb c) {
  if (x < 0 || y < 0) return;
  if (static_cast<std::size_t>(x) >= img.width ||
      static_cast<std::size_t>(y) >= img.height) {
    return;
  }
  img.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
}

void line(IegRaster& img, long x0, long y0, long x1, long y1, Rgb c) {
  const long dx = std::labs(x1 - x0);
  const long dy = -std::labs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1;
  const long sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    plot(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void disc(IegRaster& img, long cx, long cy, long radius, Rgb c) {
  for (long dy = -radius; dy <= radius; ++dy)
    for (long dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) plot(img, cx + dx, cy + dy, c);
}

std::size_t palette_slot(int identity) {
  const int k = identity % 8;
  return static_cast<std::size_t>(k < 0 ? k + 8 : k);
}

}  // namespace

IegRaster render_ieg(const PoseFrame& frame, const Assignment& assignment,
                     const GuidanceConfig& config, std::size_t height,
                     std::size_t width) {
  config.validate();
  if (height < 8 || width < 8) {
    fail(ErrorKind::kDomain, "raster must be at least 8x8");
  }
  IegRaster img(height, width);

  std::vector<Match> order = assignment.matches;
  std::stable_sort(order.begin(), order.end(),
                   [](const Match& a, const Match& b) {
                     return a.identity < b.identity;
                   });
  for (const Match& m : order) {
    if (m.person >= frame.persons.size()) {
      fail(ErrorKind::kDomain, "assignment refers to person " +
                                   std::to_string(m.person) + " but frame " +
                                   std::to_string(frame.index) + " has " +
                                   std::to_string(frame.persons.size()));
    }
    const Person& person = frame.persons[m.person];
    const Rgb color = config.palette[palette_slot(m.identity)];
    auto visible = [&](std::size_t k) {
      return person.keypoints[k].confidence >= config.min_confidence;
    };
    auto px = [&](std::size_t k) { return std::lround(person.keypoints[k].x); };
    auto py = [&](std::size_t k) { return std::lround(person.keypoints[k].y); };
    for (const auto& limb : kLimbs) {
      if (!visible(limb[0]) || !visible(limb[1])) continue;
      line(img, px(limb[0]), py(limb[0]), px(limb[1]), py(limb[1]), color);
    }
    for (std::size_t k = 0; k < kKeypointCount; ++k)
      if (visible(k)) disc(img, px(k), py(k), 2, color);
  }
  return img;
}

Assignment reorder_identities(const Assignment& assignment,
                              const std::map<int, int>& permutation) {
  std::set<int> assigned;
  for (const Match& m : assignment.matches) assigned.insert(m.identity);
  auto image = [&](int id) {
    auto it = permutation.find(id);
    return it == permutation.end() ? id : it->second;
  };
  std::set<int> images;
  for (int id : assigned) {
    const int to = image(id);
    if (!assigned.contains(to) || !images.insert(to).second) {
      fail(ErrorKind::kDomain,
           "identity permutation is not a bijection on the assigned set");
    }
  }
  Assignment out = assignment;
  for (Match& m : out.matches) m.identity = image(m.identity);
  return out;
}

TemporalReport temporal_consistency_report(
    std::span<const PoseFrame> frames, std::span<const Assignment> assignments,
    double image_width, const GuidanceConfig& config, double jump_fraction) {
  if (frames.size() < 2) {
    fail(ErrorKind::kPrecondition,
         "temporal report needs at least two frames");
  }
  if (assignments.size() != frames.size()) {
    fail(ErrorKind::kPrecondition, "one assignment per frame required");
  }
  const double limit = jump_fraction * image_width;

  // identity -> mean confident keypoint of its person
  auto centers = [&](std::size_t t) {
    std::map<int, std::array<double, 2>> out;
    for (const Match& m : assignments[t].matches) {
      const Person& p = frames[t].persons.at(m.person);
      double sx = 0.0, sy = 0.0;
      std::size_t n = 0;
      for (const Keypoint& k : p.keypoints) {
        if (k.confidence < config.min_confidence) continue;
        sx += k.x;
        sy += k.y;
        ++n;
      }
      if (n > 0) out[m.identity] = {sx / n, sy / n};
    }
    return out;
  };

  TemporalReport report;
  report.flagged.resize(frames.size());
  auto prev = centers(0);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    auto cur = centers(t);
    for (const auto& [id, c] : cur) {
      auto it = prev.find(id);
      if (it == prev.end()) continue;
      ++report.transitions;
      report.switches.try_emplace(id, 0);
      const double dist =
          std::hypot(c[0] - it->second[0], c[1] - it->second[1]);
      if (dist > limit) {
        ++report.switches[id];
        ++report.total_switches;
        report.flagged[t].push_back(id);
      }
    }
    prev = std::move(cur);
  }
  report.switch_rate =
      report.transitions == 0
          ? 0.0
          : static_cast<double>(report.total_switches) /
                static_cast<double>(report.transitions);
  return report;
}

}  // namespace imgmatch::guidance
