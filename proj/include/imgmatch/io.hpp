#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "imgmatch/graph.hpp"
#include "imgmatch/guidance.hpp"
#include "imgmatch/sampling.hpp"
#include "imgmatch/tensor.hpp"

namespace imgmatch::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path);
// Writes bytes verbatim, creating parent directories.
void write_file(const fs::path& path, std::string_view bytes);

// TSR1: four LF-terminated header lines then little-endian f32 payload.
std::string encode_tensor(const numcore::Tensor& t);
numcore::Tensor decode_tensor(std::string_view bytes,
                              std::string_view source = "<memory>");
void write_tensor(const fs::path& path, const numcore::Tensor& t);
numcore::Tensor read_tensor(const fs::path& path);

// Binary PGM (P5, maxval 255). Masks are written 0/255 and read as
// nonzero -> 1.
std::string encode_pgm(const graph::CharacterMask& mask);
graph::CharacterMask decode_pgm(std::string_view bytes, int identity,
                                std::string_view source = "<memory>");
void write_pgm(const fs::path& path, const graph::CharacterMask& mask);
graph::CharacterMask read_pgm(const fs::path& path, int identity);

// Binary PPM (P6, maxval 255).
std::string encode_ppm(const guidance::IegRaster& img);
guidance::IegRaster decode_ppm(std::string_view bytes,
                               std::string_view source = "<memory>");
void write_ppm(const fs::path& path, const guidance::IegRaster& img);
guidance::IegRaster read_ppm(const fs::path& path);

// Masks named <prefix>_<id>.pgm, or <id>.pgm when none carry the prefix.
// Sorted by identity.
std::vector<graph::CharacterMask> read_mask_dir(const fs::path& dir,
                                                std::string_view prefix);

// Pose input.
struct PoseFrameRecord {
  guidance::PoseFrame frame;
  std::vector<guidance::IdentityBox> boxes;

  friend bool operator==(const PoseFrameRecord&,
                         const PoseFrameRecord&) = default;
};

struct PoseDocument {
  std::vector<PoseFrameRecord> frames;

  friend bool operator==(const PoseDocument&, const PoseDocument&) = default;
};

PoseDocument parse_poses(std::string_view text,
                         std::string_view source = "<memory>");
std::string dump_poses(const PoseDocument& doc);
PoseDocument read_poses(const fs::path& path);
void write_poses(const fs::path& path, const PoseDocument& doc);

// Assignment output.
struct AssignmentFrame {
  int index = 0;
  guidance::Assignment assignment;

  friend bool operator==(const AssignmentFrame&,
                         const AssignmentFrame&) = default;
};

std::vector<AssignmentFrame> parse_assignments(
    std::string_view text, std::string_view source = "<memory>");
std::string dump_assignments(std::span<const AssignmentFrame> frames);

// Positions input.
std::vector<sampling::CharacterPositions> parse_positions(
    std::string_view text, std::string_view source = "<memory>");
std::string dump_positions(
    std::span<const sampling::CharacterPositions> frames);

// Ground-truth matching with identity orderings:
// {"ref_ids":[...],"gen_ids":[...],"gt":{"<gen_id>":"<ref_id>"}}.
// ref_ids is the left-to-right reference order, gen_ids the generated order.
struct MatchingDocument {
  std::vector<int> ref_ids;
  std::vector<int> gen_ids;
  graph::GroundTruth gt;

  friend bool operator==(const MatchingDocument&, const MatchingDocument&) = default;
};

MatchingDocument parse_matching(std::string_view text,
                                std::string_view source = "<memory>");
std::string dump_matching(const MatchingDocument& doc);

// CSV writers; header first, LF line endings.
std::string weights_csv(std::span<const graph::IdentityMatchingGraph> graphs);
std::string layer_c_csv(std::span<const std::pair<int, double>> rows);
std::string pair_index_csv(const sampling::PairIndex& index);
std::string sampling_stats_csv(const sampling::SamplingStats& stats);

// Flat key=value lines. Blank lines and '#' comments are skipped; CRLF is
// accepted. Duplicate keys and malformed lines are parse errors.
std::vector<std::pair<std::string, std::string>> parse_key_values(
    std::string_view text, std::string_view source = "<memory>");
std::string dump_key_values(
    std::span<const std::pair<std::string, std::string>> entries);

// Shortest decimal that parses back to the same double.
std::string format_double(double v);

}  // namespace imgmatch::io
