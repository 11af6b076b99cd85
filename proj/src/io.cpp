#include "imgmatch/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "imgmatch/error.hpp"

namespace imgmatch::io {

using json = nlohmann::json;
using numcore::Shape;
using numcore::Tensor;

namespace {

std::string at_source(std::string_view source) {
  return std::string(source) + ": ";
}

[[noreturn]] void parse_fail(std::string_view source, const std::string& msg) {
  fail(ErrorKind::kParse, at_source(source) + msg);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) fail(ErrorKind::kNumeric, "cannot format number");
  return std::string(buf, end);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::kIo, "read failed: " + path.string());
  return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

// ---- TSR1 ----

std::string encode_tensor(const Tensor& t) {
  std::string out = "TSR1\ndtype f32\nshape";
  for (std::size_t d : t.shape()) out += " " + std::to_string(d);
  out += "\nend\n";
  const std::size_t header = out.size();
  out.resize(header + t.size() * 4);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const auto bits = std::bit_cast<std::uint32_t>(t[k]);
    for (int b = 0; b < 4; ++b) {
      out[header + k * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
  }
  return out;
}

Tensor decode_tensor(std::string_view bytes, std::string_view source) {
  std::size_t pos = 0;
  int line_no = 0;
  // Returns the next header line without its terminator (LF or CRLF).
  auto next_line = [&](const char* what) {
    ++line_no;
    const std::size_t start = pos;
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) {
      parse_fail(source, "line " + std::to_string(line_no) + " (byte " +
                             std::to_string(start) + "): missing " + what +
                             " line");
    }
    pos = nl + 1;
    std::string_view s = bytes.substr(start, nl - start);
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return std::pair{s, start};
  };
  auto where = [&](std::size_t byte) {
    return "line " + std::to_string(line_no) + " (byte " +
           std::to_string(byte) + "): ";
  };

  auto [magic, magic_at] = next_line("magic");
  if (magic != "TSR1") {
    parse_fail(source, where(magic_at) + "bad magic '" + std::string(magic) +
                           "', expected 'TSR1'");
  }
  auto [dtype, dtype_at] = next_line("dtype");
  if (dtype != "dtype f32") {
    parse_fail(source, where(dtype_at) + "unsupported dtype line '" +
                           std::string(dtype) + "', expected 'dtype f32'");
  }
  auto [shape_line, shape_at] = next_line("shape");
  if (!shape_line.starts_with("shape")) {
    parse_fail(source, where(shape_at) + "expected 'shape d0 ... dk'");
  }
  Shape shape;
  {
    std::string_view rest = shape_line.substr(5);
    std::size_t off = 5;
    while (!rest.empty()) {
      if (rest.front() != ' ') {
        parse_fail(source, where(shape_at + off) + "malformed shape line");
      }
      rest.remove_prefix(1);
      ++off;
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), v);
      if (ec != std::errc() || v == 0) {
        parse_fail(source, where(shape_at + off) +
                               "shape dimensions must be positive integers");
      }
      const auto used = static_cast<std::size_t>(p - rest.data());
      rest.remove_prefix(used);
      off += used;
      shape.push_back(v);
    }
    if (shape.empty()) {
      parse_fail(source, where(shape_at) + "shape has no dimensions");
    }
  }
  auto [end_line, end_at] = next_line("end");
  if (end_line != "end") {
    parse_fail(source, where(end_at) + "expected 'end'");
  }

  const std::size_t count = numcore::shape_size(shape);
  const std::size_t available = bytes.size() - pos;
  if (available < count * 4) {
    parse_fail(source, "payload truncated at byte " +
                           std::to_string(bytes.size()) + ": shape " +
                           numcore::shape_string(shape) + " needs " +
                           std::to_string(count) + " values, found " +
                           std::to_string(available / 4));
  }
  if (available > count * 4) {
    parse_fail(source, "byte " + std::to_string(pos + count * 4) + ": " +
                           std::to_string(available - count * 4) +
                           " bytes past the end of the payload");
  }
  std::vector<float> data(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(
                  static_cast<unsigned char>(bytes[pos + k * 4 + b]))
              << (8 * b);
    }
    data[k] = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const fs::path& path, const Tensor& t) {
  write_file(path, encode_tensor(t));
}

Tensor read_tensor(const fs::path& path) {
  return decode_tensor(read_file(path), path.string());
}

// ---- PGM / PPM ----

namespace {

struct NetpbmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_netpbm(std::string_view bytes, std::string_view magic,
                          std::string_view source) {
  if (bytes.substr(0, 2) != magic) {
    parse_fail(source, "byte 0: bad magic, expected '" + std::string(magic) + "'");
  }
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(bytes.data() + pos,
                                   bytes.data() + bytes.size(), v);
    if (ec != std::errc()) {
      parse_fail(source, "byte " + std::to_string(pos) + ": expected " + what);
    }
    pos = static_cast<std::size_t>(p - bytes.data());
    return v;
  };
  NetpbmHeader h;
  h.width = number("width");
  h.height = number("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = number("maxval");
  if (h.width == 0 || h.height == 0) {
    parse_fail(source, "image dimensions must be positive");
  }
  if (maxval != 255) {
    parse_fail(source, "byte " + std::to_string(maxval_at) +
                           ": maxval must be 255, got " +
                           std::to_string(maxval));
  }
  if (pos >= bytes.size()) {
    parse_fail(source, "byte " + std::to_string(pos) +
                           ": missing whitespace before pixel data");
  }
  // Exactly one whitespace byte separates the header from the raster.
  h.data_offset = pos + 1;
  return h;
}

void check_payload(std::string_view bytes, const NetpbmHeader& h,
                   std::size_t channels, std::string_view source) {
  const std::size_t need = h.width * h.height * channels;
  const std::size_t have = bytes.size() - std::min(bytes.size(), h.data_offset);
  if (have < need) {
    parse_fail(source, "pixel data truncated at byte " +
                           std::to_string(bytes.size()) + ": need " +
                           std::to_string(need) + " bytes, found " +
                           std::to_string(have));
  }
  if (have > need) {
    parse_fail(source, "byte " + std::to_string(h.data_offset + need) +
                           ": trailing data after pixels");
  }
}

}  // namespace

std::string encode_pgm(const graph::CharacterMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " +
                    std::to_string(mask.height) + "\n255\n";
  for (std::uint8_t v : mask.grid) out.push_back(static_cast<char>(v ? 255 : 0));
  return out;
}

graph::CharacterMask decode_pgm(std::string_view bytes, int identity,
                                std::string_view source) {
  const NetpbmHeader h = parse_netpbm(bytes, "P5", source);
  check_payload(bytes, h, 1, source);
  auto mask = graph::CharacterMask::zeros(identity, h.height, h.width);
  for (std::size_t k = 0; k < mask.grid.size(); ++k)
    mask.grid[k] = bytes[h.data_offset + k] != 0 ? 1 : 0;
  return mask;
}

void write_pgm(const fs::path& path, const graph::CharacterMask& mask) {
  write_file(path, encode_pgm(mask));
}

graph::CharacterMask read_pgm(const fs::path& path, int identity) {
  return decode_pgm(read_file(path), identity, path.string());
}

std::string encode_ppm(const guidance::IegRaster& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(img.rgb.begin(), img.rgb.end());
  return out;
}

guidance::IegRaster decode_ppm(std::string_view bytes,
                               std::string_view source) {
  const NetpbmHeader h = parse_netpbm(bytes, "P6", source);
  check_payload(bytes, h, 3, source);
  guidance::IegRaster img(h.height, h.width);
  std::memcpy(img.rgb.data(), bytes.data() + h.data_offset, img.rgb.size());
  return img;
}

void write_ppm(const fs::path& path, const guidance::IegRaster& img) {
  write_file(path, encode_ppm(img));
}

guidance::IegRaster read_ppm(const fs::path& path) {
  return decode_ppm(read_file(path), path.string());
}

std::vector<graph::CharacterMask> read_mask_dir(const fs::path& dir,
                                                std::string_view prefix) {
  if (!fs::is_directory(dir)) {
    fail(ErrorKind::kIo, "not a directory: " + dir.string());
  }
  const std::regex prefixed("^" + std::string(prefix) + "_([0-9]+)$");
  const std::regex bare("^([0-9]+)$");
  std::map<int, fs::path> with_prefix;
  std::map<int, fs::path> without;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
    const std::string stem = entry.path().stem().string();
    std::smatch m;
    if (!prefix.empty() && std::regex_match(stem, m, prefixed)) {
      with_prefix[std::stoi(m[1])] = entry.path();
    } else if (std::regex_match(stem, m, bare)) {
      without[std::stoi(m[1])] = entry.path();
    }
  }
  const auto& chosen = with_prefix.empty() ? without : with_prefix;
  if (chosen.empty()) {
    fail(ErrorKind::kIo, "no masks found in " + dir.string());
  }
  std::vector<graph::CharacterMask> out;
  for (const auto& [id, path] : chosen) out.push_back(read_pgm(path, id));
  return out;
}

// ---- JSON ----

namespace {

json parse_json(std::string_view text, std::string_view source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    parse_fail(source, "byte " + std::to_string(e.byte) + ": " + e.what());
  } catch (const json::exception& e) {
    parse_fail(source, e.what());
  }
}

const json& member(const json& obj, const char* key, const std::string& path,
                   std::string_view source) {
  if (!obj.is_object()) parse_fail(source, path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) {
    parse_fail(source, path + ": missing '" + key + "'");
  }
  return *it;
}

const json& array_member(const json& obj, const char* key,
                         const std::string& path, std::string_view source) {
  const json& v = member(obj, key, path, source);
  if (!v.is_array()) {
    parse_fail(source, path + "." + key + ": expected an array");
  }
  return v;
}

double number(const json& v, const std::string& path, std::string_view source) {
  if (!v.is_number()) parse_fail(source, path + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) parse_fail(source, path + ": non-finite value");
  return d;
}

int integer(const json& v, const std::string& path, std::string_view source) {
  if (!v.is_number_integer()) parse_fail(source, path + ": expected an integer");
  return v.get<int>();
}

// nlohmann prints doubles as the shortest round-trip decimal.
json real(double v) { return json(v); }

}  // namespace

PoseDocument parse_poses(std::string_view text, std::string_view source) {
  const json root = parse_json(text, source);
  PoseDocument doc;
  const json& frames = array_member(root, "frames", "document", source);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string fpath = "frame " + std::to_string(f);
    const json& jf = frames[f];
    PoseFrameRecord rec;
    rec.frame.index = integer(member(jf, "index", fpath, source),
                              fpath + ".index", source);
    const json& persons = array_member(jf, "persons", fpath, source);
    for (std::size_t p = 0; p < persons.size(); ++p) {
      const std::string ppath = fpath + " person " + std::to_string(p);
      const json& kps = array_member(persons[p], "keypoints", ppath, source);
      if (kps.size() != guidance::kKeypointCount) {
        parse_fail(source, ppath + ": expected 17 keypoints, got " +
                               std::to_string(kps.size()));
      }
      guidance::Person person;
      for (std::size_t k = 0; k < kps.size(); ++k) {
        const std::string kpath = ppath + " keypoint " + std::to_string(k);
        if (!kps[k].is_array() || kps[k].size() != 3) {
          parse_fail(source, kpath + ": expected [x, y, confidence]");
        }
        person.keypoints[k] = {number(kps[k][0], kpath, source),
                               number(kps[k][1], kpath, source),
                               number(kps[k][2], kpath, source)};
      }
      rec.frame.persons.push_back(person);
    }
    if (jf.contains("boxes")) {
      const json& boxes = array_member(jf, "boxes", fpath, source);
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const std::string bpath = fpath + " box " + std::to_string(b);
        const json& jb = boxes[b];
        guidance::IdentityBox box;
        box.identity = integer(member(jb, "id", bpath, source), bpath, source);
        box.x0 = number(member(jb, "x0", bpath, source), bpath + ".x0", source);
        box.y0 = number(member(jb, "y0", bpath, source), bpath + ".y0", source);
        box.x1 = number(member(jb, "x1", bpath, source), bpath + ".x1", source);
        box.y1 = number(member(jb, "y1", bpath, source), bpath + ".y1", source);
        box.frame = rec.frame.index;
        rec.boxes.push_back(box);
      }
      try {
        guidance::validate_boxes(rec.boxes);
      } catch (const Error& e) {
        parse_fail(source, fpath + ": " + e.what());
      }
    }
    doc.frames.push_back(std::move(rec));
  }
  return doc;
}

std::string dump_poses(const PoseDocument& doc) {
  json frames = json::array();
  for (const PoseFrameRecord& rec : doc.frames) {
    json persons = json::array();
    for (const guidance::Person& p : rec.frame.persons) {
      json kps = json::array();
      for (const guidance::Keypoint& k : p.keypoints)
        kps.push_back({real(k.x), real(k.y), real(k.confidence)});
      persons.push_back({{"keypoints", kps}});
    }
    json boxes = json::array();
    for (const guidance::IdentityBox& b : rec.boxes) {
      boxes.push_back({{"id", b.identity},
                       {"x0", real(b.x0)},
                       {"y0", real(b.y0)},
                       {"x1", real(b.x1)},
                       {"y1", real(b.y1)}});
    }
    frames.push_back(
        {{"index", rec.frame.index}, {"persons", persons}, {"boxes", boxes}});
  }
  return json{{"frames", frames}}.dump() + "\n";
}

PoseDocument read_poses(const fs::path& path) {
  return parse_poses(read_file(path), path.string());
}

void write_poses(const fs::path& path, const PoseDocument& doc) {
  write_file(path, dump_poses(doc));
}

std::vector<AssignmentFrame> parse_assignments(std::string_view text,
                                               std::string_view source) {
  const json root = parse_json(text, source);
  std::vector<AssignmentFrame> out;
  const json& frames = array_member(root, "frames", "document", source);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string fpath = "frame " + std::to_string(f);
    AssignmentFrame af;
    af.index = integer(member(frames[f], "index", fpath, source), fpath, source);
    const json& matches = array_member(frames[f], "matches", fpath, source);
    for (std::size_t k = 0; k < matches.size(); ++k) {
      const std::string mpath = fpath + " match " + std::to_string(k);
      const int person =
          integer(member(matches[k], "person", mpath, source), mpath, source);
      if (person < 0) parse_fail(source, mpath + ": negative person index");
      guidance::Match m;
      m.person = static_cast<std::size_t>(person);
      m.identity = integer(member(matches[k], "id", mpath, source), mpath, source);
      m.ratio = number(member(matches[k], "ratio", mpath, source), mpath, source);
      af.assignment.matches.push_back(m);
    }
    if (frames[f].contains("unmatched_persons")) {
      for (const json& u : array_member(frames[f], "unmatched_persons", fpath, source)) {
        const int p = integer(u, fpath + ".unmatched_persons", source);
        if (p < 0) parse_fail(source, fpath + ": negative person index");
        af.assignment.unmatched_persons.push_back(static_cast<std::size_t>(p));
      }
    }
    out.push_back(std::move(af));
  }
  return out;
}

std::string dump_assignments(std::span<const AssignmentFrame> frames) {
  json jf = json::array();
  for (const AssignmentFrame& af : frames) {
    json matches = json::array();
    for (const guidance::Match& m : af.assignment.matches)
      matches.push_back({{"person", m.person}, {"id", m.identity}, {"ratio", real(m.ratio)}});
    jf.push_back({{"index", af.index},
                  {"matches", matches},
                  {"unmatched_persons", af.assignment.unmatched_persons}});
  }
  return json{{"frames", jf}}.dump() + "\n";
}

std::vector<sampling::CharacterPositions> parse_positions(
    std::string_view text, std::string_view source) {
  const json root = parse_json(text, source);
  std::vector<sampling::CharacterPositions> out;
  const json& frames = array_member(root, "frames", "document", source);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string fpath = "frame " + std::to_string(f);
    sampling::CharacterPositions p;
    p.frame = integer(member(frames[f], "index", fpath, source), fpath, source);
    const json& chars = array_member(frames[f], "chars", fpath, source);
    std::set<int> seen;
    for (std::size_t k = 0; k < chars.size(); ++k) {
      const std::string cpath = fpath + " char " + std::to_string(k);
      const int id = integer(member(chars[k], "id", cpath, source), cpath, source);
      const double cx = number(member(chars[k], "cx", cpath, source), cpath, source);
      if (!seen.insert(id).second) {
        parse_fail(source, cpath + ": duplicate identity " + std::to_string(id));
      }
      p.entries.emplace_back(id, cx);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string dump_positions(std::span<const sampling::CharacterPositions> frames) {
  json jf = json::array();
  for (const auto& p : frames) {
    json chars = json::array();
    for (const auto& [id, cx] : p.entries) chars.push_back({{"id", id}, {"cx", real(cx)}});
    jf.push_back({{"index", p.frame}, {"chars", chars}});
  }
  return json{{"frames", jf}}.dump() + "\n";
}

namespace {

std::vector<int> id_list(const json& root, const char* key, std::string_view source) {
  const json& arr = array_member(root, key, "document", source);
  std::vector<int> ids;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const std::string path = std::string(key) + "[" + std::to_string(k) + "]";
    const int id = integer(arr[k], path, source);
    if (std::find(ids.begin(), ids.end(), id) != ids.end()) {
      parse_fail(source, path + ": duplicate identity " + std::to_string(id));
    }
    ids.push_back(id);
  }
  return ids;
}

// Identity written either as a JSON integer or a decimal string.
int id_value(const json& v, const std::string& path, std::string_view source) {
  if (!v.is_string()) return integer(v, path, source);
  const std::string& text = v.get_ref<const std::string&>();
  int out = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    parse_fail(source, path + ": expected an integer identity, got '" + text + "'");
  }
  return out;
}

}  // namespace

MatchingDocument parse_matching(std::string_view text, std::string_view source) {
  const json root = parse_json(text, source);
  if (!root.is_object()) parse_fail(source, "document: expected an object");
  MatchingDocument doc;
  doc.ref_ids = id_list(root, "ref_ids", source);
  doc.gen_ids = id_list(root, "gen_ids", source);
  const json& gt = member(root, "gt", "document", source);
  if (!gt.is_object()) parse_fail(source, "gt: expected an object");
  std::set<int> used_refs;
  for (const auto& [key, value] : gt.items()) {
    const std::string path = "gt[\"" + key + "\"]";
    const int gen = id_value(json(key), path, source);
    const int ref = id_value(value, path, source);
    if (std::find(doc.gen_ids.begin(), doc.gen_ids.end(), gen) == doc.gen_ids.end()) {
      parse_fail(source, path + ": generated identity " + std::to_string(gen) +
                             " is not in gen_ids");
    }
    if (std::find(doc.ref_ids.begin(), doc.ref_ids.end(), ref) == doc.ref_ids.end()) {
      parse_fail(source, path + ": reference identity " + std::to_string(ref) +
                             " is not in ref_ids");
    }
    if (!used_refs.insert(ref).second) {
      parse_fail(source, path + ": reference identity " + std::to_string(ref) +
                             " matched twice");
    }
    if (!doc.gt.emplace(gen, ref).second) {
      parse_fail(source, path + ": generated identity " + std::to_string(gen) +
                             " matched twice");
    }
  }
  return doc;
}

std::string dump_matching(const MatchingDocument& doc) {
  json gt = json::object();
  for (const auto& [gen, ref] : doc.gt) gt[std::to_string(gen)] = std::to_string(ref);
  return json{{"ref_ids", doc.ref_ids}, {"gen_ids", doc.gen_ids}, {"gt", gt}}.dump() +
         "\n";
}

// ---- CSV ----

std::string weights_csv(std::span<const graph::IdentityMatchingGraph> graphs) {
  std::string out = "layer,j,i,weight\n";
  for (const auto& g : graphs)
    for (std::size_t j = 0; j < g.n(); ++j)
      for (std::size_t i = 0; i < g.m(); ++i)
        out += std::to_string(g.layer) + "," + std::to_string(g.gen_ids[j]) +
               "," + std::to_string(g.ref_ids[i]) + "," +
               format_double(g.weight(j, i)) + "\n";
  return out;
}

std::string layer_c_csv(std::span<const std::pair<int, double>> rows) {
  std::string out = "layer,C\n";
  for (const auto& [layer, c] : rows)
    out += std::to_string(layer) + "," + format_double(c) + "\n";
  return out;
}

std::string pair_index_csv(const sampling::PairIndex& index) {
  std::string out = "a,b,is_swap\n";
  for (const auto& p : index.all_pairs)
    out += std::to_string(p.a) + "," + std::to_string(p.b) + "," +
           (index.is_swap(p) ? "1" : "0") + "\n";
  return out;
}

std::string sampling_stats_csv(const sampling::SamplingStats& stats) {
  return "draws,swap_draws,swap_fraction\n" + std::to_string(stats.draws) +
         "," + std::to_string(stats.swap_draws) + "," +
         format_double(stats.swap_fraction) + "\n";
}

// ---- key=value ----

std::vector<std::pair<std::string, std::string>> parse_key_values(
    std::string_view text, std::string_view source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  auto trim = [](std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
      s.remove_suffix(1);
    return s;
  };
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    ++line_no;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      parse_fail(source, "line " + std::to_string(line_no) +
                             ": expected key=value");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      parse_fail(source, "line " + std::to_string(line_no) + ": empty key");
    }
    if (!seen.insert(key).second) {
      parse_fail(source, "line " + std::to_string(line_no) +
                             ": duplicate key '" + key + "'");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::string dump_key_values(
    std::span<const std::pair<std::string, std::string>> entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  return out;
}

}  // namespace imgmatch::io
