#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include "doctest.h"
#include "imgmatch/guidance.hpp"
#include "imgmatch/io.hpp"
#include "test_util.hpp"

using namespace imgmatch;
using imgmatch::testing::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + IMGMATCH_CLI + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int rc = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = io::read_file(out);
  r.err = io::read_file(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

// Two characters with orthogonal strong features; identity projections make
// every generated patch attend only to its own identity.
void write_separable_scene(const TempDir& dir) {
  const std::size_t c = 2, h = 8, w = 8;
  numcore::Tensor f({c, h, w});
  std::filesystem::create_directories(dir / "mref");
  std::filesystem::create_directories(dir / "mgen");
  for (int id = 0; id < 2; ++id) {
    auto mask = graph::CharacterMask::zeros(id, h, w);
    for (std::size_t y = 1; y < 7; ++y)
      for (std::size_t x = 0; x < 3; ++x) {
        const std::size_t col = x + (id == 0 ? 0 : 5);
        mask.at(y, col) = 1;
        f[static_cast<std::size_t>(id) * h * w + y * w + col] = 30.0f;
      }
    io::write_pgm(dir / "mref" / ("ref_" + std::to_string(id) + ".pgm"), mask);
    io::write_pgm(dir / "mgen" / ("gen_" + std::to_string(id) + ".pgm"), mask);
  }
  io::write_tensor(dir / "f.tsr", f);
  numcore::Tensor eye({c, c}, {1, 0, 0, 1});
  io::write_tensor(dir / "eye.tsr", eye);
  io::write_file(dir / "gt.json", io::dump_matching({{0, 1}, {0, 1}, {{0, 0}, {1, 1}}}));
}

guidance::Person figure(double cx, double cy) {
  static const double offsets[guidance::kKeypointCount][2] = {
      {0, -20},  {-2, -22}, {2, -22},  {-4, -21}, {4, -21}, {-6, -14},
      {6, -14},  {-8, -6},  {8, -6},   {-9, 1},   {9, 1},   {-4, 2},
      {4, 2},    {-4, 11},  {4, 11},   {-4, 20},  {4, 20},
  };
  guidance::Person p;
  for (std::size_t k = 0; k < guidance::kKeypointCount; ++k)
    p.keypoints[k] = {cx + offsets[k][0], cy + offsets[k][1], 0.9};
  return p;
}

}  // namespace

TEST_CASE("img-score prints C and writes the weight CSV") {
  TempDir dir("cli_score");
  write_separable_scene(dir);
  const std::string base = "img-score --features-ref " + q(dir / "f.tsr") +
                           " --features-gen " + q(dir / "f.tsr") + " --masks-ref " +
                           q(dir / "mref") + " --masks-gen " + q(dir / "mgen") +
                           " --matching " + q(dir / "gt.json") + " --d 2";
  const Run r = cli(dir, base + " --mode fast --wq " + q(dir / "eye.tsr") + " --wk " +
                             q(dir / "eye.tsr") + " --out " + q(dir / "w.csv"));
  CHECK(r.code == 0);
  CHECK(r.out == "C,1.000000\n");
  const std::string csv = io::read_file(dir / "w.csv");
  CHECK(csv.rfind("layer,j,i,weight\n1,0,0,", 0) == 0);

  // Seeded random projections are deterministic.
  const Run a = cli(dir, base + " --seed 4 --out " + q(dir / "a.csv"));
  const Run b = cli(dir, base + " --seed 4 --out " + q(dir / "b.csv"));
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(io::read_file(dir / "a.csv") == io::read_file(dir / "b.csv"));

  const Run pairwise = cli(dir, base + " --mode pairwise --wq " + q(dir / "eye.tsr") +
                                    " --wk " + q(dir / "eye.tsr") + " --out " +
                                    q(dir / "p.csv"));
  // Per-reference softmax: a lone foreign node still takes mass.
  CHECK(pairwise.code == 0);
  REQUIRE(pairwise.out.rfind("C,", 0) == 0);
  CHECK(std::stod(pairwise.out.substr(2)) < 1.0);
}

TEST_CASE("usage errors exit 1, data errors exit 2") {
  TempDir dir("cli_err");
  CHECK(cli(dir, "").code == 1);
  CHECK(cli(dir, "no-such-command").code == 1);
  CHECK(cli(dir, "gradcheck --bogus 1").code == 1);
  CHECK(cli(dir, "img-score --mode slow").code == 1);
  CHECK(cli(dir, "ieg-render --poses a --assign b --out c --size 12by4").code == 1);
  CHECK(cli(dir, "--help").code == 0);

  io::write_file(dir / "bad.tsr", "TSR1\ndtype f64\nshape 2\nend\n");
  write_separable_scene(dir);
  const Run r = cli(dir, "img-score --features-ref " + q(dir / "bad.tsr") +
                             " --features-gen " + q(dir / "f.tsr") + " --masks-ref " +
                             q(dir / "mref") + " --masks-gen " + q(dir / "mgen") +
                             " --matching " + q(dir / "gt.json"));
  CHECK(r.code == 2);
  CHECK(r.out.empty());
  CHECK(r.err.find("line 2") != std::string::npos);

  io::write_file(dir / "bad.json", "{\"frames\": [ }");
  const Run p = cli(dir, "ieg-assign --poses " + q(dir / "bad.json") + " --out " +
                             q(dir / "a.json"));
  CHECK(p.code == 2);
  CHECK(p.err.find("byte") != std::string::npos);

  io::write_file(dir / "bad.pgm", "P5\n4 4\n255\nxx");
  std::filesystem::create_directories(dir / "badmasks");
  std::filesystem::copy_file(dir / "bad.pgm", dir / "badmasks" / "ref_0.pgm");
  const Run m = cli(dir, "img-score --features-ref " + q(dir / "f.tsr") +
                             " --features-gen " + q(dir / "f.tsr") + " --masks-ref " +
                             q(dir / "badmasks") + " --masks-gen " + q(dir / "mgen") +
                             " --matching " + q(dir / "gt.json"));
  CHECK(m.code == 2);
  CHECK_FALSE(m.err.empty());
}

TEST_CASE("ieg-assign and ieg-render") {
  TempDir dir("cli_ieg");
  io::PoseDocument doc;
  io::PoseFrameRecord rec;
  rec.frame.index = 0;
  rec.frame.persons = {figure(40, 40), figure(100, 40)};
  rec.boxes = {{7, 86, 14, 114, 66, 0}, {3, 26, 14, 54, 66, 0}};
  doc.frames.push_back(rec);
  io::write_poses(dir / "p.json", doc);

  const Run a = cli(dir, "ieg-assign --poses " + q(dir / "p.json") + " --tau 0.6 --out " +
                             q(dir / "a.json") + " --seed 1");
  CHECK(a.code == 0);
  const auto frames = io::parse_assignments(io::read_file(dir / "a.json"));
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].assignment.identity_of(0) == 3);
  CHECK(frames[0].assignment.identity_of(1) == 7);

  const Run r = cli(dir, "ieg-render --poses " + q(dir / "p.json") + " --assign " +
                             q(dir / "a.json") + " --size 160x80 --out " +
                             q(dir / "f.ppm") + " --seed 1");
  CHECK(r.code == 0);
  const auto img = io::read_ppm(dir / "f.ppm");
  CHECK(img.width == 160);
  CHECK(img.height == 80);
  // Nose keypoints sit 20 rows above each figure's anchor.
  CHECK(img.pixel(20, 40) == guidance::kDefaultPalette[3]);
  CHECK(img.pixel(20, 100) == guidance::kDefaultPalette[7]);
  CHECK(img.pixel(75, 70) == guidance::Rgb{0, 0, 0});
}

TEST_CASE("pcs-plan with rho 1 draws only swap pairs") {
  TempDir dir("cli_pcs");
  std::vector<sampling::CharacterPositions> pos;
  for (int f = 0; f < 10; ++f) {
    const bool flip = f == 4;
    pos.push_back({f, {{0, flip ? 0.8 : 0.2}, {1, flip ? 0.2 : 0.8}}});
  }
  io::write_file(dir / "pos.json", io::dump_positions(pos));
  const Run r = cli(dir, "pcs-plan --positions " + q(dir / "pos.json") +
                             " --rho 1 --draws 500 --seed 3 --out " + q(dir / "s.csv") +
                             " --pairs " + q(dir / "pairs.csv"));
  CHECK(r.code == 0);
  CHECK(io::read_file(dir / "s.csv") == "draws,swap_draws,swap_fraction\n500,500,1\n");
  const std::string pairs = io::read_file(dir / "pairs.csv");
  CHECK(pairs.rfind("a,b,is_swap\n", 0) == 0);
}

TEST_CASE("synth-gen, train-demo and evaluate") {
  TempDir dir("cli_train");
  const Run g = cli(dir, "synth-gen --chars 2 --count 6 --swap-share 0.5 --corruption 0 "
                         "--seed 2 --out " + q(dir / "ds"));
  CHECK(g.code == 0);
  CHECK(g.out == "scenes,6\nswap_scenes,3\n");
  io::write_file(dir / "run.cfg", "lambda=0.2\nsteps=40\nmanifest=ds/manifest.jsonl\n");

  const std::string train = "train-demo --config " + q(dir / "run.cfg");
  const Run a = cli(dir, train + " --out " + q(dir / "m1.csv") + " --model-out " +
                             q(dir / "m.tsr"));
  const Run b = cli(dir, train + " --out " + q(dir / "m2.csv"));
  CHECK(a.code == 0);
  CHECK(b.code == 0);
  const std::string metrics = io::read_file(dir / "m1.csv");
  CHECK(metrics == io::read_file(dir / "m2.csv"));
  CHECK(metrics.rfind("step,l_diff,l_match,l_total,c_mean,c_l1,c_l2,c_l3\n", 0) == 0);
  const Run c = cli(dir, train + " --seed 99 --out " + q(dir / "m3.csv"));
  CHECK(c.code == 0);
  CHECK(io::read_file(dir / "m3.csv") != metrics);

  const Run e = cli(dir, "evaluate --config " + q(dir / "run.cfg") + " --model " +
                             q(dir / "m.tsr") + " --out " + q(dir / "eval.csv") +
                             " --seed 1");
  CHECK(e.code == 0);
  CHECK(e.out.rfind("scenes,6\nmean_c,", 0) == 0);
  CHECK(io::read_file(dir / "eval.csv").rfind("scene,c_l1,c_l2,c_l3,c_mean\n", 0) == 0);

  io::write_file(dir / "bad.cfg", "lambda=0.2\nlamda=0.1\n");
  const Run bad = cli(dir, "train-demo --config " + q(dir / "bad.cfg") + " --out " +
                               q(dir / "x.csv"));
  CHECK(bad.code == 2);
  CHECK(bad.err.find("lamda") != std::string::npos);
}

TEST_CASE("gradcheck prints the max relative error") {
  TempDir dir("cli_grad");
  const Run r = cli(dir, "gradcheck --scene 2 --eps 1e-3");
  CHECK(r.code == 0);
  const auto at = r.out.find("max_rel_error,");
  REQUIRE(at != std::string::npos);
  CHECK(std::stod(r.out.substr(at + 14)) <= 1e-3);
  CHECK(cli(dir, "gradcheck --seed 2").out == r.out);
}
