#include <cmath>
#include <filesystem>
#include <random>

#include "bridge/error.hpp"
#include "bridge/hash.hpp"
#include "bridge/io.hpp"
#include "bridge/render/patch.hpp"
#include "doctest.h"

using namespace bridge;
using namespace bridge::render;
using env::CrackKind;
using env::CrackSpec;
using env::Point;

namespace {

env::WorldState empty_world() {
  env::WorldState w;
  w.cell_cracks.assign(std::size_t(w.config.cells()), {});
  return w;
}

void put(env::WorldState& w, CrackSpec crack) {
  const int id = int(w.cracks.size());
  auto cells = env::crack_cells(crack, w.config);
  for (int c : cells) w.cell_cracks[std::size_t(c)].push_back(id);
  w.cracks.push_back(crack);
  w.crack_cells.push_back(cells);
}

long count(const Mask& m) { return long(m.cast<long>().sum()); }

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bridge_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("rasterize: horizontal chord gives a 2-row band") {
  const CrackSpec chord{CrackKind::Line, {Point(0, 50), Point(100, 50)}, 0.5, false};
  const Mask m = rasterize(chord, {0, 0, 100}, 64, 2.0);
  CHECK(count(m) == 2 * 64);
  CHECK((m.row(31).array() == 1).all());
  CHECK((m.row(32).array() == 1).all());
}

TEST_CASE("rasterize: degenerate Bezier equals its line; fork is a union") {
  const Point a(10.3, 20.7), b(60.1, 47.9);
  const CrackSpec line{CrackKind::Line, {a, b}, 0.5, false};
  const CrackSpec curve{CrackKind::Bezier, {a, a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0, b}, 0.5, false};
  CHECK(rasterize(curve, {0, 0, 100}, 64, 2.5) == rasterize(line, {0, 0, 100}, 64, 2.5));

  const Point c(75.2, 30.1);
  const CrackSpec fork{CrackKind::Fork, {a, b, b, c}, 0.5, false};
  const Mask trunk = rasterize(line, {0, 0, 100}, 64, 2.0);
  const Mask branch = rasterize(CrackSpec{CrackKind::Line, {b, c}, 0.5, false}, {0, 0, 100}, 64, 2.0);
  const Mask both = (trunk.array() + branch.array()).min(std::uint8_t(1)).matrix();
  CHECK(rasterize(fork, {0, 0, 100}, 64, 2.0) == both);
}

TEST_CASE("rasterize: geometry outside the cell gives an empty mask") {
  const CrackSpec far{CrackKind::Line, {Point(300, 300), Point(310, 305)}, 0.5, false};
  CHECK(count(rasterize(far, {0, 0, 100}, 64, 2.0)) == 0);
}

TEST_CASE("render: zero noise and texture, no crack -> constant background") {
  RenderConfig rc;
  rc.noise_std = 0.0;
  rc.background_std = 0.0;
  const Patch p = render_patch(empty_world(), 5, rc, 3);
  CHECK(p.label == Label::None);
  CHECK(count(p.mask) == 0);
  CHECK((p.pixels.array() == rc.background_mean).all());
}

TEST_CASE("render: crack-free mean intensity stays near the background mean") {
  RenderConfig rc;
  const double bound = 4.0 * rc.noise_std / rc.resolution;
  const auto w = empty_world();
  int outside = 0;
  double grand = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Patch p = render_patch(w, int(s % 48), rc, derive_seed(11, {s}));
    outside += std::abs(p.pixels.mean() - rc.background_mean) > bound;
    grand += p.pixels.mean();
  }
  CHECK(outside == 0);
  CHECK(std::abs(grand / 1000 - rc.background_mean) < bound / std::sqrt(1000.0) * 4);
}

TEST_CASE("render: line crack pixels are dark and numerous") {
  RenderConfig rc;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    auto w = render::dataset_world(Label::None, 0);
    env::ScenarioConfig one = w.config;
    one.length_m = one.breadth_m = one.cell_m;
    CrackSpec crack = env::generate_crack(CrackKind::Line, rng, one);
    if (env::crack_cells(crack, w.config) != std::vector<int>{0}) continue;
    put(w, crack);
    const Patch p = render_patch(w, 0, rc, derive_seed(5, {std::uint64_t(trial)}));
    CHECK(p.label == Label::Crack);
    const double chord_fraction = (crack.points[1] - crack.points[0]).norm() / w.config.cell_m;
    long dark = 0;
    for (Eigen::Index i = 0; i < p.mask.size(); ++i)
      dark += p.mask.data()[i] && p.pixels.data()[i] < rc.background_mean - 2 * rc.noise_std;
    CHECK(double(dark) >= 2.0 * rc.resolution * chord_fraction);
  }
}

TEST_CASE("render: invariants over random worlds") {
  env::ScenarioConfig sc;
  sc.n_cracks = 10;
  sc.n_false_cracks = 5;
  sc.n_cars = 2;
  RenderConfig quiet;
  quiet.noise_std = 0.0;
  quiet.background_std = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto [w, s] = env::reset(sc, seed);
    for (int cell = 0; cell < sc.cells(); ++cell) {
      const Patch a = render_patch(w, cell, RenderConfig{}, 1);
      const Patch b = render_patch(w, cell, RenderConfig{}, 2);
      CHECK(a.mask == b.mask);  // noise seed never moves geometry
      CHECK(a.pixels.minCoeff() >= 0.0);
      CHECK(a.pixels.maxCoeff() <= 1.0);
      CHECK(render_patch(w, cell, RenderConfig{}, 1).pixels == a.pixels);  // pure
      CHECK((count(a.mask) == 0) == (a.label == Label::None));
      if (a.label == Label::False) {
        w.cars.clear();  // occlusion aside, strokes carry the false intensity
        const Patch q = render_patch(w, cell, quiet, 1);
        for (Eigen::Index i = 0; i < q.mask.size(); ++i)
          if (q.mask.data()[i]) CHECK(q.pixels.data()[i] == quiet.false_intensity);
      }
    }
  }
}

TEST_CASE("render: cars occlude pixels but not the mask") {
  RenderConfig rc;
  rc.noise_std = 0.0;
  rc.background_std = 0.0;
  auto w = empty_world();
  put(w, {CrackKind::Line, {Point(130, 40), Point(170, 60)}, 0.5, false});
  const Patch clear = render_patch(w, 1, rc, 1);
  w.cars = {env::CarState{0, 150.0, 10.0, 1}};
  const Patch busy = render_patch(w, 1, rc, 1);
  CHECK(busy.mask == clear.mask);
  CHECK(busy.pixels(32, 32) == rc.car_intensity);
  CHECK(busy.pixels != clear.pixels);
}

TEST_CASE("render config validation") {
  RenderConfig rc;
  rc.resolution = 8;
  CHECK_THROWS_AS(validate(rc), ConfigError);
  rc = {};
  rc.false_intensity = 0.1;  // more contrast than the true crack
  CHECK_THROWS_AS(validate(rc), ConfigError);
}

TEST_CASE("PGM round trip and errors") {
  Image img(3, 4);
  for (int i = 0; i < 12; ++i) img.data()[i] = i / 11.0;
  const std::string bytes = encode_pgm(img);
  CHECK(bytes.rfind("P5\n4 3\n255\n", 0) == 0);
  const Image back = decode_pgm(bytes);
  CHECK(back.rows() == 3);
  CHECK(back.cols() == 4);
  CHECK((back - img).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
  CHECK(encode_pgm(back) == bytes);
  CHECK(decode_pgm("P5 # comment\n4 3\n255\n" + bytes.substr(11)) == back);
  CHECK_THROWS_AS(decode_pgm("P2\n4 3\n255\n"), FormatError);
  CHECK_THROWS_AS(decode_pgm(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_pgm("P5\n4 3\n65535\n"), FormatError);
}

TEST_CASE("gen_dataset: balance, determinism, errors") {
  const auto d1 = temp_dir("ds1"), d2 = temp_dir("ds2");
  DatasetOptions o;
  o.n = 100;
  o.seed = 9;
  const auto rows = gen_dataset(o, {}, d1);
  gen_dataset(o, {}, d2);
  int crack = 0, fals = 0;
  for (const auto& r : rows) {
    crack += r.label == Label::Crack;
    fals += r.label == Label::False;
    CHECK(read_file(d1 / r.filename) == read_file(d2 / r.filename));
    CHECK((r.crack_kind == "none") == (r.label == Label::None));
  }
  CHECK(crack == 50);
  CHECK(fals == 13);  // round(50 * 0.25)
  CHECK(read_file(d1 / "manifest.csv") == read_file(d2 / "manifest.csv"));
  const auto back = read_manifest(d1 / "manifest.csv");
  REQUIRE(back.size() == rows.size());
  CHECK(back[7].seed == rows[7].seed);
  CHECK(back[7].label == rows[7].label);

  o.n = 1;
  CHECK_THROWS_AS(gen_dataset(o, {}, d1), ConfigError);
  o.n = 10;
  o.balance = 1.0;
  CHECK_THROWS_AS(gen_dataset(o, {}, d1), ConfigError);
  o.balance = 0.5;
  CHECK_THROWS_AS(gen_dataset(o, {}, d1 / "manifest.csv" / "sub"), IoError);
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}
