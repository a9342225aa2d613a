#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "moco/config.hpp"
#include "moco/io.hpp"
#include "test_helpers.hpp"

using namespace moco;
using namespace moco::test;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("moco_io_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("images round trip bit exactly through MOCO1 files") {
  TempDir tmp;
  const Grid g = Grid::make2d(9, 7, 0.3125, 1.0 / 3.0, -0.7, 0.123456789);
  std::mt19937_64 rng(99);
  DensityImage img(g);
  for (double& v : img.values) v = urand(rng) * 1e6;
  const std::string path = (tmp.path / "img.moco").string();
  write_image(path, img);
  const DensityImage back = read_image(path);
  CHECK(back.grid == g);
  for (std::size_t c = 0; c < img.size(); ++c)
    CHECK(back.values[c] == img.values[c]);
}

TEST_CASE("deformations and detector data round trip") {
  TempDir tmp;
  const Grid g = Grid::unit(2, 8);
  const Deformation y = random_smooth_deformation(g, 0.1, 5);
  const std::string dpath = (tmp.path / "def.moco").string();
  write_deformation(dpath, y);
  const Deformation back = read_deformation(dpath);
  CHECK(back.grid == g);
  for (std::size_t i = 0; i < y.nodal.size(); ++i)
    CHECK(back.nodal[i] == y.nodal[i]);

  DetectorData det({5, 12});
  std::mt19937_64 rng(3);
  for (double& v : det.values) v = urand(rng);
  const std::string gpath = (tmp.path / "det.moco").string();
  write_detector(gpath, det);
  const DetectorData dback = read_detector(gpath);
  REQUIRE(dback.shape == det.shape);
  for (std::size_t i = 0; i < det.size(); ++i)
    CHECK(dback.values[i] == det.values[i]);
}

TEST_CASE("reader rejects foreign and truncated files") {
  TempDir tmp;
  const std::string path = (tmp.path / "bad.moco").string();
  {
    std::ofstream os(path);
    os << "NOTMOCO 2 4 4 1 1 0 0\n";
  }
  CHECK_THROWS_AS(read_image(path), std::runtime_error);
  {
    std::ofstream os(path, std::ios::binary);
    os << "MOCO1 2 4 4 0.25 0.25 0 0\n";
    const double v = 1.0;
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  CHECK_THROWS_AS(read_image(path), std::runtime_error);
  CHECK_THROWS_AS(read_image((tmp.path / "missing.moco").string()),
                  std::runtime_error);
}

TEST_CASE("pgm preview writes the normalization sidecar") {
  TempDir tmp;
  const Grid g = Grid::unit(2, 8);
  DensityImage img(g, 0.0);
  img.values[10] = 4.0;
  const std::string path = (tmp.path / "img.pgm").string();
  write_pgm_preview(path, img);
  std::ifstream pgm(path, std::ios::binary);
  std::string magic;
  pgm >> magic;
  CHECK(magic == "P5");
  std::ifstream sidecar(path + ".txt");
  std::string key;
  double lo, hi;
  sidecar >> key >> lo;
  CHECK(key == "min");
  sidecar >> key >> hi;
  CHECK(hi == 4.0);
}

TEST_CASE("flat config parsing, prefixes, and overrides") {
  TempDir tmp;
  const std::string path = (tmp.path / "exp.cfg").string();
  {
    std::ofstream os(path);
    os << "# comment line\n"
       << "grid.n = 32\n"
       << "phantom.kind = cardiac\n"
       << "phantom.gates = 4\n"
       << "phantom.rates = 0, 0.05, 0.1\n"
       << "recon.alpha = 12.5\n"
       << "ml.dirichlet = true\n";
  }
  FlatConfig cfg = FlatConfig::load(path);
  cfg.set_pair("recon.alpha=99");  // command line wins
  const ExperimentConfig e = parse_experiment(cfg);
  CHECK(e.grid_n == 32);
  CHECK(e.phantom_kind == "cardiac");
  CHECK(e.gates == 4);
  CHECK(e.recon.alpha == 99.0);
  CHECK(e.recon.ml.dirichlet);
  CHECK(e.shrink_rates.size() == 3);
  CHECK(e.shrink_rates[1] == 0.05);

  CHECK_THROWS_AS(FlatConfig::load((tmp.path / "nope.cfg").string()),
                  std::runtime_error);
  {
    std::ofstream os(path);
    os << "no equals sign here\n";
  }
  CHECK_THROWS_AS(FlatConfig::load(path), std::runtime_error);
}
