/*
 * mocorec: motion-corrected reconstruction of gated density images
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "moco/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace moco {

namespace {

static_assert(std::endian::native == std::endian::little,
              "MOCO1 payloads are little endian");

void write_header(std::ostream& os, const Grid& g) {
  os << "MOCO1 " << g.ndim;
  os.precision(17);
  for (int a = 0; a < g.ndim; ++a) os << ' ' << g.dims[a];
  for (int a = 0; a < g.ndim; ++a) os << ' ' << g.spacing[a];
  for (int a = 0; a < g.ndim; ++a) os << ' ' << g.origin[a];
  os << '\n';
}

Grid read_header(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error(path + ": missing MOCO1 header");
  std::istringstream ss(line);
  std::string magic;
  ss >> magic;
  if (magic != "MOCO1")
    throw std::runtime_error(path + ": not a MOCO1 file");
  Grid g;
  ss >> g.ndim;
  if (g.ndim != 2 && g.ndim != 3)
    throw std::runtime_error(path + ": unsupported dimension");
  for (int a = 0; a < g.ndim; ++a) ss >> g.dims[a];
  for (int a = 0; a < g.ndim; ++a) ss >> g.spacing[a];
  for (int a = 0; a < g.ndim; ++a) ss >> g.origin[a];
  if (!ss) throw std::runtime_error(path + ": malformed MOCO1 header");
  g.validate();
  return g;
}

void write_payload(std::ostream& os, std::span<const double> values) {
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(double)));
}

void read_payload(std::istream& is, std::span<double> values,
                  const std::string& path) {
  is.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (static_cast<std::size_t>(is.gcount()) != values.size() * sizeof(double))
    throw std::runtime_error(path + ": truncated MOCO1 payload");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open for reading");
  return is;
}

}  // namespace

void write_image(const std::string& path, const DensityImage& img) {
  auto os = open_out(path);
  write_header(os, img.grid);
  write_payload(os, img.values);
  if (!os) throw std::runtime_error(path + ": write failed");
}

DensityImage read_image(const std::string& path) {
  auto is = open_in(path);
  const Grid g = read_header(is, path);
  DensityImage img(g);
  read_payload(is, img.values, path);
  return img;
}

void write_deformation(const std::string& path, const Deformation& y) {
  auto os = open_out(path);
  write_header(os, y.grid);
  write_payload(os, y.nodal);
  if (!os) throw std::runtime_error(path + ": write failed");
}

Deformation read_deformation(const std::string& path) {
  auto is = open_in(path);
  const Grid g = read_header(is, path);
  Deformation y(g);
  read_payload(is, y.nodal, path);
  return y;
}

void write_detector(const std::string& path, const DetectorData& data) {
  Grid g;
  g.ndim = static_cast<int>(data.shape.size());
  if (g.ndim != 2 && g.ndim != 3)
    throw std::invalid_argument(path + ": detector rank must be 2 or 3");
  for (int a = 0; a < g.ndim; ++a) {
    g.dims[a] = data.shape[a];
    g.spacing[a] = 1.0;
    g.origin[a] = 0.0;
  }
  auto os = open_out(path);
  write_header(os, g);
  write_payload(os, data.values);
  if (!os) throw std::runtime_error(path + ": write failed");
}

DetectorData read_detector(const std::string& path) {
  auto is = open_in(path);
  const Grid g = read_header(is, path);
  DetectorData data(std::vector<int>(g.dims.begin(), g.dims.begin() + g.ndim));
  read_payload(is, data.values, path);
  return data;
}

void write_pgm_preview(const std::string& path, const DensityImage& img) {
  if (img.grid.ndim != 2)
    throw std::invalid_argument(path + ": PGM previews are 2D only");
  const int nx = img.grid.dims[0];
  const int ny = img.grid.dims[1];
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : img.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi > lo ? hi - lo : 1.0;
  auto os = open_out(path);
  os << "P5\n" << nx << ' ' << ny << "\n255\n";
  std::vector<unsigned char> row(nx);
  for (int j = ny - 1; j >= 0; --j) {  // top row = largest coordinate
    for (int i = 0; i < nx; ++i) {
      const double v =
          (img.values[static_cast<std::size_t>(j) * nx + i] - lo) / range;
      row[i] = static_cast<unsigned char>(
          std::clamp(std::lround(v * 255.0), 0l, 255l));
    }
    os.write(reinterpret_cast<const char*>(row.data()), nx);
  }
  if (!os) throw std::runtime_error(path + ": write failed");
  std::ofstream sidecar(path + ".txt");
  sidecar.precision(17);
  sidecar << "min " << lo << "\nmax " << hi << "\n";
}

}  // namespace moco
