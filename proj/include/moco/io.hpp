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

#pragma once

#include <string>

#include "moco/forward.hpp"
#include "moco/grid.hpp"

namespace moco {

/// All arrays share one container format: a single text header line
///   MOCO1 <d> <dims...> <spacing...> <origin...>\n
/// followed by the payload as little-endian 64-bit floats. Images store one
/// value per cell; deformations the d interleaved nodal components; detector
/// data uses its shape as dims with unit spacing and zero origin. Headers are
/// printed with enough digits that a write/read round trip is bit exact.

void write_image(const std::string& path, const DensityImage& img);
DensityImage read_image(const std::string& path);

void write_deformation(const std::string& path, const Deformation& y);
Deformation read_deformation(const std::string& path);

void write_detector(const std::string& path, const DetectorData& data);
DetectorData read_detector(const std::string& path);

/// 8-bit binary PGM preview with linear min-max normalization; the applied
/// range is recorded in a "<path>.txt" sidecar.
void write_pgm_preview(const std::string& path, const DensityImage& img);

}  // namespace moco
