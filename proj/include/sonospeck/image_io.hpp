// Copyright (c) 2026 The Sonospeck Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <vector>

#include "sonospeck/tensor.hpp"

namespace sonospeck {

/// Reads an 8- or 16-bit grayscale PGM (P2/P5) or PNG as a [1,1,h,w] tensor
/// with values mapped linearly to [0, 1]. Colour or alpha input raises
/// ValidationError("... grayscale required"); unreadable or malformed files
/// raise IoError.
Tensor<float> load_image(const std::filesystem::path& path);

/// Writes a [1,1,h,w] tensor, clamped to [0, 1] and rounded to `bits`
/// (8 or 16). The extension selects the format: .png, otherwise binary PGM.
void save_image(const std::filesystem::path& path, const Tensor<float>& image, int bits = 16);

/// True for extensions load_image understands (.pgm, .png).
bool is_image_path(const std::filesystem::path& path);

/// Image files of a directory in lexicographic order.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace sonospeck
