// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "core/graph.hpp"

namespace bpc {

struct SeedOptions {
  std::string arch = "resnet1d";  // resnet1d or unet1d
  int width = 16;                 // channels of the first stage; doubled per stage
  int stages = 3;                 // residual blocks or U-Net levels
  int kernel = 0;                 // 0 picks 5 for resnet1d and 3 for unet1d
  int input_length = 625;
  std::uint64_t seed = 1;
};

/// Residual 1D CNN regressing (SBP, DBP): conv stem, `stages` residual blocks
/// with stride 2 and 1x1 convolutional shortcuts (each with its own batch
/// norm), global average pooling and a linear head. Output shape (2, 1).
ModelGraph build_resnet1d(const SeedOptions& o);

/// Encoder/decoder with max pooling, nearest upsampling and skip
/// concatenations, reconstructing one pressure channel of the input length.
/// The input length must be divisible by 2^(stages-1).
ModelGraph build_unet1d(const SeedOptions& o);

ModelGraph build_seed(const SeedOptions& o);

/// Task produced by a seed: "value" for resnet1d, "signal" for unet1d.
std::string seed_task(const std::string& arch);

}  // namespace bpc
