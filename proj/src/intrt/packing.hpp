// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bpc {

/// Sub-byte code storage: little-endian bytes, lanes filled from the least
/// significant bit (4 lanes per byte at 2 bits, 2 at 4 bits, 1 at 8 bits).
struct PackedWeights {
  int bits = 8;
  std::size_t count = 0;
  std::vector<std::uint8_t> bytes;
};

std::size_t packed_size(std::size_t count, int bits);

/// Throws if a code does not fit in `bits` or `bits` is not 2, 4 or 8.
PackedWeights pack(std::span<const std::uint32_t> codes, int bits);
/// Throws if the blob is shorter than `packed_size(count, bits)`. Padding bits are ignored.
std::vector<std::uint32_t> unpack(std::span<const std::uint8_t> bytes, int bits, std::size_t count);
inline std::vector<std::uint32_t> unpack(const PackedWeights& pw) { return unpack(pw.bytes, pw.bits, pw.count); }

}  // namespace bpc
