// SPDX-License-Identifier: Apache-2.0
#include "intrt/packing.hpp"

#include <fmt/format.h>

#include "core/tensor.hpp"

namespace bpc {

namespace {

void check_bits(int bits) {
  if (bits != 2 && bits != 4 && bits != 8) throw Error(fmt::format("unsupported packing width {}", bits));
}

}  // namespace

std::size_t packed_size(std::size_t count, int bits) {
  check_bits(bits);
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

PackedWeights pack(std::span<const std::uint32_t> codes, int bits) {
  PackedWeights pw;
  pw.bits = bits;
  pw.count = codes.size();
  pw.bytes.assign(packed_size(codes.size(), bits), 0);
  const std::uint32_t limit = 1u << bits;
  const std::size_t lanes = 8 / static_cast<std::size_t>(bits);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= limit) throw Error(fmt::format("code {} at index {} does not fit in {} bits", codes[i], i, bits));
    const auto shift = static_cast<unsigned>((i % lanes) * static_cast<std::size_t>(bits));
    pw.bytes[i / lanes] = static_cast<std::uint8_t>(pw.bytes[i / lanes] | (codes[i] << shift));
  }
  return pw;
}

std::vector<std::uint32_t> unpack(std::span<const std::uint8_t> bytes, int bits, std::size_t count) {
  const std::size_t need = packed_size(count, bits);
  if (bytes.size() < need)
    throw Error(fmt::format("packed blob truncated: {} bytes for {} codes at {} bits (need {})", bytes.size(), count,
                            bits, need));
  const std::size_t lanes = 8 / static_cast<std::size_t>(bits);
  const std::uint32_t mask = (1u << bits) - 1;
  std::vector<std::uint32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto shift = static_cast<unsigned>((i % lanes) * static_cast<std::size_t>(bits));
    out[i] = (static_cast<std::uint32_t>(bytes[i / lanes]) >> shift) & mask;
  }
  return out;
}

}  // namespace bpc
