// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace mptee {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

/// 256-bit digest (SHA-256 everywhere in this codebase).
using Digest = std::array<uint8_t, 32>;

/// 128-bit platform instance identifier.
using InstanceId = std::array<uint8_t, 16>;

using PackageId = uint32_t;

inline Bytes to_bytes(ByteView v) { return Bytes(v.begin(), v.end()); }

inline Bytes str_bytes(const std::string& s) {
  return Bytes(s.begin(), s.end());
}

std::string hex_encode(ByteView data);
/// Returns empty on malformed input unless the input is itself empty;
/// callers that must distinguish use hex_decode_strict.
Bytes hex_decode(const std::string& hex);
bool hex_decode_strict(const std::string& hex, Bytes& out);

/// True if `needle` occurs as a contiguous substring of `haystack`.
bool contains_subsequence(ByteView haystack, ByteView needle);

/// Constant-size XOR-fold equality; not constant time (see module non-goals).
template <size_t N>
bool array_eq(const std::array<uint8_t, N>& a, const std::array<uint8_t, N>& b) {
  return std::memcmp(a.data(), b.data(), N) == 0;
}

}  // namespace mptee
