// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#include "mptee/bytes.hpp"

#include <algorithm>

namespace mptee {

static const char* kHexDigits = "0123456789abcdef";

std::string hex_encode(ByteView data) {
  std::string out;
  out.reserve(data.size() * 2);
  for (uint8_t b : data) {
    out.push_back(kHexDigits[b >> 4]);
    out.push_back(kHexDigits[b & 0xf]);
  }
  return out;
}

static int hex_val(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

bool hex_decode_strict(const std::string& hex, Bytes& out) {
  if (hex.size() % 2 != 0) return false;
  out.clear();
  out.reserve(hex.size() / 2);
  for (size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_val(hex[i]);
    int lo = hex_val(hex[i + 1]);
    if (hi < 0 || lo < 0) return false;
    out.push_back(static_cast<uint8_t>(hi << 4 | lo));
  }
  return true;
}

Bytes hex_decode(const std::string& hex) {
  Bytes out;
  hex_decode_strict(hex, out);
  return out;
}

bool contains_subsequence(ByteView haystack, ByteView needle) {
  if (needle.empty()) return true;
  if (haystack.size() < needle.size()) return false;
  auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end());
  return it != haystack.end();
}

}  // namespace mptee
