// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#include "mptee/rng.hpp"

#include <sodium.h>

#include <cstring>
#include <stdexcept>

namespace mptee {

namespace {
void ensure_sodium() {
  if (sodium_init() < 0) throw std::runtime_error("libsodium init failed");
}
}  // namespace

SimRng::SimRng(uint64_t seed) {
  ensure_sodium();
  // key = SHA-256("mptee-rng" || seed_le)
  static const char tag[] = "mptee-rng";
  uint8_t buf[sizeof(tag) - 1 + 8];
  std::memcpy(buf, tag, sizeof(tag) - 1);
  for (int i = 0; i < 8; ++i) buf[sizeof(tag) - 1 + i] = static_cast<uint8_t>(seed >> (8 * i));
  crypto_hash_sha256(key_.data(), buf, sizeof(buf));
}

void SimRng::fill(uint8_t* out, size_t n) {
  // One keystream block sequence per call; the 64-bit nonce is the call
  // counter, so streams never overlap.
  uint8_t nonce[8];
  uint64_t b = block_++;
  for (int i = 0; i < 8; ++i) nonce[i] = static_cast<uint8_t>(b >> (8 * i));
  std::memset(out, 0, n);
  crypto_stream_chacha20_xor(out, out, n, nonce, key_.data());
}

Bytes SimRng::bytes(size_t n) {
  Bytes out(n);
  if (n > 0) fill(out.data(), n);
  return out;
}

uint64_t SimRng::u64() {
  uint8_t b[8];
  fill(b, 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

uint64_t SimRng::below(uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("SimRng::below(0)");
  // Rejection sampling to stay unbiased.
  uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t v;
  do {
    v = u64();
  } while (v >= limit);
  return v % bound;
}

}  // namespace mptee
