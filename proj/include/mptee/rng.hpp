// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "mptee/bytes.hpp"

namespace mptee {

/// Deterministic random generator. Every piece of randomness in a simulation
/// run flows through one SimRng owned by the harness, so a (config, seed)
/// pair replays byte-identically. ChaCha20 keystream keyed off the seed.
class SimRng {
 public:
  explicit SimRng(uint64_t seed);

  void fill(uint8_t* out, size_t n);
  Bytes bytes(size_t n);
  uint64_t u64();
  /// Uniform in [0, bound); bound must be nonzero.
  uint64_t below(uint64_t bound);

  template <size_t N>
  std::array<uint8_t, N> array() {
    std::array<uint8_t, N> out;
    fill(out.data(), N);
    return out;
  }

 private:
  std::array<uint8_t, 32> key_;
  uint64_t block_ = 0;
};

}  // namespace mptee
