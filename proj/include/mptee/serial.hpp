// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Canonical serialization used for every signed or sealed structure:
// fields in declaration order, integers little-endian fixed width,
// variable-length byte fields prefixed with a u32 length.

#include <cstdint>
#include <optional>
#include <stdexcept>

#include "mptee/bytes.hpp"

namespace mptee {

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    buf_.push_back(static_cast<uint8_t>(v));
    buf_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void raw(ByteView v) { buf_.insert(buf_.end(), v.begin(), v.end()); }
  template <size_t N>
  void fixed(const std::array<uint8_t, N>& v) {
    buf_.insert(buf_.end(), v.begin(), v.end());
  }
  /// u32 length prefix + raw bytes.
  void bytes(ByteView v) {
    u32(static_cast<uint32_t>(v.size()));
    raw(v);
  }
  void str(const std::string& s) { bytes(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size())); }

  const Bytes& data() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Bounds-checked reader; any overrun marks the reader failed. Callers check
/// ok() once after pulling all fields, which keeps parse code linear.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  uint8_t u8() { return take(1) ? data_[pos_ - 1] : 0; }
  uint16_t u16() {
    if (!take(2)) return 0;
    return static_cast<uint16_t>(data_[pos_ - 2]) | static_cast<uint16_t>(data_[pos_ - 1]) << 8;
  }
  uint32_t u32() {
    if (!take(4)) return 0;
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ - 4 + i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    if (!take(8)) return 0;
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ - 8 + i]) << (8 * i);
    return v;
  }
  template <size_t N>
  std::array<uint8_t, N> fixed() {
    std::array<uint8_t, N> out{};
    if (take(N)) std::memcpy(out.data(), data_.data() + pos_ - N, N);
    return out;
  }
  Bytes bytes() {
    uint32_t n = u32();
    if (!take(n)) return {};
    return Bytes(data_.begin() + static_cast<long>(pos_ - n), data_.begin() + static_cast<long>(pos_));
  }
  std::string str() {
    Bytes b = bytes();
    return std::string(b.begin(), b.end());
  }

  bool ok() const { return ok_; }
  /// ok() and the whole input consumed.
  bool done() const { return ok_ && pos_ == data_.size(); }
  size_t remaining() const { return data_.size() - pos_; }

 private:
  bool take(size_t n) {
    if (!ok_ || data_.size() - pos_ < n) {
      ok_ = false;
      return false;
    }
    pos_ += n;
    return true;
  }
  ByteView data_;
  size_t pos_ = 0;
  bool ok_ = true;
};

}  // namespace mptee
