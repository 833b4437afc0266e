// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <utility>
#include <variant>

namespace mptee {

/// Minimal ok-or-error carrier for operations whose failure is an expected
/// protocol outcome rather than a programming error.
template <class T, class E>
class Result {
 public:
  static Result ok(T v) { return Result(std::variant<T, E>(std::in_place_index<0>, std::move(v))); }
  static Result err(E e) { return Result(std::variant<T, E>(std::in_place_index<1>, std::move(e))); }

  bool has_value() const { return v_.index() == 0; }
  explicit operator bool() const { return has_value(); }

  const T& value() const {
    assert(has_value());
    return std::get<0>(v_);
  }
  T& value() {
    assert(has_value());
    return std::get<0>(v_);
  }
  const E& error() const {
    assert(!has_value());
    return std::get<1>(v_);
  }

 private:
  explicit Result(std::variant<T, E> v) : v_(std::move(v)) {}
  std::variant<T, E> v_;
};

}  // namespace mptee
