// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace more {

enum class ErrorKind {
  InvalidArgument,
  Io,          // missing file, unreadable or malformed data
  Shape,       // array shape or grid mismatch
  Degenerate,  // too few matches, unobservable scale, empty sets
  NonFinite,   // NaN/Inf produced during optimization
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace more
