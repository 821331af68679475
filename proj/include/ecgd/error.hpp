#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecgd {

enum class ErrorKind {
  Parse,
  Truncated,
  Domain,
  Shape,
  Config,
  Degenerate,
  Integrity,
  Version,
  Io,
  Numeric,
  Unsupported,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for the toolkit. `kind()` is stable and is what the
/// CLI prints as its machine-readable prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ecgd
