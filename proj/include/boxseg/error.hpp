#pragma once

#include <stdexcept>
#include <string>

namespace boxseg {

enum class ErrorKind {
  kShape,
  kInvalidArgument,
  kIo,
  kFormat,
  kState,
};

const char* to_string(ErrorKind kind);

// Every failure surfaced by the library carries a kind and, for shape
// problems, the name of the offending axis.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string axis = {});

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& axis() const noexcept { return axis_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string axis_;
  std::string detail_;
};

[[noreturn]] void throw_shape(const std::string& op, const std::string& axis,
                              std::size_t expected, std::size_t actual);
[[noreturn]] void throw_invalid(const std::string& message);

}  // namespace boxseg
