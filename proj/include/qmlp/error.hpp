#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qmlp {

enum class ErrorCode {
  invalid_argument,
  io,
  parse,
  missing_column,
  empty_input,
  empty_partition,
  dimension_mismatch,
  overflow,
  divergence,
  conversion,
  package_version,
  package_checksum,
  package_malformed,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure surfaced by the library is an Error carrying a stable code,
// so the CLI can report it in machine-readable form.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

// CSV errors point at a cell; row is the 1-based line number in the file,
// column the 1-based field index (0 when the whole line is at fault).
class ParseError : public Error {
public:
  ParseError(ErrorCode code, std::size_t row, std::size_t column, const std::string& what);

  [[nodiscard]] std::size_t row() const noexcept { return row_; }
  [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
  std::size_t row_;
  std::size_t column_;
};

}  // namespace qmlp
