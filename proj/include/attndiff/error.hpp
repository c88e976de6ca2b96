#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace attndiff {

/// A single validation finding. `code` is a short stable phrase
/// (e.g. "tensor overlap"); `detail` carries location context.
struct Diagnostic {
  std::string code;
  std::string detail;

  std::string to_string() const {
    return detail.empty() ? code : code + ": " + detail;
  }
};

bool has_code(const std::vector<Diagnostic>& diags, const std::string& code);

/// Base of all library errors. `code()` is the stable diagnostic phrase.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail)
      : std::runtime_error(detail.empty() ? code : code + ": " + detail),
        code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Structural problems in a pack or its byte stream.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite or out-of-domain numeric values.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Bad caller-supplied parameters (shape, fraction, metric name, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Input parses but violates a domain invariant. Carries every finding.
class ValidationError : public Error {
 public:
  ValidationError(std::string code, const std::string& detail,
                  std::vector<Diagnostic> diagnostics = {})
      : Error(std::move(code), detail), diagnostics_(std::move(diagnostics)) {}

  const std::vector<Diagnostic>& diagnostics() const noexcept {
    return diagnostics_;
  }

 private:
  std::vector<Diagnostic> diagnostics_;
};

// Similarity is undefined (e.g. a centered Gram with zero norm).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace attndiff
