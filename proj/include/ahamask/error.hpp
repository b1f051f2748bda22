#pragma once

#include <stdexcept>
#include <string>

namespace ahamask {

// Base of every error raised by the library. `kind()` lets callers (the CLI
// in particular) map failures onto exit codes without string matching.
enum class ErrorKind {
  dimension,
  numeric,
  contract,
  parameter,
  length,
  format,
  io,
  config,
  missing_artifact,
  unconverged,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::dimension, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorKind::contract, w) {}
};
struct ParameterError : Error {
  explicit ParameterError(const std::string& w) : Error(ErrorKind::parameter, w) {}
};
struct LengthError : Error {
  explicit LengthError(const std::string& w) : Error(ErrorKind::length, w) {}
};
enum class FormatCode { bad_magic, bad_version, wrong_kind, truncated, nonzero_padding, trailing_bytes, bad_header };

struct FormatError : Error {
  FormatError(FormatCode code, const std::string& w) : Error(ErrorKind::format, w), code(code) {}
  FormatCode code;
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct MissingArtifactError : Error {
  explicit MissingArtifactError(const std::string& w) : Error(ErrorKind::missing_artifact, w) {}
};
struct UnconvergedError : Error {
  explicit UnconvergedError(const std::string& w) : Error(ErrorKind::unconverged, w) {}
};

}  // namespace ahamask
