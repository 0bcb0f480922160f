#pragma once

#include <stdexcept>
#include <string>

namespace pathogan {

// Process exit codes shared by the CLI and the tests that drive it.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitNonFinite = 3,
  kExitIo = 4,
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// netspec
struct UnknownTokenError : Error {
  explicit UnknownTokenError(const std::string& token)
      : Error("unknown netspec token: '" + token + "'") {}
};
struct UnknownSymbolError : Error {
  explicit UnknownSymbolError(const std::string& sym)
      : Error("undeclared netspec symbol: '" + sym + "'") {}
};
struct StructureError : Error {
  using Error::Error;
};
struct ShapeMismatchError : Error {
  ShapeMismatchError(int layer, const std::string& what)
      : Error("shape mismatch at layer " + std::to_string(layer) + ": " + what),
        layer_index(layer) {}
  explicit ShapeMismatchError(const std::string& what) : Error(what) {}
  int layer_index = -1;
};

// data
struct EmptyChannelError : Error {
  using Error::Error;
};
struct DegenerateChannelError : Error {
  using Error::Error;
};
struct MissingSegmentationError : Error {
  using Error::Error;
};
struct InsufficientSlicesError : Error {
  using Error::Error;
};
struct ChannelMismatchError : Error {
  using Error::Error;
};

// training / checkpoints
struct NonFiniteLossError : Error {
  using Error::Error;
};
struct ResumeMismatchError : Error {
  using Error::Error;
};

// configuration and I/O
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace pathogan
