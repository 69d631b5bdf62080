#pragma once

#include <stdexcept>
#include <string>

namespace unetseg {

enum class ErrorKind {
  shape,
  contract,
  config,
  data,
  io,
  training,
  selection,
  import,
  load,
  ensemble,
};

/// Base of every error raised by the engine. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define UNETSEG_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

UNETSEG_DEFINE_ERROR(ShapeError, shape)
UNETSEG_DEFINE_ERROR(ContractError, contract)
UNETSEG_DEFINE_ERROR(ConfigError, config)
UNETSEG_DEFINE_ERROR(DataError, data)
UNETSEG_DEFINE_ERROR(IoError, io)
UNETSEG_DEFINE_ERROR(TrainingError, training)
UNETSEG_DEFINE_ERROR(SelectionError, selection)
UNETSEG_DEFINE_ERROR(ImportError, import)
UNETSEG_DEFINE_ERROR(LoadError, load)
UNETSEG_DEFINE_ERROR(EnsembleError, ensemble)

#undef UNETSEG_DEFINE_ERROR

/// Process exit codes: 0 ok, 2 config, 3 data, 4 training/numeric, 5 I/O.
int exit_code(ErrorKind kind) noexcept;

}  // namespace unetseg
