#include "unetseg/error.hpp"

namespace unetseg {

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::contract:
      return 2;
    case ErrorKind::data:
    case ErrorKind::shape:
    case ErrorKind::import:
    case ErrorKind::ensemble:
      return 3;
    case ErrorKind::training:
    case ErrorKind::selection:
      return 4;
    case ErrorKind::io:
    case ErrorKind::load:
      return 5;
  }
  return 1;
}

}  // namespace unetseg
