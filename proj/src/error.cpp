#include "trajmode/error.hpp"

namespace trajmode {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::Config: return "config";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Mismatch: return "mismatch";
    case ErrorKind::Checkpoint: return "checkpoint";
    case ErrorKind::Data: return "data";
    case ErrorKind::Internal: return "internal";
  }
  return "unknown";
}

}  // namespace trajmode
