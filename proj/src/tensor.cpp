#include "imgmatch/tensor.hpp"

namespace imgmatch {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kPrecondition: return "precondition error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kIo: return "I/O error";
  }
  return "error";
}

namespace numcore {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace numcore
}  // namespace imgmatch
