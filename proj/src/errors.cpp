#include "sedkd/errors.hpp"

namespace sedkd {

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::numeric_domain: return "numeric-domain error";
    case ErrorKind::numeric_failure: return "numeric failure";
    case ErrorKind::data: return "data error";
    case ErrorKind::format: return "format error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::io: return "io error";
    case ErrorKind::version: return "version error";
  }
  return "error";
}

}  // namespace sedkd
