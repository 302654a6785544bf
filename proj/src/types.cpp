#include "sedkd/types.hpp"

#include <sstream>

#include "sedkd/errors.hpp"

namespace sedkd {

const char* tier_name(Tier tier) noexcept {
  switch (tier) {
    case Tier::strong: return "strong";
    case Tier::weak: return "weak";
    case Tier::unlabeled: return "unlabeled";
    case Tier::dev: return "dev";
  }
  return "?";
}

Tier parse_tier(const std::string& name) {
  if (name == "strong") return Tier::strong;
  if (name == "weak") return Tier::weak;
  if (name == "unlabeled") return Tier::unlabeled;
  if (name == "dev") return Tier::dev;
  fail(ErrorKind::parse, "unknown tier '" + name + "'");
}

void validate_segment(const EventSegment& seg, std::size_t n_classes) {
  if (!(seg.offset > seg.onset) || seg.onset < 0.0 || seg.label >= n_classes) {
    std::ostringstream os;
    os << "malformed segment (" << seg.clip << ", class " << seg.label << ", " << seg.onset
       << ", " << seg.offset << ")";
    fail(ErrorKind::data, os.str());
  }
}

}  // namespace sedkd
