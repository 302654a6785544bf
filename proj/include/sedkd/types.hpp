#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace sedkd {

// Annotation tier of a clip. `dev` clips are strongly labeled but held out
// for model selection and never enter the training pools.
enum class Tier { strong, weak, unlabeled, dev };

const char* tier_name(Tier tier) noexcept;
Tier parse_tier(const std::string& name);

// One event occurrence: a strong annotation or a decoded prediction.
struct EventSegment {
  std::string clip;
  std::size_t label = 0;
  double onset = 0.0;
  double offset = 0.0;

  double duration() const noexcept { return offset - onset; }
  bool operator==(const EventSegment&) const = default;
};

// Throws a data error naming the segment when offset <= onset, onset < 0 or
// the label is out of range.
void validate_segment(const EventSegment& seg, std::size_t n_classes);

}  // namespace sedkd
