#pragma once

// Tab-separated event lists: filename, onset, offset, event_label. A row with
// only a filename declares a clip without events.

#include <string>
#include <vector>

#include "sedkd/types.hpp"

namespace sedkd {

struct SegmentList {
  std::vector<std::string> clips;  // every clip mentioned, first-seen order
  std::vector<EventSegment> segments;
};

SegmentList read_segments(const std::string& path, const std::vector<std::string>& class_names);
void write_segments(const std::string& path, const SegmentList& list,
                    const std::vector<std::string>& class_names);

// Shortest decimal text that reads back to the same double.
std::string format_number(double v);

std::size_t class_index(const std::vector<std::string>& class_names, const std::string& name);

}  // namespace sedkd
