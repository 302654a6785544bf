#include "sedkd/segment_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "sedkd/errors.hpp"

namespace sedkd {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_seconds(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::parse, where + ": bad time value '" + text + "'");
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t class_index(const std::vector<std::string>& class_names, const std::string& name) {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  if (it == class_names.end()) fail(ErrorKind::data, "unknown event label '" + name + "'");
  return static_cast<std::size_t>(it - class_names.begin());
}

SegmentList read_segments(const std::string& path, const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  SegmentList list;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    auto fields = split_tabs(line);
    if (line_no == 1 && fields[0] == "filename") continue;
    if (fields.size() != 1 && fields.size() != 4)
      fail(ErrorKind::parse, where + ": expected 1 or 4 tab-separated fields, got " +
                                 std::to_string(fields.size()));
    if (fields[0].empty()) fail(ErrorKind::parse, where + ": empty filename");
    if (seen.insert(fields[0]).second) list.clips.push_back(fields[0]);
    if (fields.size() == 1) continue;
    EventSegment seg;
    seg.clip = fields[0];
    seg.onset = parse_seconds(fields[1], where);
    seg.offset = parse_seconds(fields[2], where);
    try {
      seg.label = class_index(class_names, fields[3]);
      validate_segment(seg, class_names.size());
    } catch (const Error& e) {
      fail(ErrorKind::data, where + ": " + e.what());
    }
    list.segments.push_back(std::move(seg));
  }
  return list;
}

void write_segments(const std::string& path, const SegmentList& list,
                    const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << "filename\tonset\toffset\tevent_label\n";
  std::vector<std::string> order = list.clips;
  std::set<std::string> known(order.begin(), order.end());
  for (const auto& s : list.segments)
    if (known.insert(s.clip).second) order.push_back(s.clip);
  for (const auto& clip : order) {
    bool any = false;
    for (const auto& s : list.segments) {
      if (s.clip != clip) continue;
      require(s.label < class_names.size(), ErrorKind::data,
              "segment label " + std::to_string(s.label) + " has no class name");
      out << s.clip << '\t' << format_number(s.onset) << '\t' << format_number(s.offset) << '\t'
          << class_names[s.label] << '\n';
      any = true;
    }
    if (!any) out << clip << '\n';
  }
  if (!out) fail(ErrorKind::io, "write failed: " + path);
}

}  // namespace sedkd
