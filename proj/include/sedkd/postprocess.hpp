#pragma once

// Event-specific post processing: per-class median-filter windows sized from
// the knee of each class's cumulative sorted-duration curve, smoothing of
// posteriors and binary decisions, and run-length decoding into segments.

#include <cstddef>
#include <string>
#include <vector>

#include "sedkd/ndgrad.hpp"
#include "sedkd/types.hpp"

namespace sedkd::post {

struct DurationProfile {
  // Per class: durations in seconds, ascending, and their running sums.
  std::vector<std::vector<double>> durations;
  std::vector<std::vector<double>> cumulative;
};

struct WindowEntry {
  std::size_t window = 1;         // odd, >= 1, in frames
  std::size_t knee = 0;           // N_c; 0 when the class had no segments
  double mean_duration_s = 0.0;   // statistic the window was scaled from
  bool fallback = false;          // class had no strong segments

  bool operator==(const WindowEntry&) const = default;
};

struct WindowTable {
  std::vector<WindowEntry> entries;  // indexed by class id

  std::vector<std::size_t> windows() const;
  bool operator==(const WindowTable&) const = default;
};

DurationProfile build_duration_profile(const std::vector<EventSegment>& strong_labels,
                                       std::size_t n_classes);

// 1-based index maximising the discrete second difference of the cumulative
// curve over interior points, smallest index on ties. Lists of length <= 2
// return their length.
std::size_t knee_index(const std::vector<double>& cumulative);

// Nearest odd integer >= 1; exact ties round up (40 -> 41).
std::size_t round_to_odd(double frames);

enum class WindowRule {
  knee,     // mean of the first N_c sorted durations (event-specific)
  average,  // mean of all durations
};

WindowTable compute_window_table(const DurationProfile& profile, double eta, double frame_rate,
                                 WindowRule rule = WindowRule::knee);

// Sliding median with replicate padding of W/2 samples at both ends.
std::vector<double> median_filter(const std::vector<double>& seq, std::size_t window);

// Maximal runs of ones per class. binary_frames: [T, C].
std::vector<EventSegment> decode_segments(const nd::Array& binary_frames, double frame_rate,
                                          const std::string& clip = {});

// Frame j of class c is active iff its centre (j + 0.5) / frame_rate lies in
// [onset, offset) of some segment of class c. Result: [T, C].
nd::Array rasterize_segments(const std::vector<EventSegment>& segments, std::size_t n_frames,
                             std::size_t n_classes, double frame_rate);

nd::Array binarize(const nd::Array& probs, double threshold);

// Tag mask -> per-column median filter -> threshold -> median filter on the
// binary columns -> decode. frame_probs: [T, C].
std::vector<EventSegment> esp_pipeline(const nd::Array& frame_probs,
                                       const std::vector<double>& clip_onehot,
                                       const WindowTable& table, double threshold,
                                       double frame_rate, const std::string& clip = {});

// CSV with header "class,N_c,mean_duration_s,window_frames".
void write_window_table(const std::string& path, const WindowTable& table,
                        const std::vector<std::string>& class_names);

}  // namespace sedkd::post
