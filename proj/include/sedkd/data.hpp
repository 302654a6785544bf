#pragma once

// Synthetic three-tier datasets, the on-disk manifest and SEDF1 feature files.
//
// Layout under a dataset root:
//   manifest.tsv            header keys, then one row per clip
//   features/<clip>.sedf    T x F float32 features
//   labels/strong.tsv       segments of strong clips
//   labels/dev.tsv          segments of the held-out dev clips
//   truth/weak.tsv          hidden segments of weak clips (evaluation only)
//   truth/unlabeled.tsv     hidden segments of unlabeled clips (evaluation only)

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sedkd/ndgrad.hpp"
#include "sedkd/segment_io.hpp"
#include "sedkd/types.hpp"

namespace sedkd::data {

struct DurationComponent {
  double lo = 1.0, hi = 2.0;  // seconds, uniform
  double weight = 1.0;

  bool operator==(const DurationComponent&) const = default;
};

struct DurationSpec {
  std::vector<DurationComponent> components;

  double sample(std::mt19937_64& rng) const;
  bool operator==(const DurationSpec&) const = default;
};

// "0.5-1.5; 3-7; 0.5-1.5@0.7+5-8@0.3": one spec per class, mixture
// components joined by '+', optional '@weight'.
std::vector<DurationSpec> parse_duration_specs(const std::string& text);
std::string format_duration_specs(const std::vector<DurationSpec>& specs);
std::vector<double> parse_number_list(const std::string& text);
std::string format_number_list(const std::vector<double>& values);

struct SynthConfig {
  std::size_t n_strong = 200, n_weak = 200, n_unlabeled = 400, n_dev = 100;
  std::size_t n_classes = 4;
  std::size_t n_frames = 100, n_features = 16;
  double clip_seconds = 10.0;
  double noise = 0.1;
  std::vector<double> class_priors;         // empty: 0.5 for every class
  std::vector<DurationSpec> durations;      // empty: defaults cycling per class
  std::size_t max_events = 2;               // per class per clip
  double template_width = 1.0;              // band spread in feature bins
  std::uint64_t seed = 1;

  double frame_rate() const { return static_cast<double>(n_frames) / clip_seconds; }
  std::vector<double> priors() const;
  std::vector<DurationSpec> duration_specs() const;
  std::vector<std::string> class_names() const;
  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

// Gaussian frequency band of each class: [C, F].
nd::Array class_templates(const SynthConfig& config);

struct SyntheticClip {
  std::string id;
  Tier tier = Tier::strong;
  nd::Array features;                // [T, F], float32-representable
  std::vector<EventSegment> truth;   // full ground truth
};

std::vector<SyntheticClip> synthesize(const SynthConfig& config);

struct ClipRecord {
  std::string id;
  Tier tier = Tier::strong;
  std::string features;              // relative to the dataset root
  std::vector<std::string> tags;     // empty for unlabeled clips

  bool operator==(const ClipRecord&) const = default;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  double frame_rate = 10.0;
  std::size_t n_frames = 0, n_features = 0;
  std::vector<ClipRecord> records;
  std::vector<EventSegment> strong_labels;  // strong tier
  std::vector<EventSegment> dev_labels;     // dev tier

  std::size_t n_classes() const { return class_names.size(); }
  bool operator==(const DatasetManifest&) const = default;
};

void write_manifest(const std::string& root, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& root, bool check_files = true);

void write_features(const std::string& path, const nd::Array& matrix);
nd::Array read_features(const std::string& path);

struct GenerationSummary {
  std::size_t counts[4] = {0, 0, 0, 0};  // by Tier
  std::vector<double> class_frequency;   // fraction of clips containing each class
  std::vector<std::string> class_names;

  std::string text() const;
};

GenerationSummary generate_synthetic(const SynthConfig& config, const std::string& root);

// ---- tier-stripped views -------------------------------------------------------

struct TrainClip {
  std::string id;
  Tier tier = Tier::unlabeled;
  nd::Array features;
  std::optional<std::vector<double>> weak_tags;        // strong and weak clips
  std::optional<std::vector<EventSegment>> segments;   // strong clips
};

struct EvalClip {
  std::string id;
  nd::Array features;
  std::vector<EventSegment> segments;
  std::vector<double> tags;
};

struct TrainingData {
  std::vector<std::string> class_names;
  double frame_rate = 10.0;
  std::size_t n_frames = 0, n_features = 0;
  std::vector<TrainClip> strong, weak, unlabeled;
  std::vector<EvalClip> dev;

  std::size_t n_classes() const { return class_names.size(); }
  std::vector<EventSegment> strong_segments() const;
};

// Reads the manifest, labels and features; never touches truth/.
TrainingData load_training_data(const std::string& root);

// Evaluation-only access to the hidden segments of weak/unlabeled clips.
SegmentList load_hidden_truth(const std::string& root, Tier tier,
                              const std::vector<std::string>& class_names);

std::vector<double> onehot_tags(const std::vector<std::string>& tags,
                                const std::vector<std::string>& class_names);

}  // namespace sedkd::data
