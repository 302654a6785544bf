#include "sedkd/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sedkd/errors.hpp"

namespace fs = std::filesystem;

namespace sedkd::data {

namespace {

constexpr char kFeatureMagic[5] = {'S', 'E', 'D', 'F', '1'};
constexpr const char* kManifestTag = "# sedkd manifest v1";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used == t.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::parse, what + ": bad number '" + text + "'");
}

std::size_t parse_size(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
    fail(ErrorKind::parse, what + ": bad count '" + text + "'");
  return static_cast<std::size_t>(std::stoull(t));
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) fail(ErrorKind::format, path + ": truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

const char* tier_prefix(Tier t) {
  switch (t) {
    case Tier::strong: return "strong";
    case Tier::weak: return "weak";
    case Tier::unlabeled: return "unlabeled";
    case Tier::dev: return "dev";
  }
  return "clip";
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory " + p.string() + ": " + ec.message());
}

}  // namespace

double DurationSpec::sample(std::mt19937_64& rng) const {
  require(!components.empty(), ErrorKind::parameter, "duration spec without components");
  std::vector<double> weights;
  for (const auto& c : components) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const auto& c = components[pick(rng)];
  std::uniform_real_distribution<double> u(c.lo, c.hi);
  return c.lo == c.hi ? c.lo : u(rng);
}

std::vector<DurationSpec> parse_duration_specs(const std::string& text) {
  std::vector<DurationSpec> specs;
  if (trim(text).empty()) return specs;
  for (const auto& cls : split(text, ';')) {
    DurationSpec spec;
    for (const auto& comp_text : split(cls, '+')) {
      DurationComponent comp;
      std::string range = comp_text;
      const auto at = comp_text.find('@');
      if (at != std::string::npos) {
        comp.weight = parse_double(comp_text.substr(at + 1), "durations");
        range = comp_text.substr(0, at);
      }
      const auto dash = trim(range).find('-');
      const std::string r = trim(range);
      if (dash == std::string::npos || dash == 0) {
        comp.lo = comp.hi = parse_double(r, "durations");
      } else {
        comp.lo = parse_double(r.substr(0, dash), "durations");
        comp.hi = parse_double(r.substr(dash + 1), "durations");
      }
      if (!(comp.lo > 0.0 && comp.hi >= comp.lo && comp.weight > 0.0))
        fail(ErrorKind::parse, "durations: invalid component '" + trim(comp_text) + "'");
      spec.components.push_back(comp);
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::string format_duration_specs(const std::vector<DurationSpec>& specs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i) os << "; ";
    for (std::size_t j = 0; j < specs[i].components.size(); ++j) {
      const auto& c = specs[i].components[j];
      if (j) os << '+';
      os << format_number(c.lo) << '-' << format_number(c.hi);
      if (specs[i].components.size() > 1 || c.weight != 1.0) os << '@' << format_number(c.weight);
    }
  }
  return os.str();
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) out.push_back(parse_double(part, "number list"));
  return out;
}

std::string format_number_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_number(values[i]);
  }
  return out;
}

std::vector<double> SynthConfig::priors() const {
  if (class_priors.empty()) return std::vector<double>(n_classes, 0.5);
  return class_priors;
}

std::vector<DurationSpec> SynthConfig::duration_specs() const {
  std::vector<DurationSpec> base = durations;
  if (base.empty()) base = parse_duration_specs("0.5-1.5; 2-4; 1-2; 3-6");
  std::vector<DurationSpec> out;
  for (std::size_t c = 0; c < n_classes; ++c) out.push_back(base[c % base.size()]);
  return out;
}

std::vector<std::string> SynthConfig::class_names() const {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < n_classes; ++c) names.push_back("event" + std::to_string(c));
  return names;
}

void SynthConfig::validate() const {
  require(n_classes >= 1, ErrorKind::parameter, "data: n_classes must be >= 1");
  require(n_frames >= 1 && n_features >= 1, ErrorKind::parameter,
          "data: n_frames and n_features must be >= 1");
  require(clip_seconds > 0.0, ErrorKind::parameter, "data: clip_seconds must be > 0");
  require(noise >= 0.0 && std::isfinite(noise), ErrorKind::parameter, "data: noise must be >= 0");
  require(max_events >= 1, ErrorKind::parameter, "data: max_events must be >= 1");
  require(template_width > 0.0, ErrorKind::parameter, "data: template_width must be > 0");
  require(n_strong + n_weak + n_unlabeled + n_dev >= 1, ErrorKind::parameter,
          "data: no clips requested");
  require(class_priors.empty() || class_priors.size() == n_classes, ErrorKind::parameter,
          "data: class_priors must list one value per class (" + std::to_string(n_classes) +
              "), got " + std::to_string(class_priors.size()));
  for (double p : class_priors)
    require(p >= 0.0 && p <= 1.0, ErrorKind::parameter, "data: class priors must lie in [0,1]");
  require(durations.empty() || durations.size() == n_classes, ErrorKind::parameter,
          "data: durations must list one spec per class (" + std::to_string(n_classes) +
              "), got " + std::to_string(durations.size()));
}

nd::Array class_templates(const SynthConfig& config) {
  const std::size_t c_n = config.n_classes, f_n = config.n_features;
  nd::Array t({c_n, f_n});
  for (std::size_t c = 0; c < c_n; ++c) {
    const double centre = (static_cast<double>(c) + 0.5) * static_cast<double>(f_n) /
                          static_cast<double>(c_n) - 0.5;
    for (std::size_t f = 0; f < f_n; ++f) {
      const double z = (static_cast<double>(f) - centre) / config.template_width;
      t.at(c, f) = std::exp(-0.5 * z * z);
    }
  }
  return t;
}

std::vector<SyntheticClip> synthesize(const SynthConfig& config) {
  config.validate();
  const auto priors = config.priors();
  const auto specs = config.duration_specs();
  const nd::Array templates = class_templates(config);
  const double fr = config.frame_rate();
  const std::size_t frames = config.n_frames, feats = config.n_features;

  std::vector<SyntheticClip> clips;
  const std::array<std::pair<Tier, std::size_t>, 4> tiers{{{Tier::strong, config.n_strong},
                                                            {Tier::weak, config.n_weak},
                                                            {Tier::unlabeled, config.n_unlabeled},
                                                            {Tier::dev, config.n_dev}}};
  for (const auto& [tier, count] : tiers) {
    const auto tier_id = static_cast<std::uint64_t>(tier);
    // Exact class counts per tier, assigned to clips by shuffling.
    std::vector<std::vector<char>> present(count, std::vector<char>(config.n_classes, 0));
    auto tier_rng = stream(config.seed, tier_id, 0xC1A55ULL);
    for (std::size_t c = 0; c < config.n_classes; ++c) {
      const auto n_on = static_cast<std::size_t>(std::llround(priors[c] * static_cast<double>(count)));
      std::vector<std::size_t> order(count);
      for (std::size_t i = 0; i < count; ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), tier_rng);
      for (std::size_t i = 0; i < n_on; ++i) present[order[i]][c] = 1;
    }
    for (std::size_t i = 0; i < count; ++i) {
      auto rng = stream(config.seed, tier_id + 1, i);
      SyntheticClip clip;
      char name[32];
      std::snprintf(name, sizeof name, "%s_%05zu", tier_prefix(tier), i);
      clip.id = name;
      clip.tier = tier;
      nd::Array x({frames, feats});
      std::normal_distribution<double> noise(0.0, 1.0);
      for (auto& v : x.data()) v = config.noise * noise(rng);
      std::uniform_int_distribution<std::size_t> n_events(1, config.max_events);
      for (std::size_t c = 0; c < config.n_classes; ++c) {
        if (!present[i][c]) continue;
        const std::size_t want = n_events(rng);
        std::vector<std::pair<std::size_t, std::size_t>> placed;  // [start, end)
        for (std::size_t e = 0; e < want; ++e) {
          const double dur = specs[c].sample(rng);
          const std::size_t len = std::clamp<std::size_t>(
              static_cast<std::size_t>(std::llround(dur * fr)), 1, frames);
          std::uniform_int_distribution<std::size_t> start(0, frames - len);
          for (int attempt = 0; attempt < 50; ++attempt) {
            const std::size_t s = start(rng), end = s + len;
            // Keep a one-frame gap so runs of one class never merge.
            bool clash = false;
            for (const auto& [ps, pe] : placed)
              if (s <= pe && ps <= end) clash = true;
            if (clash) continue;
            placed.emplace_back(s, end);
            break;
          }
        }
        std::sort(placed.begin(), placed.end());
        for (const auto& [s, end] : placed) {
          clip.truth.push_back({clip.id, c, static_cast<double>(s) / fr,
                                static_cast<double>(end) / fr});
          for (std::size_t t = s; t < end; ++t)
            for (std::size_t f = 0; f < feats; ++f) x.at(t, f) += templates.at(c, f);
        }
      }
      for (auto& v : x.data()) v = static_cast<double>(static_cast<float>(v));
      clip.features = std::move(x);
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

void write_features(const std::string& path, const nd::Array& matrix) {
  require(matrix.rank() == 2 && matrix.dim(0) >= 1 && matrix.dim(1) >= 1, ErrorKind::contract,
          "write_features: need a non-empty T x F matrix, got " + nd::shape_str(matrix.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out.write(kFeatureMagic, sizeof kFeatureMagic);
  put_u64(out, matrix.dim(0));
  put_u64(out, matrix.dim(1));
  std::vector<unsigned char> buf(matrix.size() * 4);
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    const double v = matrix[i];
    require(std::isfinite(v), ErrorKind::data, "write_features: non-finite value in " + path);
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::io, "write failed: " + path);
}

nd::Array read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open feature file " + path);
  char magic[sizeof kFeatureMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kFeatureMagic, sizeof magic) != 0)
    fail(ErrorKind::format, path + ": not an SEDF1 feature file");
  const std::uint64_t rows = get_u64(in, path), cols = get_u64(in, path);
  if (rows == 0 || cols == 0) fail(ErrorKind::format, path + ": empty feature matrix");
  if (rows > (1ULL << 32) || cols > (1ULL << 20))
    fail(ErrorKind::format, path + ": implausible dimensions");
  std::vector<unsigned char> buf(rows * cols * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    fail(ErrorKind::format, path + ": truncated data");
  nd::Array out({rows, cols});
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

void write_manifest(const std::string& root, const DatasetManifest& m) {
  ensure_dir(fs::path(root) / "labels");
  const std::string path = (fs::path(root) / "manifest.tsv").string();
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  std::string classes;
  for (std::size_t c = 0; c < m.class_names.size(); ++c) {
    const auto& n = m.class_names[c];
    require(!n.empty() && n.find_first_of(",\t\n ") == std::string::npos, ErrorKind::data,
            "class name '" + n + "' must be non-empty without spaces, tabs or commas");
    classes += (c ? "," : "") + n;
  }
  out << kManifestTag << '\n';
  out << "classes\t" << classes << '\n';
  out << "frame_rate\t" << format_number(m.frame_rate) << '\n';
  out << "n_frames\t" << m.n_frames << '\n';
  out << "n_features\t" << m.n_features << '\n';
  out << "clip\ttier\tfeatures\ttags\n";
  for (const auto& r : m.records) {
    out << r.id << '\t' << tier_name(r.tier) << '\t' << r.features << '\t';
    for (std::size_t i = 0; i < r.tags.size(); ++i) out << (i ? "," : "") << r.tags[i];
    out << '\n';
  }
  if (!out) fail(ErrorKind::io, "write failed: " + path);

  auto label_file = [&](Tier tier, const std::vector<EventSegment>& segs, const char* name) {
    SegmentList list;
    for (const auto& r : m.records)
      if (r.tier == tier) list.clips.push_back(r.id);
    list.segments = segs;
    write_segments((fs::path(root) / "labels" / name).string(), list, m.class_names);
  };
  label_file(Tier::strong, m.strong_labels, "strong.tsv");
  label_file(Tier::dev, m.dev_labels, "dev.tsv");
}

DatasetManifest read_manifest(const std::string& root, bool check_files) {
  const std::string path = (fs::path(root) / "manifest.tsv").string();
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open manifest " + path);
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool in_rows = false;
  std::set<std::string> ids;
  std::set<std::string> seen_keys;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path + ":" + std::to_string(line_no);
    if (line_no == 1) {
      if (line != kManifestTag) fail(ErrorKind::parse, where + ": missing manifest header");
      continue;
    }
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (!in_rows) {
      if (fields[0] == "clip") {
        in_rows = true;
        continue;
      }
      if (fields.size() != 2) fail(ErrorKind::parse, where + ": expected key<TAB>value");
      const auto& key = fields[0];
      const auto& value = fields[1];
      if (!seen_keys.insert(key).second) fail(ErrorKind::parse, where + ": duplicate key " + key);
      if (key == "classes") {
        m.class_names = split(value, ',');
      } else if (key == "frame_rate") {
        m.frame_rate = parse_double(value, where);
      } else if (key == "n_frames") {
        m.n_frames = parse_size(value, where);
      } else if (key == "n_features") {
        m.n_features = parse_size(value, where);
      } else {
        fail(ErrorKind::parse, where + ": unknown key '" + key + "'");
      }
      continue;
    }
    if (fields.size() != 4) fail(ErrorKind::parse, where + ": expected 4 tab-separated fields");
    ClipRecord r;
    r.id = fields[0];
    try {
      r.tier = parse_tier(fields[1]);
    } catch (const Error& e) {
      fail(ErrorKind::parse, where + ": " + e.what());
    }
    r.features = fields[2];
    if (!fields[3].empty()) r.tags = split(fields[3], ',');
    if (r.id.empty()) fail(ErrorKind::parse, where + ": empty clip id");
    if (!ids.insert(r.id).second) fail(ErrorKind::parse, where + ": duplicate clip id " + r.id);
    for (const auto& t : r.tags)
      if (std::find(m.class_names.begin(), m.class_names.end(), t) == m.class_names.end())
        fail(ErrorKind::parse, where + ": unknown tag '" + t + "'");
    if (r.tier == Tier::unlabeled && !r.tags.empty())
      fail(ErrorKind::parse, where + ": unlabeled clip carries tags");
    if (check_files && !fs::exists(fs::path(root) / r.features))
      fail(ErrorKind::data, where + ": missing feature file " + (fs::path(root) / r.features).string());
    m.records.push_back(std::move(r));
  }
  if (!in_rows) fail(ErrorKind::parse, path + ": no clip table");
  if (m.class_names.empty() || m.class_names.front().empty())
    fail(ErrorKind::parse, path + ": no classes declared");
  if (!(m.frame_rate > 0.0)) fail(ErrorKind::parse, path + ": frame_rate must be > 0");

  auto labels = [&](Tier tier, const char* name) {
    const auto p = fs::path(root) / "labels" / name;
    std::vector<EventSegment> segs;
    if (!fs::exists(p)) return segs;
    auto list = read_segments(p.string(), m.class_names);
    std::map<std::string, Tier> tier_of;
    for (const auto& r : m.records) tier_of[r.id] = r.tier;
    for (const auto& s : list.segments) {
      auto it = tier_of.find(s.clip);
      if (it == tier_of.end() || it->second != tier)
        fail(ErrorKind::data, p.string() + ": segment for clip '" + s.clip + "' which is not a " +
                                  tier_name(tier) + " clip");
    }
    return list.segments;
  };
  m.strong_labels = labels(Tier::strong, "strong.tsv");
  m.dev_labels = labels(Tier::dev, "dev.tsv");
  return m;
}

std::string GenerationSummary::text() const {
  std::ostringstream os;
  os << "clips: strong " << counts[0] << ", weak " << counts[1] << ", unlabeled " << counts[2]
     << ", dev " << counts[3] << '\n';
  os << "class frequency (fraction of clips):";
  for (std::size_t c = 0; c < class_frequency.size(); ++c)
    os << ' ' << class_names[c] << '=' << format_number(std::round(class_frequency[c] * 1e4) / 1e4);
  os << '\n';
  return os.str();
}

GenerationSummary generate_synthetic(const SynthConfig& config, const std::string& root) {
  const auto clips = synthesize(config);
  ensure_dir(fs::path(root) / "features");
  ensure_dir(fs::path(root) / "truth");
  DatasetManifest m;
  m.class_names = config.class_names();
  m.frame_rate = config.frame_rate();
  m.n_frames = config.n_frames;
  m.n_features = config.n_features;
  GenerationSummary summary;
  summary.class_names = m.class_names;
  summary.class_frequency.assign(config.n_classes, 0.0);
  SegmentList hidden_weak, hidden_unlabeled;
  for (const auto& clip : clips) {
    ClipRecord r;
    r.id = clip.id;
    r.tier = clip.tier;
    r.features = "features/" + clip.id + ".sedf";
    write_features((fs::path(root) / r.features).string(), clip.features);
    std::vector<char> on(config.n_classes, 0);
    for (const auto& s : clip.truth) on[s.label] = 1;
    if (clip.tier != Tier::unlabeled)
      for (std::size_t c = 0; c < config.n_classes; ++c)
        if (on[c]) r.tags.push_back(m.class_names[c]);
    for (std::size_t c = 0; c < config.n_classes; ++c) summary.class_frequency[c] += on[c];
    ++summary.counts[static_cast<int>(clip.tier)];
    auto& dest = clip.tier == Tier::strong ? m.strong_labels
                 : clip.tier == Tier::dev  ? m.dev_labels
                 : clip.tier == Tier::weak ? hidden_weak.segments
                                           : hidden_unlabeled.segments;
    dest.insert(dest.end(), clip.truth.begin(), clip.truth.end());
    if (clip.tier == Tier::weak) hidden_weak.clips.push_back(clip.id);
    if (clip.tier == Tier::unlabeled) hidden_unlabeled.clips.push_back(clip.id);
    m.records.push_back(std::move(r));
  }
  for (auto& f : summary.class_frequency) f /= static_cast<double>(std::max<std::size_t>(clips.size(), 1));
  write_manifest(root, m);
  write_segments((fs::path(root) / "truth" / "weak.tsv").string(), hidden_weak, m.class_names);
  write_segments((fs::path(root) / "truth" / "unlabeled.tsv").string(), hidden_unlabeled,
                 m.class_names);
  return summary;
}

std::vector<double> onehot_tags(const std::vector<std::string>& tags,
                                const std::vector<std::string>& class_names) {
  std::vector<double> out(class_names.size(), 0.0);
  for (const auto& t : tags) out[class_index(class_names, t)] = 1.0;
  return out;
}

std::vector<EventSegment> TrainingData::strong_segments() const {
  std::vector<EventSegment> out;
  for (const auto& c : strong)
    if (c.segments) out.insert(out.end(), c.segments->begin(), c.segments->end());
  return out;
}

TrainingData load_training_data(const std::string& root) {
  const DatasetManifest m = read_manifest(root, true);
  TrainingData d;
  d.class_names = m.class_names;
  d.frame_rate = m.frame_rate;
  d.n_frames = m.n_frames;
  d.n_features = m.n_features;
  std::map<std::string, std::vector<EventSegment>> strong_segs, dev_segs;
  for (const auto& s : m.strong_labels) strong_segs[s.clip].push_back(s);
  for (const auto& s : m.dev_labels) dev_segs[s.clip].push_back(s);
  for (const auto& r : m.records) {
    nd::Array x = read_features((fs::path(root) / r.features).string());
    if (x.dim(1) != m.n_features || (m.n_frames && x.dim(0) != m.n_frames))
      fail(ErrorKind::data, r.features + ": shape " + nd::shape_str(x.shape()) +
                                " does not match the manifest (" + std::to_string(m.n_frames) +
                                " x " + std::to_string(m.n_features) + ")");
    if (r.tier == Tier::dev) {
      EvalClip e{r.id, std::move(x), dev_segs[r.id], onehot_tags(r.tags, m.class_names)};
      d.dev.push_back(std::move(e));
      continue;
    }
    TrainClip c;
    c.id = r.id;
    c.tier = r.tier;
    c.features = std::move(x);
    if (r.tier != Tier::unlabeled) c.weak_tags = onehot_tags(r.tags, m.class_names);
    if (r.tier == Tier::strong) c.segments = strong_segs[r.id];
    (r.tier == Tier::strong ? d.strong : r.tier == Tier::weak ? d.weak : d.unlabeled)
        .push_back(std::move(c));
  }
  return d;
}

SegmentList load_hidden_truth(const std::string& root, Tier tier,
                              const std::vector<std::string>& class_names) {
  require(tier == Tier::weak || tier == Tier::unlabeled, ErrorKind::parameter,
          "hidden truth exists only for weak and unlabeled clips");
  return read_segments((fs::path(root) / "truth" / (std::string(tier_name(tier)) + ".tsv")).string(),
                       class_names);
}

}  // namespace sedkd::data
