#include "sedkd/pipeline.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "sedkd/errors.hpp"
#include "sedkd/segment_io.hpp"

namespace sedkd::pipeline {

namespace fs = std::filesystem;

namespace {

void say(const Log& log, const std::string& line) {
  if (log) log(line);
}

std::string join(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::io, "cannot create directory " + dir + ": " + ec.message());
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, '\t')) out.push_back(cur);
  return out;
}

bool tier_selected(const std::string& tier, Tier t) {
  return tier == "all" || tier == tier_name(t);
}

}  // namespace

data::GenerationSummary gen_data(const config::RunConfig& config, const std::string& root,
                                 const Log& log) {
  config.validate();
  make_dir(root);
  auto summary = data::generate_synthetic(config.data, root);
  config::save_config(join(root, "config.cfg"), config);
  say(log, summary.text());
  return summary;
}

TrainSummary train(const config::RunConfig& config, const std::string& data_root,
                   const std::string& out_dir, bool resume, const Log& log) {
  config.validate();
  const data::TrainingData data = data::load_training_data(data_root);
  make_dir(out_dir);
  const std::string snapshot = join(out_dir, "config.cfg");
  if (resume) {
    require(fs::exists(join(out_dir, "last.ckpt")), ErrorKind::data,
            "nothing to resume: " + join(out_dir, "last.ckpt") + " does not exist");
    config::RunConfig stored = config::load_config(snapshot);
    stored.train.epochs = config.train.epochs;
    require(config::format_config(stored) == config::format_config(config), ErrorKind::parameter,
            "the configuration differs from the interrupted run in " + snapshot);
  }
  config::save_config(snapshot, config);

  train::Trainer trainer(config.model_for(data.n_classes(), data.n_features), config.train,
                         config.post, data);
  post::write_window_table(join(out_dir, "window_table.csv"), trainer.window_table(),
                           data.class_names);
  if (resume) {
    trainer.resume(out_dir);
    say(log, "resuming after epoch " + std::to_string(trainer.state().epoch));
  }
  say(log, "training on " + std::to_string(data.strong.size()) + " strong, " +
               std::to_string(data.weak.size()) + " weak, " +
               std::to_string(data.unlabeled.size()) + " unlabeled clips; " +
               std::to_string(data.dev.size()) + " dev clips; ablation " +
               train::format_ablation(config.train.ablation));
  const int epochs = config.train.epochs;
  trainer.run(out_dir, [&](const train::TraceRow& r) {
    say(log, "epoch " + std::to_string(r.epoch) + "/" + std::to_string(epochs) + " stage " +
                 std::to_string(r.stage) + " loss " + fixed(r.mean_terms.total) +
                 " dev event-F1 " + fixed(r.dev_event_f1) + " segment-F1 " +
                 fixed(r.dev_segment_f1) + " AT-F1 " + fixed(r.dev_at_f1) + " best " +
                 fixed(r.best_event_f1));
  });
  say(log, "best dev event-F1 " + fixed(trainer.state().best_f1) + " at epoch " +
               std::to_string(trainer.state().best_epoch));
  return {trainer.state(), trainer.trace()};
}

std::size_t predict(const config::RunConfig& config, const std::string& checkpoint,
                    const std::string& data_root, const std::string& out_dir,
                    const std::string& tier, unsigned threads, const Log& log) {
  config.validate();
  static const std::set<std::string> tiers = {"strong", "weak", "unlabeled", "dev", "all"};
  require(tiers.count(tier) > 0, ErrorKind::parameter, "unknown tier '" + tier + "'");
  const data::DatasetManifest manifest = data::read_manifest(data_root, true);
  train::ModelBundle models(config.model_for(manifest.n_classes(), manifest.n_features),
                            config.train.seed);
  train::restore_parameters(models, nd::load_checkpoint(checkpoint));

  std::vector<const data::ClipRecord*> records;
  for (const auto& r : manifest.records)
    if (tier_selected(tier, r.tier)) records.push_back(&r);

  std::vector<train::ClipPrediction> preds(records.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, records.size()));
  auto work = [&](unsigned w) {
    for (std::size_t i = w; i < records.size(); i += workers) {
      const auto x = data::read_features(join(data_root, records[i]->features));
      preds[i] = train::predict_clip(models, x, config.post.at_source);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  make_dir(join(out_dir, "posteriors"));
  train::PostConfig raw = config.post;
  raw.mode = train::PostMode::none;
  const auto table = train::window_table_for(raw, {}, manifest.n_classes(), manifest.frame_rate);
  SegmentList decoded;
  std::ofstream probs(join(out_dir, "clip_probs.tsv"), std::ios::binary);
  require(static_cast<bool>(probs), ErrorKind::io, "cannot write " + join(out_dir, "clip_probs.tsv"));
  probs << "clip";
  for (const auto& c : manifest.class_names) probs << '\t' << c;
  probs << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& id = records[i]->id;
    data::write_features(join(fs::path(out_dir) / "posteriors", id + ".sedf"),
                         preds[i].frame_probs);
    probs << id;
    for (std::size_t c = 0; c < manifest.n_classes(); ++c)
      probs << '\t' << format_number(preds[i].clip_probs[c]);
    probs << '\n';
    decoded.clips.push_back(id);
    auto segs = train::decode_clip(preds[i], table, raw, manifest.frame_rate, id);
    decoded.segments.insert(decoded.segments.end(), segs.begin(), segs.end());
  }
  require(static_cast<bool>(probs), ErrorKind::io, "write failed: " + join(out_dir, "clip_probs.tsv"));
  write_segments(join(out_dir, "predictions_raw.tsv"), decoded, manifest.class_names);
  say(log, "predicted " + std::to_string(records.size()) + " clips (" + tier + ") into " + out_dir);
  return records.size();
}

std::size_t postprocess(const config::RunConfig& config, const std::string& predict_dir,
                        const std::string& data_root, const std::string& out_dir,
                        const Log& log) {
  config.validate();
  const data::DatasetManifest manifest = data::read_manifest(data_root, false);
  const std::size_t n_classes = manifest.n_classes();
  const std::string probs_path = join(predict_dir, "clip_probs.tsv");
  std::ifstream in(probs_path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot read " + probs_path);

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::data, probs_path + ": empty file");
  auto header = split_tabs(line);
  std::vector<std::string> expected{"clip"};
  expected.insert(expected.end(), manifest.class_names.begin(), manifest.class_names.end());
  require(header == expected, ErrorKind::data,
          probs_path + ": class columns do not match the dataset manifest");

  const auto table = train::window_table_for(config.post, manifest.strong_labels, n_classes,
                                             manifest.frame_rate);
  make_dir(out_dir);
  post::write_window_table(join(out_dir, "window_table.csv"), table, manifest.class_names);

  SegmentList decoded;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    const std::string where = probs_path + ":" + std::to_string(line_no);
    require(fields.size() == n_classes + 1, ErrorKind::data, where + ": wrong column count");
    train::ClipPrediction pred;
    pred.clip_probs = nd::Array({n_classes});
    for (std::size_t c = 0; c < n_classes; ++c) {
      double v = 0.0;
      const auto& f = fields[c + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      require(ec == std::errc() && ptr == f.data() + f.size() && v >= 0.0 && v <= 1.0,
              ErrorKind::data, where + ": bad probability '" + f + "'");
      pred.clip_probs[c] = v;
    }
    const std::string& id = fields[0];
    pred.frame_probs = data::read_features(join(fs::path(predict_dir) / "posteriors", id + ".sedf"));
    require(pred.frame_probs.dim(1) == n_classes, ErrorKind::data,
            "posteriors of '" + id + "' have " + std::to_string(pred.frame_probs.dim(1)) +
                " columns, expected " + std::to_string(n_classes));
    decoded.clips.push_back(id);
    auto segs = train::decode_clip(pred, table, config.post, manifest.frame_rate, id);
    decoded.segments.insert(decoded.segments.end(), segs.begin(), segs.end());
  }
  write_segments(join(out_dir, "predictions.tsv"), decoded, manifest.class_names);
  std::string windows;
  for (std::size_t c = 0; c < n_classes; ++c)
    windows += (c ? ", " : "") + manifest.class_names[c] + "=" +
               std::to_string(table.entries[c].window);
  say(log, std::string("post-processed ") + std::to_string(decoded.clips.size()) +
               " clips (mode " + train::post_mode_name(config.post.mode) + ", windows " +
               windows + ")");
  return decoded.segments.size();
}

EvalReport evaluate(const std::string& refs_path, const std::string& preds_path,
                    const std::string& data_root, const std::string& out_dir, const Log& log) {
  const data::DatasetManifest manifest = data::read_manifest(data_root, false);
  EvalReport report;
  report.class_names = manifest.class_names;
  const std::size_t n_classes = manifest.n_classes();
  const SegmentList refs = read_segments(refs_path, manifest.class_names);
  const SegmentList preds = read_segments(preds_path, manifest.class_names);
  const double clip_seconds = static_cast<double>(manifest.n_frames) / manifest.frame_rate;

  report.event = metrics::event_based_f1(refs.segments, preds.segments, n_classes);
  report.segment = metrics::segment_based_f1(refs.segments, preds.segments, n_classes, 1.0,
                                             clip_seconds);
  std::vector<std::string> clips = refs.clips;
  std::set<std::string> known(clips.begin(), clips.end());
  for (const auto& c : preds.clips)
    if (known.insert(c).second) clips.push_back(c);
  for (const auto& s : refs.segments)
    if (known.insert(s.clip).second) clips.push_back(s.clip);
  report.tagging = metrics::clip_macro_f1(metrics::tags_from_segments(refs.segments, clips, n_classes),
                                          metrics::tags_from_segments(preds.segments, clips, n_classes));

  make_dir(out_dir);
  {
    const std::string path = join(out_dir, "report.csv");
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path);
    out << "metric,class,tp,fp,fn,precision,recall,f1,excluded\n";
    metrics::append_report_csv(out, "event", report.event, manifest.class_names);
    metrics::append_report_csv(out, "segment", report.segment, manifest.class_names);
    metrics::append_report_csv(out, "tagging", report.tagging, manifest.class_names);
    require(static_cast<bool>(out), ErrorKind::io, "write failed: " + path);
  }
  const std::string text =
      metrics::report_table("event-based (collar 200 ms onset, max(200 ms, 20%) offset)",
                            report.event, manifest.class_names) +
      "\n" +
      metrics::report_table("segment-based (1 s segments)", report.segment, manifest.class_names) +
      "\n" + metrics::report_table("clip-level tagging", report.tagging, manifest.class_names);
  {
    const std::string path = join(out_dir, "report.txt");
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path);
    out << text;
  }
  say(log, text);
  return report;
}

}  // namespace sedkd::pipeline
