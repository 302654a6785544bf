#include "sedkd/sedkd.h"

#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "sedkd/config.hpp"
#include "sedkd/errors.hpp"
#include "sedkd/pipeline.hpp"

struct sedkd_config {
  sedkd::config::RunConfig value;
};

struct sedkd_report {
  sedkd::pipeline::EvalReport value;
};

namespace {

thread_local std::string g_message;
thread_local std::string g_kind;

sedkd_status status_of(sedkd::ErrorKind kind) {
  using sedkd::ErrorKind;
  switch (kind) {
    case ErrorKind::dimension:
    case ErrorKind::parameter:
    case ErrorKind::contract:
      return SEDKD_ERR_USAGE;
    case ErrorKind::data:
    case ErrorKind::format:
    case ErrorKind::parse:
    case ErrorKind::io:
    case ErrorKind::version:
      return SEDKD_ERR_DATA;
    case ErrorKind::numeric_domain:
    case ErrorKind::numeric_failure:
      return SEDKD_ERR_NUMERIC;
  }
  return SEDKD_ERR_INTERNAL;
}

const char* kind_key(sedkd::ErrorKind kind) {
  using sedkd::ErrorKind;
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::contract: return "contract";
    case ErrorKind::numeric_domain: return "numeric_domain";
    case ErrorKind::numeric_failure: return "numeric_failure";
    case ErrorKind::data: return "data";
    case ErrorKind::format: return "format";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
    case ErrorKind::version: return "version";
  }
  return "internal";
}

template <class F>
sedkd_status guarded(F&& body) {
  g_message.clear();
  g_kind.clear();
  try {
    body();
    return SEDKD_OK;
  } catch (const sedkd::Error& e) {
    g_message = e.what();
    g_kind = kind_key(e.kind());
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_message = e.what();
    g_kind = "io";
    return SEDKD_ERR_DATA;
  } catch (const std::bad_alloc&) {
    g_message = "out of memory";
    g_kind = "internal";
    return SEDKD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_message = e.what();
    g_kind = "internal";
    return SEDKD_ERR_INTERNAL;
  } catch (...) {
    g_message = "unknown failure";
    g_kind = "internal";
    return SEDKD_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  sedkd::require(p != nullptr, sedkd::ErrorKind::parameter, std::string(what) + " is NULL");
}

sedkd::pipeline::Log make_log(sedkd_log_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& line) {
    std::string text = line;
    while (!text.empty() && text.back() == '\n') text.pop_back();
    fn(text.c_str(), user);
  };
}

std::string or_default(const char* arg, const std::string& fallback) {
  return arg ? std::string(arg) : fallback;
}

const sedkd::metrics::ScoreReport& pick(const sedkd_report* report, const char* metric) {
  need(report, "report");
  need(metric, "metric");
  const std::string m = metric;
  if (m == "event") return report->value.event;
  if (m == "segment") return report->value.segment;
  if (m == "tagging") return report->value.tagging;
  sedkd::fail(sedkd::ErrorKind::parameter, "unknown metric '" + m + "'");
}

}  // namespace

extern "C" {

const char* sedkd_version(void) { return "1.0.0"; }
const char* sedkd_last_error(void) { return g_message.c_str(); }
const char* sedkd_last_error_kind(void) { return g_kind.c_str(); }

sedkd_status sedkd_config_create(sedkd_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new sedkd_config{};
  });
}

sedkd_status sedkd_config_load(const char* path, sedkd_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new sedkd_config{sedkd::config::load_config(path)};
  });
}

sedkd_status sedkd_config_parse(const char* text, sedkd_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new sedkd_config{sedkd::config::parse_config(text)};
  });
}

sedkd_status sedkd_config_set(sedkd_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    sedkd::config::RunConfig next = config->value;
    sedkd::config::set_value(next, key, value);
    config->value = std::move(next);
  });
}

sedkd_status sedkd_config_get(const sedkd_config* config, const char* key, char* buf,
                              size_t capacity, size_t* needed) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    const std::string v = sedkd::config::get_value(config->value, key);
    if (needed) *needed = v.size() + 1;
    if (buf && capacity > v.size()) std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

sedkd_status sedkd_config_set_ablation(sedkd_config* config, const char* ablation) {
  return sedkd_config_set(config, "train.ablation", ablation);
}

sedkd_status sedkd_config_validate(const sedkd_config* config) {
  return guarded([&] {
    need(config, "config");
    config->value.validate();
  });
}

sedkd_status sedkd_config_save(const sedkd_config* config, const char* path) {
  return guarded([&] {
    need(config, "config");
    need(path, "path");
    sedkd::config::save_config(path, config->value);
  });
}

void sedkd_config_destroy(sedkd_config* config) { delete config; }

sedkd_status sedkd_gen_data(const sedkd_config* config, const char* root, sedkd_log_fn log,
                            void* user) {
  return guarded([&] {
    need(config, "config");
    sedkd::pipeline::gen_data(config->value, or_default(root, config->value.data_root),
                              make_log(log, user));
  });
}

sedkd_status sedkd_train(const sedkd_config* config, const char* data_root, const char* out_dir,
                         int resume, double* best_event_f1, sedkd_log_fn log, void* user) {
  return guarded([&] {
    need(config, "config");
    const auto summary = sedkd::pipeline::train(
        config->value, or_default(data_root, config->value.data_root),
        or_default(out_dir, config->value.out_dir), resume != 0, make_log(log, user));
    if (best_event_f1) *best_event_f1 = summary.state.best_f1;
  });
}

sedkd_status sedkd_predict(const sedkd_config* config, const char* checkpoint,
                           const char* data_root, const char* out_dir, const char* tier,
                           unsigned threads, sedkd_log_fn log, void* user) {
  return guarded([&] {
    need(config, "config");
    need(checkpoint, "checkpoint");
    sedkd::pipeline::predict(config->value, checkpoint,
                             or_default(data_root, config->value.data_root),
                             or_default(out_dir, config->value.out_dir), or_default(tier, "dev"),
                             threads, make_log(log, user));
  });
}

sedkd_status sedkd_postprocess(const sedkd_config* config, const char* predict_dir,
                               const char* data_root, const char* out_dir, sedkd_log_fn log,
                               void* user) {
  return guarded([&] {
    need(config, "config");
    need(predict_dir, "predict_dir");
    sedkd::pipeline::postprocess(config->value, predict_dir,
                                 or_default(data_root, config->value.data_root),
                                 or_default(out_dir, config->value.out_dir), make_log(log, user));
  });
}

sedkd_status sedkd_evaluate(const char* refs_path, const char* preds_path, const char* data_root,
                            const char* out_dir, sedkd_report** out, sedkd_log_fn log,
                            void* user) {
  return guarded([&] {
    need(refs_path, "refs_path");
    need(preds_path, "preds_path");
    need(data_root, "data_root");
    need(out_dir, "out_dir");
    auto report =
        sedkd::pipeline::evaluate(refs_path, preds_path, data_root, out_dir, make_log(log, user));
    if (out) *out = new sedkd_report{std::move(report)};
  });
}

sedkd_status sedkd_report_macro(const sedkd_report* report, const char* metric, double* f1,
                                double* precision, double* recall) {
  return guarded([&] {
    const auto& r = pick(report, metric);
    if (f1) *f1 = r.macro_f1;
    if (precision) *precision = r.macro_precision;
    if (recall) *recall = r.macro_recall;
  });
}

size_t sedkd_report_class_count(const sedkd_report* report) {
  return report ? report->value.class_names.size() : 0;
}

sedkd_status sedkd_report_class(const sedkd_report* report, const char* metric, size_t index,
                                size_t* tp, size_t* fp, size_t* fn, double* f1) {
  return guarded([&] {
    const auto& r = pick(report, metric);
    sedkd::require(index < r.per_class.size(), sedkd::ErrorKind::parameter,
                   "class index out of range");
    const auto& c = r.per_class[index];
    if (tp) *tp = c.tp;
    if (fp) *fp = c.fp;
    if (fn) *fn = c.fn;
    if (f1) *f1 = c.f1;
  });
}

void sedkd_report_destroy(sedkd_report* report) { delete report; }

}  // extern "C"
