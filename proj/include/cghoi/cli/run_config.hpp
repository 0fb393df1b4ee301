#pragma once

#include <charconv>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cghoi/denoiser/denoiser.hpp"
#include "cghoi/diffkit/params.hpp"
#include "cghoi/diffusion/schedule.hpp"
#include "cghoi/metrics/extractor.hpp"
#include "cghoi/metrics/report.hpp"
#include "cghoi/repr/synth.hpp"
#include "cghoi/train/train.hpp"

namespace cghoi::cli {

// Everything a command needs besides its file arguments.
struct RunConfig {
  repr::SynthConfig data;
  denoiser::DenoiserConfig model;
  train::TrainConfig train;
  diffusion::GuidanceConfig guidance;
  metrics::EvalConfig eval;
  metrics::ExtractorConfig extractor;
  std::string eval_split = "test";
  std::size_t samples_per_condition = 4;
  std::string output_dir;  // informational; command flags take precedence

  RunConfig() {
    model.vocab = repr::catalog_vocabulary().size();
    extractor.steps = 300;
  }

  void validate() const {
    model.validate();
    train.validate();
    guidance.validate();
    eval.validate();
    if (data.frames < 4 || data.frames % 4 != 0) throw ValidationError("frames must be a positive multiple of 4");
    if (data.per_pair == 0) throw ValidationError("per_pair must be positive");
    if (extractor.steps == 0 || extractor.batch < 2) {
      throw ValidationError("extractor_steps must be positive and extractor_batch at least 2");
    }
    if (!(extractor.learning_rate > 0.0f)) throw ValidationError("extractor_lr must be > 0");
    if (samples_per_condition == 0) throw ValidationError("samples_per_condition must be positive");
    if (eval_split != "train" && eval_split != "val" && eval_split != "test") {
      throw ValidationError("eval_split must be train, val or test");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ValidationError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ValidationError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

template <class T>
std::string number(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return train::format_double(static_cast<double>(v));
  } else {
    return std::to_string(v);
  }
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Ptr>
Field num(const char* key, Ptr ptr) {
  return {key, [key, ptr](RunConfig& c, const std::string& v) { ptr(c) = parse_number<T>(key, v); },
          [ptr](const RunConfig& c) { return number(ptr(const_cast<RunConfig&>(c))); }};
}

template <class Ptr>
Field flag(const char* key, Ptr ptr) {
  return {key, [key, ptr](RunConfig& c, const std::string& v) { ptr(c) = parse_bool(key, v); },
          [ptr](const RunConfig& c) { return std::string(ptr(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Ptr>
Field text(const char* key, Ptr ptr) {
  return {key, [ptr](RunConfig& c, const std::string& v) { ptr(c) = v; },
          [ptr](const RunConfig& c) { return ptr(const_cast<RunConfig&>(c)); }};
}

template <class Ptr>
Field list(const char* key, Ptr ptr) {
  return {key, [ptr](RunConfig& c, const std::string& v) { ptr(c) = parse_list(v); },
          [ptr](const RunConfig& c) { return join(ptr(const_cast<RunConfig&>(c))); }};
}

#define CGHOI_REF(expr) [](RunConfig & c) -> auto& { return expr; }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      // dataset
      num<std::size_t>("frames", CGHOI_REF(c.data.frames)),
      num<std::size_t>("per_pair", CGHOI_REF(c.data.per_pair)),
      num<std::uint64_t>("data_seed", CGHOI_REF(c.data.seed)),
      num<std::uint64_t>("template_seed", CGHOI_REF(c.data.template_seed)),
      list("scripts", CGHOI_REF(c.data.scripts)),
      list("objects", CGHOI_REF(c.data.objects)),
      num<double>("shape_scale", CGHOI_REF(c.data.shape_scale)),
      // denoiser and schedule
      num<std::size_t>("latent", CGHOI_REF(c.model.latent)),
      num<std::size_t>("heads", CGHOI_REF(c.model.heads)),
      num<std::size_t>("time_dim", CGHOI_REF(c.model.time_dim)),
      num<std::size_t>("groups", CGHOI_REF(c.model.groups)),
      num<std::size_t>("diffusion_steps", CGHOI_REF(c.model.steps)),
      flag("contact_weighting", CGHOI_REF(c.model.contact_weighting)),
      // training
      num<std::size_t>("batch_size", CGHOI_REF(c.train.batch_size)),
      num<std::size_t>("train_steps", CGHOI_REF(c.train.steps)),
      num<float>("learning_rate", CGHOI_REF(c.train.learning_rate)),
      num<double>("lambda_h", CGHOI_REF(c.train.lambda_h)),
      num<double>("lambda_o", CGHOI_REF(c.train.lambda_o)),
      num<double>("lambda_c", CGHOI_REF(c.train.lambda_c)),
      num<double>("cond_dropout", CGHOI_REF(c.train.cond_dropout)),
      num<std::uint64_t>("seed", CGHOI_REF(c.train.seed)),
      num<std::size_t>("validation_every", CGHOI_REF(c.train.validation_every)),
      num<std::size_t>("log_every", CGHOI_REF(c.train.log_every)),
      // guidance
      num<double>("cfg_scale", CGHOI_REF(c.guidance.cfg_scale)),
      num<double>("contact_scale", CGHOI_REF(c.guidance.contact_scale)),
      flag("contact_guidance", CGHOI_REF(c.guidance.contact_guidance)),
      // evaluation
      text("eval_split", CGHOI_REF(c.eval_split)),
      num<std::size_t>("samples_per_condition", CGHOI_REF(c.samples_per_condition)),
      num<std::size_t>("rp_pool", CGHOI_REF(c.eval.rp_pool)),
      num<std::size_t>("rp_k", CGHOI_REF(c.eval.rp_k)),
      num<std::size_t>("diversity_subset", CGHOI_REF(c.eval.diversity_subset)),
      num<std::size_t>("mm_subset", CGHOI_REF(c.eval.mm_subset)),
      num<std::size_t>("novelty_k", CGHOI_REF(c.eval.novelty_k)),
      num<std::uint64_t>("eval_seed", CGHOI_REF(c.eval.seed)),
      num<std::size_t>("extractor_steps", CGHOI_REF(c.extractor.steps)),
      num<std::size_t>("extractor_batch", CGHOI_REF(c.extractor.batch)),
      num<float>("extractor_lr", CGHOI_REF(c.extractor.learning_rate)),
      num<std::uint64_t>("extractor_seed", CGHOI_REF(c.extractor.seed)),
      text("output_dir", CGHOI_REF(c.output_dir)),
  };
  return f;
}

#undef CGHOI_REF

}  // namespace detail

// Flat `key = value` lines; '#' starts a comment. Unknown or repeated keys
// are rejected.
inline RunConfig parse_run_config(const std::string& body, const std::string& what = "config") {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(body);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(what + " line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    const detail::Field* field = nullptr;
    for (const auto& f : detail::fields())
      if (key == f.key) field = &f;
    if (!field) throw ValidationError(what + " line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) {
      throw ValidationError(what + " line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    }
    field->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(diffkit::detail::read_file(path), path);
}

// Every key, in a fixed order; parse_run_config(to_text(c)) reproduces c.
inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

}  // namespace cghoi::cli
