#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "cghoi/metrics/extractor.hpp"
#include "cghoi/metrics/novelty.hpp"
#include "cghoi/metrics/penetration.hpp"
#include "cghoi/metrics/stats.hpp"

namespace cghoi::metrics {

struct EvalConfig {
  std::size_t rp_pool = 32;
  std::size_t rp_k = 3;
  std::size_t diversity_subset = 16;
  std::size_t mm_subset = 4;
  std::size_t novelty_k = 3;
  std::size_t novelty_bins = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (rp_pool == 0 || rp_k == 0 || diversity_subset == 0 || mm_subset == 0 || novelty_k == 0 || novelty_bins == 0) {
      throw ValidationError("evaluation sizes must be positive");
    }
  }
};

// Ordered (metric, value) rows.
struct Report {
  std::vector<std::pair<std::string, double>> rows;

  void add(std::string name, double v) { rows.emplace_back(std::move(name), v); }

  double get(const std::string& name) const {
    for (const auto& [n, v] : rows)
      if (n == name) return v;
    throw ValidationError("report has no metric " + name);
  }

  static std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }

  std::string csv() const {
    std::string out = "metric,value\n";
    for (const auto& [n, v] : rows) out += n + "," + fmt(v) + "\n";
    return out;
  }

  std::string table() const {
    std::size_t w = 6;
    for (const auto& [n, v] : rows) w = std::max(w, n.size());
    std::string out = "metric" + std::string(w - 6 + 2, ' ') + "value\n" + std::string(w + 2 + 12, '-') + "\n";
    for (const auto& [n, v] : rows) out += n + std::string(w - n.size() + 2, ' ') + fmt(v) + "\n";
    return out;
  }
};

// Full protocol: real and generated sets for the distribution metrics, the
// train set for novelty. Generated sequences carry the text and object of
// the condition they were sampled for.
inline Report evaluate(const ExtractorPair& ex, const std::vector<const repr::Sequence*>& train,
                       const std::vector<const repr::Sequence*>& real,
                       const std::vector<const repr::Sequence*>& generated, const body::BodyTemplate& tmpl,
                       const EvalConfig& cfg) {
  cfg.validate();
  if (train.empty() || real.empty() || generated.empty()) throw ValidationError("evaluation needs real and generated sequences");
  std::vector<const Tensor*> real_frames, gen_frames;
  for (const auto* s : real) real_frames.push_back(&s->frames);
  std::vector<std::string> ids, texts;
  std::vector<std::vector<std::uint32_t>> tokens;
  for (const auto* s : generated) {
    gen_frames.push_back(&s->frames);
    ids.push_back(s->id);
    texts.push_back(s->text);
    tokens.push_back(s->cond.tokens);
  }

  Report r;
  const Tensor gen_full = ex.full.motion_features(gen_frames);
  const Tensor gen_text = ex.full.text_features(tokens);
  const Tensor real_full = ex.full.motion_features(real_frames);
  r.add("r_precision_top" + std::to_string(cfg.rp_k),
        r_precision(gen_full, gen_text, cfg.rp_pool, cfg.rp_k, mix_seed(cfg.seed, 1)));
  r.add("fid", fid(real_full, gen_full));
  r.add("fid_human", fid(ex.human.motion_features(real_frames), ex.human.motion_features(gen_frames)));
  r.add("diversity", diversity(ids, gen_full, cfg.diversity_subset, mix_seed(cfg.seed, 2)));
  r.add("multimodality", multimodality(ids, texts, gen_full, cfg.mm_subset, mix_seed(cfg.seed, 3)));

  std::map<std::string, repr::ObjectAsset> assets;
  std::vector<const repr::ObjectAsset*> objects;
  for (const auto* s : generated) {
    if (!assets.count(s->cond.object_ref)) assets.emplace(s->cond.object_ref, repr::resolve_object(s->cond.object_ref));
  }
  for (const auto* s : generated) objects.push_back(&assets.at(s->cond.object_ref));
  const PenetrationReport pen = penetration_ratio(tmpl, gen_frames, objects);
  r.add("penetration_ratio", pen.ratio);
  r.add("penetration_excluded_frames", static_cast<double>(pen.excluded));

  std::vector<const Tensor*> train_frames;
  for (const auto* s : train) train_frames.push_back(&s->frames);
  const NoveltyReport nov = novelty_analysis(train_frames, gen_frames, cfg.novelty_k, cfg.novelty_bins);
  r.add("novelty_nearest_mean", nov.mean_nearest());
  r.add("novelty_train_baseline", nov.train_baseline ? *nov.train_baseline : std::nan(""));
  return r;
}

}  // namespace cghoi::metrics
