#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>

#include "cghoi/cli/run_config.hpp"
#include "cghoi/diffusion/sampler.hpp"
#include "cghoi/metrics/report.hpp"
#include "cghoi/train/evaluation.hpp"
#include "cghoi/train/train.hpp"

namespace cghoi::cli {

namespace fs = std::filesystem;
using diffkit::Tensor;

inline void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw ValidationError(std::string(what) + " not found: " + p.string());
}

inline repr::Dataset load_data(const fs::path& dir) {
  require_exists(dir / "manifest.tsv", "dataset manifest");
  return repr::load_dataset(dir);
}

inline std::vector<const repr::Sequence*> split_or_throw(const repr::Dataset& ds, const std::string& name) {
  auto v = ds.split(name);
  if (v.empty()) throw ValidationError("dataset has no '" + name + "' sequences");
  return v;
}

// synth-data: dataset files plus the config snapshot.
inline void synth_data(const RunConfig& cfg, const fs::path& out) {
  const repr::Dataset ds = repr::synth_dataset(cfg.data);
  repr::save_dataset(ds, out);
  diffkit::detail::write_file((out / "config.txt").string(), to_text(cfg));
  std::cout << "wrote " << ds.sequences.size() << " sequences to " << out.string() << "\n";
}

// train: fits on the train split; validation FID on the val split when
// validation_every > 0.
inline train::FitResult train_run(RunConfig cfg, const fs::path& data_dir, const fs::path& out) {
  const repr::Dataset ds = load_data(data_dir);
  const auto train_set = split_or_throw(ds, "train");
  if (ds.frames % 4 != 0) throw ValidationError("dataset frame count must be a multiple of 4");
  cfg.model.vocab = ds.vocab.size();
  cfg.validate();

  std::vector<const Tensor*> frames;
  for (const auto* s : train_set) frames.push_back(&s->frames);
  // the normalizer goes through its stored form so that training and a
  // reloaded checkpoint see identical statistics
  const auto norm = repr::Normalizer::from_tensor(repr::fit_normalizer(frames).to_tensor());
  train::Model model(denoiser::Denoiser(cfg.model, mix_seed(cfg.train.seed, 0x1417)), norm, ds.vocab,
                     ds.template_seed, ds.frames);
  train::Validator validator;
  if (cfg.train.validation_every > 0) {
    const auto val = split_or_throw(ds, "val");
    auto ex = std::make_shared<const metrics::Extractor>(
        metrics::train_extractors(train_set, ds.vocab.size(), cfg.extractor).full);
    validator = train::fid_validator(val, ex, mix_seed(cfg.train.seed, 0xfa1), cfg.guidance);
  }
  auto res = train::fit(model, train::make_examples(model, train_set), cfg.train, out, to_text(cfg), validator);
  std::cout << "steps " << res.history.size() << ", final loss " << train::format_double(res.history.back().loss);
  if (res.best_step) std::cout << ", best validation FID " << train::format_double(res.best_fid) << " at step " << *res.best_step;
  std::cout << "\n";
  return res;
}

struct SampleArgs {
  std::string ckpt;
  std::string text;
  std::string object;
  std::optional<std::size_t> frames;
  std::uint64_t seed = 0;
  diffusion::GuidanceConfig guidance;
  std::string track;  // sequence file whose object channels are injected
  std::string out;
};

inline std::vector<std::uint32_t> tokens_or_throw(const repr::Vocabulary& v, const std::string& text) {
  auto ids = v.tokenize(text);
  if (ids.empty()) throw ValidationError("text is empty");
  for (std::uint32_t id : ids) {
    if (id == 0) throw ValidationError("text '" + text + "' has words outside the model vocabulary");
  }
  return ids;
}

// sample / sample-traj: one sequence file per call.
inline repr::Sequence sample_run(const SampleArgs& a) {
  require_exists(a.ckpt, "checkpoint");
  const train::Model m = train::load_model(a.ckpt);
  const repr::ObjectAsset obj = repr::resolve_object(a.object);
  const auto tmpl = body::build_template(m.template_seed);
  const auto sched = m.schedule();
  diffusion::Sampler s{m.net, m.norm, sched, tmpl};
  diffusion::SampleRequest req;
  req.cond.tokens = tokens_or_throw(m.vocab, a.text);
  req.cond.cloud = denoiser::cloud_tensor(obj.cloud);
  req.cloud = obj.cloud;
  req.frames = a.frames.value_or(m.frames);
  req.seed = a.seed;
  req.guidance = a.guidance;

  diffusion::SampleResult r;
  if (a.track.empty()) {
    r = diffusion::sample(s, req);
  } else {
    require_exists(a.track, "track sequence");
    const repr::Sequence src = repr::load_sequence(a.track);
    if (a.frames && *a.frames != src.frame_count()) {
      throw ValidationError("--frames disagrees with the track length");
    }
    req.frames = src.frame_count();
    Tensor track({req.frames, repr::kObjectDims});
    for (std::size_t f = 0; f < req.frames; ++f)
      for (std::size_t k = 0; k < repr::kObjectDims; ++k)
        track[f * repr::kObjectDims + k] = src.frames[f * repr::kFrameWidth + repr::kObjectOffset + k];
    r = diffusion::sample_with_trajectory(s, req, track);
  }
  repr::Sequence out;
  out.id = "sample";
  out.split = "generated";
  out.text = a.text;
  out.cond.tokens = req.cond.tokens;
  out.cond.cloud = obj.cloud;
  out.cond.object_ref = obj.name;
  out.frames = std::move(r.frames);
  if (!a.out.empty()) {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    repr::save_sequence(out, a.out);
  }
  return out;
}

// eval: extractors trained on the train split; generated sequences either
// sampled for every eval-split condition or read from another dataset dir.
inline metrics::Report eval_run(const RunConfig& cfg, const std::string& ckpt, const fs::path& data_dir,
                                const fs::path& out, const std::string& generated_dir) {
  const repr::Dataset ds = load_data(data_dir);
  const auto train_set = split_or_throw(ds, "train");
  const auto real = split_or_throw(ds, cfg.eval_split);
  const auto extractors = metrics::train_extractors(train_set, ds.vocab.size(), cfg.extractor);

  repr::Dataset gen;
  gen.template_seed = ds.template_seed;
  gen.frames = ds.frames;
  if (!generated_dir.empty()) {
    const repr::Dataset g = load_data(generated_dir);
    for (const auto* s : split_or_throw(g, cfg.eval_split)) gen.sequences.push_back(*s);
  } else {
    if (ckpt.empty()) throw ValidationError("eval needs --ckpt or --generated");
    require_exists(ckpt, "checkpoint");
    const train::Model m = train::load_model(ckpt);
    if (m.template_seed != ds.template_seed || m.frames != ds.frames) {
      throw ValidationError("checkpoint was trained on a dataset with a different template or frame count");
    }
    gen.sequences = train::generate_set(m, real, cfg.samples_per_condition, cfg.eval.seed, cfg.guidance);
    for (auto& s : gen.sequences) s.split = cfg.eval_split;
    repr::save_dataset(gen, out / "generated");
  }
  std::vector<const repr::Sequence*> gen_ptrs;
  for (const auto& s : gen.sequences) gen_ptrs.push_back(&s);

  const auto report =
      metrics::evaluate(extractors, train_set, real, gen_ptrs, body::build_template(ds.template_seed), cfg.eval);
  fs::create_directories(out);
  diffkit::detail::write_file((out / "report.csv").string(), report.csv());
  diffkit::detail::write_file((out / "report.txt").string(), report.table());
  diffkit::detail::write_file((out / "config.txt").string(), to_text(cfg));
  std::cout << report.table();
  return report;
}

// export-mesh: body_NNN.obj and object_NNN.obj per frame. Without an object
// mesh the sequence's point cloud is written as vertices only.
inline void export_mesh(const std::string& seq_path, std::uint64_t template_seed, const fs::path& out,
                        const std::string& object) {
  require_exists(seq_path, "sequence");
  const repr::Sequence s = repr::load_sequence(seq_path);
  repr::validate_sequence(s);
  const auto tmpl = body::build_template(template_seed);
  std::optional<repr::ObjectAsset> asset;
  if (!object.empty()) asset = repr::resolve_object(object);
  fs::create_directories(out);
  for (std::size_t f = 0; f < s.frame_count(); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.obj", f);
    geom::save_obj((out / ("body_" + std::string(name))).string(),
                   body::body_forward(tmpl, repr::body_at(s.frames, f)).mesh);
    const auto tf = repr::object_at(s.frames, f);
    geom::TriMesh om;
    if (asset) {
      om = geom::transformed(asset->mesh, geom::rot6d_to_matrix(tf.rotation), tf.translation);
    } else {
      om.vertices = repr::place_cloud(s.cond.cloud, tf).points;
    }
    geom::save_obj((out / ("object_" + std::string(name))).string(), om);
  }
  std::cout << "wrote " << 2 * s.frame_count() << " meshes to " << out.string() << "\n";
}

}  // namespace cghoi::cli
