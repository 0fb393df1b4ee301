#pragma once

#include <string>

#include "cghoi/denoiser/denoiser.hpp"
#include "cghoi/diffusion/schedule.hpp"
#include "cghoi/repr/normalizer.hpp"
#include "cghoi/repr/text.hpp"

namespace cghoi::train {

using diffkit::ParamStore;
using diffkit::Tensor;

// A trained denoiser plus everything needed to sample from it.
struct Model {
  denoiser::Denoiser net;
  repr::Normalizer norm;
  repr::Vocabulary vocab;
  std::uint64_t template_seed = 0;
  std::size_t frames = 32;

  Model(denoiser::Denoiser n, repr::Normalizer nm, repr::Vocabulary v, std::uint64_t tseed, std::size_t f)
      : net(std::move(n)), norm(nm), vocab(std::move(v)), template_seed(tseed), frames(f) {
    net.set_contact_normalization(norm);
  }

  diffusion::NoiseSchedule schedule() const { return diffusion::NoiseSchedule::linear(net.config().steps); }
};

namespace detail {

// Small integers survive float storage exactly; 64-bit seeds go in four
// 16-bit pieces.
inline void put_u64(std::vector<float>& out, std::uint64_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<float>((v >> (16 * i)) & 0xffff));
}

inline std::uint64_t get_u64(const Tensor& t, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(t[at + i]) << (16 * i);
  return v;
}

inline std::size_t get_count(const Tensor& t, std::size_t at, const char* what) {
  const float v = t[at];
  if (!(v >= 0.0f) || v > 16777216.0f || v != std::floor(v)) {
    throw ValidationError(std::string("checkpoint meta field ") + what + " is not a count");
  }
  return static_cast<std::size_t>(v);
}

inline constexpr std::size_t kMetaFields = 12;

}  // namespace detail

inline ParamStore model_to_store(const Model& m) {
  ParamStore store;
  for (std::size_t i = 0; i < m.net.params().size(); ++i) store.add(m.net.params().name(i), m.net.params().at(i));
  const auto& c = m.net.config();
  std::vector<float> meta = {static_cast<float>(c.latent), static_cast<float>(c.heads),
                             static_cast<float>(c.time_dim), static_cast<float>(c.vocab),
                             static_cast<float>(c.groups), static_cast<float>(c.steps),
                             c.contact_weighting ? 1.0f : 0.0f, static_cast<float>(m.frames)};
  detail::put_u64(meta, m.template_seed);
  store.add("meta/config", Tensor({meta.size()}, meta));
  store.add("meta/normalizer", m.norm.to_tensor());
  std::string words;
  for (std::uint32_t i = 1; i < m.vocab.size(); ++i) {
    if (!words.empty()) words += ' ';
    words += m.vocab.word(i);
  }
  std::vector<float> chars(words.begin(), words.end());
  for (float& ch : chars) ch = static_cast<float>(static_cast<unsigned char>(ch));
  store.add("meta/vocab", Tensor({chars.size()}, chars));
  return store;
}

inline Model model_from_store(const ParamStore& store) {
  for (const char* key : {"meta/config", "meta/normalizer", "meta/vocab"}) {
    if (!store.contains(key)) throw ValidationError(std::string("checkpoint lacks ") + key);
  }
  const Tensor& meta = store.get("meta/config");
  if (meta.size() != detail::kMetaFields) throw ValidationError("checkpoint meta/config has the wrong length");
  denoiser::DenoiserConfig cfg;
  cfg.latent = detail::get_count(meta, 0, "latent");
  cfg.heads = detail::get_count(meta, 1, "heads");
  cfg.time_dim = detail::get_count(meta, 2, "time_dim");
  cfg.vocab = detail::get_count(meta, 3, "vocab");
  cfg.groups = detail::get_count(meta, 4, "groups");
  cfg.steps = detail::get_count(meta, 5, "steps");
  cfg.contact_weighting = meta[6] != 0.0f;
  const std::size_t frames = detail::get_count(meta, 7, "frames");
  const std::uint64_t tseed = detail::get_u64(meta, 8);

  const Tensor& vt = store.get("meta/vocab");
  std::string words;
  for (float ch : vt.values()) words += static_cast<char>(static_cast<unsigned char>(ch));
  repr::Vocabulary vocab(std::vector<std::string>{words});
  if (vocab.size() != cfg.vocab) throw ValidationError("checkpoint vocabulary size disagrees with its config");

  return Model(denoiser::Denoiser(cfg, store), repr::Normalizer::from_tensor(store.get("meta/normalizer")),
               std::move(vocab), tseed, frames);
}

inline void save_model(const Model& m, const std::string& path) { diffkit::save_checkpoint(model_to_store(m), path); }

inline Model load_model(const std::string& path) { return model_from_store(diffkit::load_checkpoint(path)); }

}  // namespace cghoi::train
