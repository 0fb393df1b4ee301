#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cghoi/diffkit/tape.hpp"

namespace cghoi::diffkit {

// Named parameter tensors in insertion order. Storage addresses are stable
// (deque), so tapes may bind them by pointer.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(value));
    return tensors_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name) { return tensors_[lookup(name)]; }
  const Tensor& get(const std::string& name) const { return tensors_[lookup(name)]; }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
  }

  bool operator==(const ParamStore& o) const { return names_ == o.names_ && tensors_ == o.tensors_; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }

  std::vector<std::string> names_;
  std::deque<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

// Per-parameter gradients, aligned with a ParamStore.
using Gradients = std::vector<Tensor>;

inline Gradients zero_gradients(const ParamStore& store) {
  Gradients g;
  g.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) g.emplace_back(store.at(i).shape());
  return g;
}

// Adds the tape's gradients for every bound parameter into `out`.
inline void accumulate_gradients(const Tape& tape, const ParamStore& store, Gradients& out) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor* g = tape.param_grad(store.at(i));
    if (!g) continue;
    for (std::size_t k = 0; k < g->size(); ++k) out[i][k] += (*g)[k];
  }
}

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(const ParamStore& store, AdamConfig cfg) : cfg_(cfg), m_(zero_gradients(store)), v_(zero_gradients(store)) {}

  void step(ParamStore& store, const Gradients& grads) {
    if (grads.size() != store.size()) throw ShapeError("adam: gradient count does not match parameter count");
    ++t_;
    const double c1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      Tensor& p = store.at(i);
      const Tensor& g = grads[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0f - cfg_.beta1) * g[k];
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0f - cfg_.beta2) * g[k] * g[k];
        const double mh = m_[i][k] / c1;
        const double vh = v_[i][k] / c2;
        p[k] -= static_cast<float>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Gradients m_, v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint format "CGW1": u32 count, then per array u16 name length, name,
// u8 rank, u32 dims[rank], f32 payload. Little-endian.

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError(what_ + ": truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("write failed: " + path);
}

}  // namespace detail

inline std::string encode_checkpoint(const ParamStore& store) {
  std::string out = "CGW1";
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(i);
    const Tensor& t = store.at(i);
    if (name.size() > 0xffff) throw ValidationError("parameter name too long: " + name);
    if (t.rank() > 255) throw ValidationError("tensor rank too large: " + name);
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  }
  return out;
}

inline ParamStore decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
  detail::Reader r(bytes, what);
  if (r.get_bytes(4) != "CGW1") throw ParseError(what + ": bad magic");
  const auto count = r.get<std::uint32_t>();
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.get_bytes(len);
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    Tensor t(shape);
    r.get_floats(t.data(), t.size());
    store.add(name, std::move(t));
  }
  if (!r.at_end()) throw ParseError(what + ": trailing bytes");
  return store;
}

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  detail::write_file(path, encode_checkpoint(store));
}

inline ParamStore load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path), path);
}

}  // namespace cghoi::diffkit
