// Named trainable-parameter storage with Adam state and checkpoint I/O.
//
// Checkpoint layout: magic "VCKP", LE uint64 JSON manifest length, the JSON
// manifest (names, shapes, per-parameter step, whether Adam moments follow),
// then per parameter in manifest order raw LE float32 blobs: value, and when
// present the Adam m and v moments. Round trips are bit-exact.
#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "voxrender/rng.hpp"
#include "voxrender/tensor.hpp"

namespace voxrender {

struct AdamConfig {
  double learning_rate = 1e-5;  // paper default
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    std::vector<T> m, v;
    std::int64_t step = 0;
    double lr_scale = 1.0;  // per-entry multiplier on the Adam learning rate
  };

  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    check_arg(!entries_.count(name), "ParamStore: duplicate parameter " + name);
    Entry e;
    e.value = std::move(t);
    e.m.assign(e.value.size(), T(0));
    e.v.assign(e.value.size(), T(0));
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.value;
  }

  Tensor<T>& get(const std::string& name) {
    auto it = entries_.find(name);
    check_arg(it != entries_.end(), "ParamStore: unknown parameter " + name);
    return it->second.value;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = entries_.find(name);
    check_arg(it != entries_.end(), "ParamStore: unknown parameter " + name);
    return it->second.value;
  }
  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& [name, e] : entries_) e.value.zero_grad();
  }

  /// Bias-corrected Adam update from the gradients currently in the tensors.
  void adam_step(const AdamConfig& cfg) {
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T eps = static_cast<T>(cfg.epsilon);
    for (auto& [name, e] : entries_) {
      const T lr = static_cast<T>(cfg.learning_rate * e.lr_scale);
      e.step += 1;
      const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(e.step)));
      const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(e.step)));
      auto& p = e.value.value();
      const auto& g = e.value.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        e.m[i] = b1 * e.m[i] + (T(1) - b1) * g[i];
        e.v[i] = b2 * e.v[i] + (T(1) - b2) * g[i] * g[i];
        const T mhat = e.m[i] / c1;
        const T vhat = e.v[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, e] : entries_) {
      std::vector<U> data(e.value.size());
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<U>(e.value.value()[i]);
      auto& added = out.add(name, Tensor<U>::leaf(e.value.shape(), std::move(data)));
      (void)added;
      auto& oe = out.entries().find(name)->second;
      oe.step = e.step;
      oe.m.resize(e.m.size());
      oe.v.resize(e.v.size());
      for (std::size_t i = 0; i < e.m.size(); ++i) {
        oe.m[i] = static_cast<U>(e.m[i]);
        oe.v[i] = static_cast<U>(e.v[i]);
      }
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json manifest;
    manifest["format"] = "voxrender-checkpoint";
    manifest["adam"] = true;
    auto& plist = manifest["params"] = nlohmann::json::array();
    for (const auto& [name, e] : entries_) {
      nlohmann::json p;
      p["name"] = name;
      p["shape"] = e.value.shape();
      p["step"] = e.step;
      plist.push_back(std::move(p));
    }
    const std::string js = manifest.dump();
    std::string buf = "VCKP";
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((js.size() >> (8 * i)) & 0xff));
    buf += js;
    auto put_f32 = [&buf](float f) {
      std::uint32_t b;
      std::memcpy(&b, &f, 4);
      for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((b >> (8 * i)) & 0xff));
    };
    for (const auto& [name, e] : entries_) {
      for (T x : e.value.value()) put_f32(static_cast<float>(x));
      for (T x : e.m) put_f32(static_cast<float>(x));
      for (T x : e.v) put_f32(static_cast<float>(x));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw format_error("ParamStore::save: cannot open " + path.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw format_error("ParamStore::save: write failed for " + path.string());
  }

  static ParamStore load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw format_error("ParamStore::load: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.compare(0, 4, "VCKP") != 0)
      throw format_error("ParamStore::load: bad magic in " + path.string());
    std::uint64_t jlen = 0;
    for (int i = 0; i < 8; ++i)
      jlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[4 + i])) << (8 * i);
    if (12 + jlen > buf.size())
      throw format_error("ParamStore::load: truncated manifest in " + path.string());
    nlohmann::json manifest = nlohmann::json::parse(buf.substr(12, jlen));
    const bool adam = manifest.value("adam", false);
    std::size_t off = 12 + jlen;
    auto get_f32 = [&buf, &off, &path]() {
      if (off + 4 > buf.size())
        throw format_error("ParamStore::load: truncated payload in " + path.string());
      std::uint32_t b = 0;
      for (int i = 0; i < 4; ++i)
        b |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
      off += 4;
      float f;
      std::memcpy(&f, &b, 4);
      return f;
    };
    ParamStore out;
    for (const auto& p : manifest.at("params")) {
      const std::string name = p.at("name");
      Shape shape = p.at("shape").get<Shape>();
      const std::size_t count = product(shape);
      std::vector<T> data(count);
      for (auto& x : data) x = static_cast<T>(get_f32());
      out.add(name, Tensor<T>::leaf(std::move(shape), std::move(data)));
      auto& e = out.entries_.find(name)->second;
      e.step = p.value("step", std::int64_t(0));
      if (adam) {
        for (auto& x : e.m) x = static_cast<T>(get_f32());
        for (auto& x : e.v) x = static_cast<T>(get_f32());
      }
    }
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

// He-style fan-in initializers (paper does not state initialization).

template <class T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> data(product(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::leaf(std::move(shape), std::move(data));
}

}  // namespace voxrender
