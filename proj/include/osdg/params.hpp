#pragma once

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdg/numerics/tape.hpp"

namespace osdg {

/// Owns every learnable tensor of a network. Addresses are stable, so
/// layers keep raw Param pointers into the store.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param<T>& add(const std::string& name, Shape shape) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
    params_.emplace_back(name, Tensor<T>(std::move(shape)));
    return params_.back();
  }

  /// Adds a parameter filled from U(-bound, bound).
  Param<T>& add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
    Param<T>& p = add(name, std::move(shape));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : p.value.vec()) v = static_cast<T>(u(rng));
    return p;
  }

  Param<T>& get(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter '" + name + "'");
  }

  std::vector<Param<T>*> all() {
    std::vector<Param<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Copies values from another store with identical layout.
  template <typename U>
  void copy_values_from(const ParamStore<U>& other) {
    if (other.params().size() != params_.size()) throw std::invalid_argument("copy_values_from: layout mismatch");
    auto it = other.params().begin();
    for (auto& p : params_) {
      if (p.name != it->name || p.value.shape() != it->value.shape())
        throw std::invalid_argument("copy_values_from: mismatch at '" + p.name + "'");
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(it->value[i]);
      ++it;
    }
  }

  const std::deque<Param<T>>& params() const { return params_; }

 private:
  std::deque<Param<T>> params_;
};

/// Kaiming-uniform bound for ReLU layers.
inline double he_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }
/// Glorot-uniform bound for layers feeding a sigmoid or softmax.
inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// Weights file: "OSDW", u32 header length, JSON header, f32 payload.
template <typename T>
std::string encode_params(const ParamStore<T>& store) {
  nlohmann::json header = nlohmann::json::array();
  for (const auto& p : store.params()) header.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  const std::string h = header.dump();
  std::string out = "OSDW";
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((h.size() >> (8 * i)) & 0xFF));
  out += h;
  for (const auto& p : store.params())
    for (T v : p.value.vec()) {
      const float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  return out;
}

template <typename T>
void decode_params_into(const std::string& bytes, ParamStore<T>& store) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "OSDW") != 0) throw std::runtime_error("weights: bad magic");
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  if (bytes.size() < 8 + static_cast<std::size_t>(hlen)) throw std::runtime_error("weights: truncated header");
  const auto header = nlohmann::json::parse(bytes.substr(8, hlen));
  std::size_t off = 8 + hlen;
  for (const auto& entry : header) {
    Param<T>& p = store.get(entry.at("name").get<std::string>());
    if (entry.at("shape").get<Shape>() != p.value.shape())
      throw std::runtime_error("weights: shape mismatch for '" + p.name + "'");
    if (bytes.size() < off + p.value.size() * 4) throw std::runtime_error("weights: truncated payload");
    for (auto& v : p.value.vec()) {
      float f;
      std::memcpy(&f, bytes.data() + off, 4);
      v = static_cast<T>(f);
      off += 4;
    }
  }
  if (off != bytes.size()) throw std::runtime_error("weights: trailing bytes");
}

}  // namespace osdg
