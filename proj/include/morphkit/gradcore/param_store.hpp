#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "morphkit/gradcore/graph.hpp"
#include "morphkit/gradcore/tensor.hpp"

namespace morphkit {

// Named parameter tensors, ordered by name so iteration is deterministic.
class ParamStore {
 public:
  struct InitRecord {
    std::uint64_t seed = 0;
    std::string scheme;
  };

  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed, std::string scheme = "he_uniform")
      : init_{seed, std::move(scheme)} {}

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  void set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }
  void erase(const std::string& name) { tensors_.erase(name); }

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  std::size_t parameter_count() const;

  const InitRecord& init_record() const { return init_; }
  void set_init_record(InitRecord r) { init_ = std::move(r); }

  // Copies every tensor into graph bindings under its own name.
  void bind(Bindings& bindings) const;

  // Bit-exact binary serialization: "MKPT1" followed by one record per
  // tensor (u32 name length, name bytes, u32 rank, u64 dims, f64 values),
  // all little-endian.
  void save(const std::filesystem::path& path) const;
  static ParamStore load(const std::filesystem::path& path);

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.tensors_ == b.tensors_;
  }

 private:
  std::map<std::string, Tensor> tensors_;
  InitRecord init_;
};

// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights.
Tensor he_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace morphkit
