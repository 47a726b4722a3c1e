#include "morphkit/gradcore/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace morphkit {

namespace {

constexpr char kMagic[] = "MKPT1";
constexpr std::size_t kMagicLen = 5;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& value) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  std::memcpy(&value, buf, sizeof(T));
  return true;
}

}  // namespace

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : tensors_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.push_back(name);
  }
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

void ParamStore::bind(Bindings& bindings) const {
  for (const auto& [name, t] : tensors_) bindings[name] = t;
}

void ParamStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, kMagicLen);
  for (const auto& [name, t] : tensors_) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(os, d);
    for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

ParamStore ParamStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not an MKPT1 parameter file");
  }
  ParamStore store;
  std::uint32_t name_len = 0;
  while (get_le(is, name_len)) {
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!is.read(name.data(), name_len) || !get_le(is, rank)) {
      throw std::runtime_error("truncated record in '" + path.string() + "'");
    }
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!get_le(is, v)) throw std::runtime_error("truncated dims in '" + path.string() + "'");
      d = static_cast<std::size_t>(v);
    }
    std::vector<double> data(shape_numel(shape));
    for (auto& x : data) {
      std::uint64_t bits = 0;
      if (!get_le(is, bits)) throw std::runtime_error("truncated data in '" + path.string() + "'");
      x = std::bit_cast<double>(bits);
    }
    store.tensors_[name] = Tensor(std::move(shape), std::move(data));
  }
  return store;
}

Tensor he_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace morphkit
