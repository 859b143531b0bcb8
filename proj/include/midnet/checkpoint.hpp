// Versioned binary checkpoint container: a step counter, named strings
// (config echo, RNG states) and named tensors (parameters, buffers,
// optimizer slots). Raw little-endian bytes, so a save/load round trip
// is bit-exact.

#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "midnet/params.hpp"
#include "midnet/tensor.hpp"

namespace midnet {

template <typename T>
struct Checkpoint {
  std::uint64_t step{0};
  std::map<std::string, std::string> strings;
  std::map<std::string, Tensor<T>> tensors;

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    const char magic[8] = {'M', 'I', 'D', 'N', 'C', 'K', 'P', 'T'};
    f.write(magic, 8);
    write_u64(f, kVersion);
    write_u64(f, sizeof(T));
    write_u64(f, step);
    write_u64(f, strings.size());
    for (const auto& [k, v] : strings) {
      write_str(f, k);
      write_str(f, v);
    }
    write_u64(f, tensors.size());
    for (const auto& [k, t] : tensors) {
      write_str(f, k);
      write_u64(f, static_cast<std::uint64_t>(t.rank()));
      for (std::int64_t d = 0; d < t.rank(); ++d) write_u64(f, static_cast<std::uint64_t>(t.dim(d)));
      f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "MIDNCKPT", 8) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    if (read_u64(f) != kVersion) throw std::runtime_error("checkpoint: unsupported version in " + path);
    if (read_u64(f) != sizeof(T)) throw std::runtime_error("checkpoint: scalar width mismatch in " + path);
    Checkpoint ck;
    ck.step = read_u64(f);
    const std::uint64_t ns = read_u64(f);
    for (std::uint64_t i = 0; i < ns; ++i) {
      std::string k = read_str(f);
      ck.strings[k] = read_str(f);
    }
    const std::uint64_t nt = read_u64(f);
    for (std::uint64_t i = 0; i < nt; ++i) {
      std::string k = read_str(f);
      const std::uint64_t rank = read_u64(f);
      Shape shape(rank);
      for (std::uint64_t d = 0; d < rank; ++d) shape[d] = static_cast<std::int64_t>(read_u64(f));
      Tensor<T> t(shape);
      f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
      ck.tensors.emplace(std::move(k), std::move(t));
    }
    if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    return ck;
  }

 private:
  static constexpr std::uint64_t kVersion = 1;

  static void write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  static std::uint64_t read_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  static void write_str(std::ofstream& f, const std::string& s) {
    write_u64(f, s.size());
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_str(std::ifstream& f) {
    const std::uint64_t n = read_u64(f);
    std::string s(n, '\0');
    f.read(s.data(), static_cast<std::streamsize>(n));
    return s;
  }
};

// Copies every parameter of a store into a checkpoint under a prefix.
template <typename T>
void pack_params(const ParamStore<T>& store, const std::string& prefix, Checkpoint<T>& ck) {
  for (const auto& [name, p] : store) ck.tensors[prefix + name] = p.value.clone();
}

// Restores parameters by name; missing or reshaped entries are errors.
template <typename T>
void unpack_params(ParamStore<T>& store, const std::string& prefix, const Checkpoint<T>& ck) {
  for (auto& [name, p] : store) {
    auto it = ck.tensors.find(prefix + name);
    if (it == ck.tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + prefix + name);
    if (it->second.shape() != p.value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + prefix + name + ": stored " +
                               shape_str(it->second.shape()) + " vs model " + shape_str(p.value.shape()));
    p.value = it->second.clone();
  }
}

}  // namespace midnet
