#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rpalab/tensor.hpp"

namespace rpalab {

/// Named arrays plus a JSON header. Raw weights use parameter names; averaged copies are
/// stored under "ema." and "swa." prefixes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string header;  // JSON text: config echo and run metadata
  std::vector<std::string> names;
  std::vector<Tensor> arrays;

  void add(std::string name, Tensor t);
  const Tensor* find(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
/// Throws std::runtime_error on a bad magic, unknown version or truncated file.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rpalab
