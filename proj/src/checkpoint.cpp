#include "rpalab/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace rpalab {

namespace {

constexpr char kMagic[8] = {'R', 'P', 'A', 'L', 'A', 'B', 'C', 'K'};

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint is truncated");
  return v;
}

std::string get_string(std::ifstream& in, std::uint64_t limit) {
  const auto n = get<std::uint64_t>(in);
  if (n > limit) throw std::runtime_error("checkpoint string length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint is truncated");
  return s;
}

}  // namespace

void Checkpoint::add(std::string name, Tensor t) {
  names.push_back(std::move(name));
  arrays.push_back(std::move(t));
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return &arrays[i];
  return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const auto& n : names)
    if (n.rfind(prefix, 0) == 0) return true;
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put_string(out, ck.header);
  put<std::uint64_t>(out, ck.arrays.size());
  for (std::size_t i = 0; i < ck.arrays.size(); ++i) {
    const Tensor& t = ck.arrays[i];
    put_string(out, ck.names[i]);
    put<std::uint64_t>(out, t.rank());
    for (std::size_t d = 0; d < t.rank(); ++d) put<std::uint64_t>(out, t.dim(d));
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(version) + " is not supported");
  Checkpoint ck;
  ck.header = get_string(in, 1u << 26);
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in, 4096);
    const auto rank = get<std::uint64_t>(in);
    if (rank > 4) throw std::runtime_error("checkpoint array '" + name + "' has rank above 4");
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(get<std::uint64_t>(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint is truncated");
    ck.add(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace rpalab
