#include "rpalab/metrics.hpp"

#include <filesystem>
#include <stdexcept>

namespace rpalab {

MetricsWriter::MetricsWriter(const std::string& path) {
  if (path.empty()) return;
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  out_.open(path, std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open metrics file '" + path + "'");
}

void MetricsWriter::write(const nlohmann::json& record) {
  std::string line = record.dump();
  std::lock_guard lock(mu_);
  if (out_.is_open()) out_ << line << '\n' << std::flush;
  lines_.push_back(std::move(line));
}

std::string MetricsWriter::text() const {
  std::string s;
  for (const auto& l : lines_) s += l + '\n';
  return s;
}

std::vector<nlohmann::json> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics file '" + path + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw std::runtime_error("metrics line " + std::to_string(n) + " is not a JSON object");
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace rpalab
