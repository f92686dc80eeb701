#pragma once

#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace rpalab {

/// Append-only line-delimited JSON records. An empty path keeps records in memory only.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path = "");

  void write(const nlohmann::json& record);
  const std::vector<std::string>& lines() const { return lines_; }
  /// Every line joined with '\n', the exact bytes written to disk.
  std::string text() const;

 private:
  std::mutex mu_;
  std::ofstream out_;
  std::vector<std::string> lines_;
};

/// Parses a metrics file, throwing on the first line that is not a JSON object.
std::vector<nlohmann::json> read_metrics(const std::string& path);

}  // namespace rpalab
