#pragma once

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace loopsr::io {

// One JSON document per line. Truncates on open; lines are flushed as written
// so partial runs leave readable metrics.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  void write(const nlohmann::json& record);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

}  // namespace loopsr::io
