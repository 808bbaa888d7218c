#include "loopsr/common/jsonl.hpp"

#include "loopsr/common/error.hpp"

namespace loopsr::io {

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw FormatError(FormatErrorKind::kIo, "cannot open " + path.string());
}

void JsonlWriter::write(const nlohmann::json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw FormatError(FormatErrorKind::kIo, "write failed: " + path_.string());
}

}  // namespace loopsr::io
