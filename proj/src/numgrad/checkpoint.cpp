#include "loopsr/numgrad/checkpoint.hpp"

#include "loopsr/common/binary_io.hpp"
#include "loopsr/common/error.hpp"

namespace loopsr::numgrad {

namespace {
constexpr std::string_view kMagic = "LSRW";
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

std::vector<std::uint8_t> encode_weights(const ParamSet& params) {
  io::ByteWriter w;
  w.magic(kMagic);
  w.put<std::uint32_t>(kWeightsVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    w.put_string(e.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.put<std::uint64_t>(d);
    w.put_f64s(e.value.values());
  }
  return w.bytes();
}

ParamSet decode_weights(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic(kMagic);
  r.expect_version(kWeightsVersion);
  const auto count = r.get<std::uint32_t>();
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > kMaxRank) {
      throw FormatError(FormatErrorKind::kMalformed, "tensor rank " + std::to_string(rank));
    }
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (d == 0) throw FormatError(FormatErrorKind::kMalformed, "zero dimension");
      n *= d;
    }
    if (n * sizeof(double) > r.remaining()) {
      throw FormatError(FormatErrorKind::kTruncated, "payload of '" + name + "'");
    }
    std::vector<double> values(n);
    r.get_f64s(values);
    if (params.contains(name)) {
      throw FormatError(FormatErrorKind::kMalformed, "duplicate tensor '" + name + "'");
    }
    params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  r.expect_end();
  return params;
}

void save_weights(const ParamSet& params, const std::filesystem::path& path) {
  io::write_file(path, encode_weights(params));
}

ParamSet load_weights(const std::filesystem::path& path) {
  return decode_weights(io::read_file(path));
}

}  // namespace loopsr::numgrad
