#include "bridge/nn/serialize.hpp"

#include <cstring>
#include <sstream>

#include "bridge/hash.hpp"
#include "bridge/io.hpp"

namespace bridge::nn {

namespace {

constexpr char kMagic[8] = {'B', 'R', 'N', 'N', 'P', 'A', 'R', '1'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8 + 8 + 8;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(char((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

std::string encode_params(const NetworkSpec& spec, const Parameters& params) {
  check_params(spec, params);
  std::string payload;
  payload.reserve(std::size_t(params.count()) * 8);
  params.for_each_value([&](std::size_t, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_le(payload, bits);
  });
  std::string out(kMagic, sizeof kMagic);
  put_le(out, kParamFormatVersion);
  put_le(out, fingerprint(spec));
  put_le(out, std::uint64_t(params.count()));
  put_le(out, fnv1a(payload));
  out += payload;
  return out;
}

Parameters decode_params(const NetworkSpec& spec, const std::string& bytes) {
  if (bytes.size() < kHeaderSize) throw FormatError("parameter file truncated: header incomplete");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("parameter file has bad magic");
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kParamFormatVersion)
    throw FormatError("parameter file version " + std::to_string(version) + " is not supported");
  const auto file_fp = get_le<std::uint64_t>(bytes, 12);
  const auto count = get_le<std::uint64_t>(bytes, 20);
  const auto checksum = get_le<std::uint64_t>(bytes, 28);
  const auto expected_fp = fingerprint(spec);
  if (file_fp != expected_fp)
    throw FormatError("spec fingerprint mismatch: file has " + hex(file_fp) + ", network " + describe(spec) +
                      " has " + hex(expected_fp));

  Parameters params = init_params(spec, 0).zeros_like();
  if (count != std::uint64_t(params.count()))
    throw FormatError("parameter count mismatch: file has " + std::to_string(count) + ", network needs " +
                      std::to_string(params.count()));
  if (bytes.size() != kHeaderSize + count * 8)
    throw FormatError("parameter file size " + std::to_string(bytes.size()) + " does not match header (expected " +
                      std::to_string(kHeaderSize + count * 8) + ")");
  const std::string payload = bytes.substr(kHeaderSize);
  if (fnv1a(payload) != checksum) throw FormatError("parameter file checksum mismatch (corrupted payload)");

  std::size_t offset = 0;
  params.for_each_value([&](std::size_t, double& v) {
    const auto bits = get_le<std::uint64_t>(payload, offset);
    std::memcpy(&v, &bits, sizeof v);
    offset += 8;
  });
  return params;
}

void save_params(const NetworkSpec& spec, const Parameters& params, const std::filesystem::path& path) {
  write_file_atomic(path, encode_params(spec, params));
}

Parameters load_params(const NetworkSpec& spec, const std::filesystem::path& path) {
  return decode_params(spec, read_file(path));
}

}  // namespace bridge::nn
