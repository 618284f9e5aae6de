#pragma once

#include <filesystem>
#include <string>

#include "bridge/nn/network.hpp"

namespace bridge::nn {

/// Parameter file layout (all integers little-endian):
///   bytes 0-7   magic "BRNNPAR1"
///   u32         format version (1)
///   u64         spec fingerprint
///   u64         number of values
///   u64         FNV-1a checksum of the value bytes
///   f64[count]  values in layer order, weight (column-major) then bias
inline constexpr std::uint32_t kParamFormatVersion = 1;

std::string encode_params(const NetworkSpec& spec, const Parameters& params);

/// Throws FormatError on truncation, bad magic/version, checksum failure or a
/// fingerprint/size that does not match spec. Nothing is returned on failure.
Parameters decode_params(const NetworkSpec& spec, const std::string& bytes);

void save_params(const NetworkSpec& spec, const Parameters& params, const std::filesystem::path& path);
Parameters load_params(const NetworkSpec& spec, const std::filesystem::path& path);

}  // namespace bridge::nn
