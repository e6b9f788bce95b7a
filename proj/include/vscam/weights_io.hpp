#pragma once

#include <filesystem>
#include <iosfwd>

#include "vscam/vig_model.hpp"

namespace vscam {

// VSCW weight file, all integers little-endian:
//   "VSCW" | u32 version (=1) | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 ndim | ndim x u32 dims | f32 values (row-major)

inline constexpr std::uint32_t kVscwVersion = 1;

void write_vscw(std::ostream& out, const WeightMap& weights);
/// Parses a VSCW stream. Throws FormatError on bad magic/version or truncation.
WeightMap read_vscw(std::istream& in);

void save_weights(const ViGModel& model, const std::filesystem::path& path);
/// Reads the file and checks it against the config's weight schema; any missing, unknown
/// or mis-shaped tensor is reported by name as a FormatError.
ViGModel load_weights(const ViGConfig& config, const std::filesystem::path& path);

}  // namespace vscam
