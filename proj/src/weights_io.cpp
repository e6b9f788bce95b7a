#include "vscam/weights_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "vscam/errors.hpp"

namespace vscam {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw FormatError(std::string("VSCW file truncated while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_vscw(std::ostream& out, const WeightMap& weights) {
  out.write("VSCW", 4);
  put_le<std::uint32_t>(out, kVscwVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, t] : weights) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("tensor name too long: " + name.substr(0, 32) + "...");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_le<float>(out, static_cast<float>(v));
  }
  if (!out) throw FormatError("failed writing VSCW stream");
}

WeightMap read_vscw(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("VSCW file truncated while reading magic");
  if (std::memcmp(magic, "VSCW", 4) != 0) throw FormatError("not a VSCW file (bad magic)");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kVscwVersion) {
    throw FormatError("unsupported VSCW version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in, "tensor count");
  WeightMap weights;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint16_t>(in, "name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("VSCW file truncated in tensor name");
    const auto ndim = get_le<std::uint8_t>(in, "rank");
    Shape shape(ndim);
    for (auto& d : shape) d = get_le<std::uint32_t>(in, "dims");
    const std::size_t n = shape_numel(shape);
    // Grow while reading so a corrupt dimension cannot force a huge allocation up front.
    std::vector<double> data;
    data.reserve(std::min<std::size_t>(n, 1u << 20));
    const std::string what = "values of '" + name + "'";
    for (std::size_t k = 0; k < n; ++k) data.push_back(get_le<float>(in, what.c_str()));
    if (!weights.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate tensor '" + name + "' in VSCW file");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after the last tensor in VSCW file");
  }
  return weights;
}

void save_weights(const ViGModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_vscw(out, model.weights());
}

ViGModel load_weights(const ViGConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight file " + path.string());
  WeightMap weights = read_vscw(in);
  const auto schema = weight_schema(config);
  for (const auto& [name, shape] : schema) {
    auto it = weights.find(name);
    if (it == weights.end()) throw FormatError("weight file lacks tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                        ", config expects " + shape_str(shape));
    }
  }
  for (const auto& [name, _] : weights) {
    bool known = false;
    for (const auto& entry : schema) known = known || entry.first == name;
    if (!known) throw FormatError("weight file has unknown tensor '" + name + "'");
  }
  return ViGModel(config, std::move(weights));
}

}  // namespace vscam
