#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vdx/error.hpp"

namespace vdx {

// Row-major feature matrix as stored on disk: frames x dim.
struct FeatureSeq {
  size_t frames = 0;
  size_t dim = 0;
  std::vector<double> values;

  double at(size_t t, size_t d) const { return values[t * dim + d]; }
  double& at(size_t t, size_t d) { return values[t * dim + d]; }
};

inline FeatureSeq make_seq(size_t frames, size_t dim) {
  return FeatureSeq{frames, dim, std::vector<double>(frames * dim, 0.0)};
}

// Payload file layout: 8-byte magic "VDXF0001", two little-endian uint32
// dims (frames, dim), then frames*dim little-endian float64 values.
inline constexpr char kPayloadMagic[9] = "VDXF0001";

void write_payload(const std::filesystem::path& path, const FeatureSeq& seq);
FeatureSeq read_payload(const std::filesystem::path& path);
// Header-only probe for inspect: returns (frames, dim) without the body.
std::pair<uint32_t, uint32_t> read_payload_header(const std::filesystem::path& path);

// All artifact writes go through a temp file + rename so interrupted runs
// never leave partial files at their final paths.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace vdx
