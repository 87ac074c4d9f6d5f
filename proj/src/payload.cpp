#include "vdx/payload.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vdx/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "payload format is little-endian; big-endian hosts are unsupported");

namespace vdx {

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw_runtime("IoFailure", "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw_runtime("IoFailure", "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw_runtime("IoFailure", "rename to " + path.string() + ": " + ec.message());
}

void write_payload(const std::filesystem::path& path, const FeatureSeq& seq) {
  if (seq.values.size() != seq.frames * seq.dim) {
    throw_usage("ShapeMismatch", "payload value count does not match frames*dim");
  }
  std::string bytes;
  bytes.reserve(16 + seq.values.size() * 8);
  bytes.append(kPayloadMagic, 8);
  const uint32_t t = static_cast<uint32_t>(seq.frames);
  const uint32_t d = static_cast<uint32_t>(seq.dim);
  bytes.append(reinterpret_cast<const char*>(&t), 4);
  bytes.append(reinterpret_cast<const char*>(&d), 4);
  bytes.append(reinterpret_cast<const char*>(seq.values.data()), seq.values.size() * 8);
  atomic_write(path, bytes);
}

FeatureSeq read_payload(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_runtime("MissingPayload", "cannot open payload " + path.string());
  char magic[8];
  uint32_t t = 0, d = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || std::memcmp(magic, kPayloadMagic, 8) != 0) {
    throw_runtime("ParseError", "bad payload magic in " + path.string());
  }
  FeatureSeq seq = make_seq(t, d);
  in.read(reinterpret_cast<char*>(seq.values.data()),
          static_cast<std::streamsize>(seq.values.size() * 8));
  if (!in) throw_runtime("ParseError", "truncated payload " + path.string());
  return seq;
}

std::pair<uint32_t, uint32_t> read_payload_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_runtime("MissingPayload", "cannot open payload " + path.string());
  char magic[8];
  uint32_t t = 0, d = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || std::memcmp(magic, kPayloadMagic, 8) != 0) {
    throw_runtime("ParseError", "bad payload magic in " + path.string());
  }
  return {t, d};
}

}  // namespace vdx
