#include "vesselseg/volume_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace vesselseg {

static_assert(std::endian::native == std::endian::little,
              "rawvol writer assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "rawvol";
constexpr int kVersion = 1;

json make_sidecar(const Shape3& shape, const Spacing& spacing,
                  const char* dtype) {
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["shape"] = {shape.z, shape.y, shape.x};
  j["spacing_mm"] = {spacing[0], spacing[1], spacing[2]};
  j["dtype"] = dtype;
  j["byte_order"] = "little";
  return j;
}

void write_sidecar(const json& j, const fs::path& base) {
  fs::path p = base;
  p += ".json";
  std::ofstream out(p);
  if (!out) throw DataError("cannot write sidecar: " + p.string());
  out << j.dump(2) << "\n";
}

void write_blob(const void* data, std::size_t bytes, const fs::path& base) {
  fs::path p = base;
  p += ".bin";
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write blob: " + p.string());
  out.write(static_cast<const char*>(data),
            static_cast<std::streamsize>(bytes));
  if (!out) throw DataError("short write: " + p.string());
}

struct Sidecar {
  Shape3 shape;
  Spacing spacing;
  std::string dtype;
};

Sidecar read_sidecar(const fs::path& base) {
  fs::path p = base;
  p += ".json";
  if (!fs::exists(p)) throw SidecarMissingError("missing sidecar: " + p.string());
  std::ifstream in(p);
  if (!in) throw SidecarMissingError("cannot open sidecar: " + p.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SidecarCorruptError("unparseable sidecar " + p.string() + ": " +
                              e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat ||
        j.at("version").get<int>() != kVersion)
      throw SidecarCorruptError("not a rawvol v1 sidecar: " + p.string());
    if (j.at("byte_order").get<std::string>() != "little")
      throw UnsupportedDtypeError("unsupported byte order in " + p.string());
    auto shp = j.at("shape");
    auto spc = j.at("spacing_mm");
    if (shp.size() != 3 || spc.size() != 3)
      throw SidecarCorruptError("bad shape/spacing in " + p.string());
    Sidecar sc;
    sc.shape = {shp[0].get<int>(), shp[1].get<int>(), shp[2].get<int>()};
    sc.spacing = {spc[0].get<double>(), spc[1].get<double>(),
                  spc[2].get<double>()};
    sc.dtype = j.at("dtype").get<std::string>();
    if (sc.shape.z <= 0 || sc.shape.y <= 0 || sc.shape.x <= 0)
      throw SidecarCorruptError("nonpositive shape in " + p.string());
    return sc;
  } catch (const json::exception& e) {
    throw SidecarCorruptError("bad sidecar fields in " + p.string() + ": " +
                              e.what());
  }
}

std::vector<char> read_blob_checked(const fs::path& base,
                                    std::size_t expected_bytes) {
  fs::path p = base;
  p += ".bin";
  if (!fs::exists(p)) throw SidecarMissingError("missing blob: " + p.string());
  const auto actual = fs::file_size(p);
  if (actual != expected_bytes)
    throw BlobSizeMismatchError(
        "blob size mismatch for " + p.string() + ": expected " +
        std::to_string(expected_bytes) + " bytes, found " +
        std::to_string(actual));
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open blob: " + p.string());
  std::vector<char> buf(expected_bytes);
  in.read(buf.data(), static_cast<std::streamsize>(expected_bytes));
  if (static_cast<std::size_t>(in.gcount()) != expected_bytes)
    throw BlobSizeMismatchError("short read: " + p.string());
  return buf;
}

}  // namespace

void write_volume(const Volume& vol, const fs::path& base) {
  write_sidecar(make_sidecar(vol.shape, vol.spacing, "float32"), base);
  std::vector<float> f(vol.v.size());
  for (std::size_t i = 0; i < vol.v.size(); ++i)
    f[i] = static_cast<float>(vol.v[i]);
  write_blob(f.data(), f.size() * sizeof(float), base);
}

void write_volume(const Mask& mask, const fs::path& base) {
  write_sidecar(make_sidecar(mask.shape, mask.spacing, "uint8"), base);
  write_blob(mask.v.data(), mask.v.size(), base);
}

Volume read_volume(const fs::path& base) {
  const Sidecar sc = read_sidecar(base);
  if (sc.dtype != "float32")
    throw UnsupportedDtypeError("expected dtype float32 in " + base.string() +
                                ".json, found \"" + sc.dtype + "\"");
  const auto n = static_cast<std::size_t>(sc.shape.voxels());
  const auto buf = read_blob_checked(base, n * sizeof(float));
  Volume vol(sc.shape, 0.0, sc.spacing);
  const float* f = reinterpret_cast<const float*>(buf.data());
  for (std::size_t i = 0; i < n; ++i) vol.v[i] = static_cast<double>(f[i]);
  return vol;
}

Mask read_mask(const fs::path& base) {
  const Sidecar sc = read_sidecar(base);
  if (sc.dtype != "uint8")
    throw UnsupportedDtypeError("expected dtype uint8 in " + base.string() +
                                ".json, found \"" + sc.dtype + "\"");
  const auto n = static_cast<std::size_t>(sc.shape.voxels());
  const auto buf = read_blob_checked(base, n);
  Mask mask(sc.shape, 0, sc.spacing);
  for (std::size_t i = 0; i < n; ++i)
    mask.v[i] = static_cast<std::uint8_t>(buf[i]) ? 1 : 0;
  return mask;
}

bool volume_exists(const fs::path& base) {
  fs::path j = base, b = base;
  j += ".json";
  b += ".bin";
  return fs::exists(j) && fs::exists(b);
}

void write_f64_blob(const std::vector<double>& data, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write blob: " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw DataError("short write: " + path.string());
}

std::vector<double> read_f64_blob(const fs::path& path,
                                  std::size_t expected_count) {
  if (!fs::exists(path)) throw SidecarMissingError("missing blob: " + path.string());
  const auto expected_bytes = expected_count * sizeof(double);
  if (fs::file_size(path) != expected_bytes)
    throw BlobSizeMismatchError("blob size mismatch for " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::vector<double> data(expected_count);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(expected_bytes));
  if (static_cast<std::size_t>(in.gcount()) != expected_bytes)
    throw BlobSizeMismatchError("short read: " + path.string());
  return data;
}

}  // namespace vesselseg
