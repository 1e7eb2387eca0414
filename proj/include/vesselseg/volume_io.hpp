#ifndef VESSELSEG_VOLUME_IO_HPP_
#define VESSELSEG_VOLUME_IO_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "vesselseg/volume.hpp"

namespace vesselseg {

// "rawvol v1": <base>.json sidecar + <base>.bin raw little-endian array in
// z-major (C) order. dtype float32 for intensity/variance volumes, uint8 for
// masks. Bit-exact and language-neutral.
//
// All paths below name the base (no extension); the two files are derived.

void write_volume(const Volume& vol, const std::filesystem::path& base);
void write_volume(const Mask& mask, const std::filesystem::path& base);

Volume read_volume(const std::filesystem::path& base);  // dtype float32
Mask read_mask(const std::filesystem::path& base);      // dtype uint8

// True if both sidecar and blob exist.
bool volume_exists(const std::filesystem::path& base);

// Raw little-endian float64 tensor blobs (checkpoint weights).
void write_f64_blob(const std::vector<double>& data,
                    const std::filesystem::path& path);
std::vector<double> read_f64_blob(const std::filesystem::path& path,
                                  std::size_t expected_count);

}  // namespace vesselseg

#endif  // VESSELSEG_VOLUME_IO_HPP_
