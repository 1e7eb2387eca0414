#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "vesselseg/rng.hpp"
#include "vesselseg/volume_io.hpp"

using namespace vesselseg;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  const fs::path p = fs::temp_directory_path() / "vesselseg_io_test";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("rawvol roundtrip is bitwise for float32 volumes") {
  Rng rng(1);
  Volume v({5, 6, 7}, 0.0, {0.6, 0.5, 0.5});
  // values that are exactly representable in float32
  for (auto& x : v.v) x = static_cast<double>(static_cast<float>(rng.normal()));
  const fs::path base = tmp_dir() / "vol_roundtrip";
  write_volume(v, base);
  const Volume r = read_volume(base);
  REQUIRE(r.shape == v.shape);
  CHECK(r.spacing == v.spacing);  // spacing preserved exactly
  for (std::size_t i = 0; i < v.v.size(); ++i) REQUIRE(r.v[i] == v.v[i]);
}

TEST_CASE("rawvol roundtrip is bitwise for masks") {
  Rng rng(2);
  Mask m({4, 4, 4}, 0, {1.0, 1.0, 1.0});
  for (auto& x : m.v) x = rng.bernoulli(0.4) ? 1 : 0;
  const fs::path base = tmp_dir() / "mask_roundtrip";
  write_volume(m, base);
  const Mask r = read_mask(base);
  REQUIRE(r.shape == m.shape);
  for (std::size_t i = 0; i < m.v.size(); ++i) REQUIRE(r.v[i] == m.v[i]);
}

TEST_CASE("rawvol errors are distinct") {
  const fs::path dir = tmp_dir();
  Volume v({2, 2, 2});
  v.v.assign(8, 0.5);

  SUBCASE("missing sidecar") {
    CHECK_THROWS_AS(read_volume(dir / "does_not_exist"), SidecarMissingError);
  }
  SUBCASE("corrupt sidecar") {
    const fs::path base = dir / "corrupt";
    std::ofstream(base.string() + ".json") << "{not json";
    std::ofstream(base.string() + ".bin") << "xx";
    CHECK_THROWS_AS(read_volume(base), SidecarCorruptError);
  }
  SUBCASE("blob size mismatch") {
    const fs::path base = dir / "short_blob";
    write_volume(v, base);
    std::ofstream(base.string() + ".bin", std::ios::trunc) << "xy";
    CHECK_THROWS_AS(read_volume(base), BlobSizeMismatchError);
  }
  SUBCASE("unsupported dtype") {
    const fs::path base = dir / "wrong_dtype";
    write_volume(v, base);
    CHECK_THROWS_AS(read_mask(base), UnsupportedDtypeError);
    Mask m({2, 2, 2});
    const fs::path mbase = dir / "wrong_dtype_mask";
    write_volume(m, mbase);
    CHECK_THROWS_AS(read_volume(mbase), UnsupportedDtypeError);
  }
}

TEST_CASE("float64 blobs roundtrip") {
  Rng rng(3);
  std::vector<double> data(257);
  for (auto& x : data) x = rng.normal();
  const fs::path path = tmp_dir() / "weights.bin";
  write_f64_blob(data, path);
  const auto r = read_f64_blob(path, data.size());
  for (std::size_t i = 0; i < data.size(); ++i) REQUIRE(r[i] == data[i]);
  CHECK_THROWS_AS(read_f64_blob(path, data.size() + 1), BlobSizeMismatchError);
}
