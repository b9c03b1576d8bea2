#pragma once

// A tiny PRONOSTIA-style bearing directory: acc_NNNNN.csv files with
// hour, minute, second, microsecond, horizontal, vertical columns, plus a
// temperature file the loader must ignore.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "support/tempdir.hpp"

namespace mcsformer::testing {

struct PronostiaFixture {
  std::filesystem::path dir;
  // expected[snapshot][row] for each channel, parsed from the same decimal
  // text that was written.
  std::vector<std::vector<double>> horizontal;
  std::vector<std::vector<double>> vertical;
};

inline std::string fixture_value(std::size_t snapshot, std::size_t row, int channel) {
  char buf[32];
  const double v = (channel == 0 ? 0.137 : -0.052) * static_cast<double>(row + 1) +
                   0.011 * static_cast<double>(snapshot) - 0.25;
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline PronostiaFixture write_pronostia_fixture(const std::filesystem::path& root,
                                                std::size_t snapshots = 3,
                                                std::size_t rows = 8, char delim = ',') {
  PronostiaFixture fx;
  fx.dir = root / "Bearing1_3";
  std::filesystem::create_directories(fx.dir);
  for (std::size_t s = 0; s < snapshots; ++s) {
    std::string text;
    std::vector<double> h, v;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::string hs = fixture_value(s, r, 0), vs = fixture_value(s, r, 1);
      text += "9" + std::string(1, delim) + "39" + delim + std::to_string(r) + delim +
              std::to_string(65438 + 39 * r) + delim + hs + delim + vs + "\n";
      h.push_back(std::stod(hs));
      v.push_back(std::stod(vs));
    }
    char name[32];
    std::snprintf(name, sizeof name, "acc_%05zu.csv", s + 1);
    write_text(fx.dir / name, text);
    fx.horizontal.push_back(h);
    fx.vertical.push_back(v);
  }
  write_text(fx.dir / "temp_00001.csv", "9,39,0,1,not-a-number\n");
  return fx;
}

}  // namespace mcsformer::testing
