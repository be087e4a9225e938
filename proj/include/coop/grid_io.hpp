#pragma once

// Binary grid dumps: "BEVG", u32 version, u32 C, H, W, f32 cell size, then
// C·H·W little-endian f32 values in (c, h, w) order.

#include <string>
#include <vector>

#include "coop/grid.hpp"

namespace coop {

inline constexpr std::uint32_t kGridFormatVersion = 1;

std::vector<std::uint8_t> encode_grid(const Grid& grid);
Grid decode_grid(const std::vector<std::uint8_t>& bytes);

void save_grid(const std::string& path, const Grid& grid);
Grid load_grid(const std::string& path);

}  // namespace coop
