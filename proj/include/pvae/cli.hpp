#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "pvae/numkit.hpp"

namespace pvae {

using GrayImage = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Tiles the columns of `phi` (each reshaped to tile_height x tile_width,
/// row-major) in the given order, `columns` tiles per row, with a one-pixel
/// black border. Each tile is min-max scaled to 0..255 on its own; a
/// constant column renders as uniform gray (128).
GrayImage render_dictionary_grid(const Matrix& phi, const std::vector<Eigen::Index>& order, int tile_height,
                                 int tile_width, int columns);

/// Indices sorted by ascending key; ties keep index order.
std::vector<Eigen::Index> ascending_order(const Vector& keys);

/// Entry point for the pvae command-line tool. Exit codes: 0 success,
/// 1 other failure, 2 configuration or usage error, 3 data error,
/// 4 numerical abort.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pvae
