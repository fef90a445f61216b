#pragma once

// Portable matrix dumps: CSV with full precision and binary PGM (P5)
// heatmaps, min-max normalized per matrix.

#include <string>

#include "goat/types.hpp"

namespace goat {

void write_matrix_csv(const MatXd& m, const std::string& path);

void write_pgm(const MatXd& m, const std::string& path);

}  // namespace goat
