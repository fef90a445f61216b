#include "goat/matrix_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace goat {

void write_matrix_csv(const MatXd& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_matrix_csv: cannot open " + path);
  char buf[40];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      out << buf;
      if (j + 1 < m.cols()) out << ',';
    }
    out << '\n';
  }
}

void write_pgm(const MatXd& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  const double lo = m.minCoeff();
  const double hi = m.maxCoeff();
  const double span = hi - lo;
  out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = span > 0.0 ? (m(i, j) - lo) / span : 0.0;
      row[static_cast<std::size_t>(j)] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

}  // namespace goat
