#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace rwiou {

// Uniform BEV grid. Rows run along y, columns along x.
struct GridSpec {
  double x_min = 0.0;
  double y_min = 0.0;
  double cell_size = 1.0;
  int n_rows = 1;
  int n_cols = 1;

  void validate() const {
    if (!std::isfinite(x_min) || !std::isfinite(y_min)) {
      throw std::invalid_argument("grid origin must be finite");
    }
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
      throw std::invalid_argument("grid cell_size must be positive");
    }
    if (n_rows < 1 || n_cols < 1) throw std::invalid_argument("grid needs at least one cell");
  }

  std::size_t n_cells() const { return static_cast<std::size_t>(n_rows) * n_cols; }
  double x_max() const { return x_min + cell_size * n_cols; }
  double y_max() const { return y_min + cell_size * n_rows; }

  bool contains(double x, double y) const {
    return x >= x_min && x < x_max() && y >= y_min && y < y_max();
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct CellIndex {
  int row = 0;
  int col = 0;

  // Row-major flat index.
  std::size_t flat(const GridSpec& grid) const {
    return static_cast<std::size_t>(row) * grid.n_cols + col;
  }
  static CellIndex from_flat(const GridSpec& grid, std::size_t i) {
    return {static_cast<int>(i / grid.n_cols), static_cast<int>(i % grid.n_cols)};
  }

  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

inline double cell_center_x(const GridSpec& grid, const CellIndex& c) {
  return grid.x_min + (c.col + 0.5) * grid.cell_size;
}
inline double cell_center_y(const GridSpec& grid, const CellIndex& c) {
  return grid.y_min + (c.row + 0.5) * grid.cell_size;
}

// Floor mapping, clamped to the grid. Points more than one cell outside the
// extent are rejected.
inline CellIndex world_to_cell(const GridSpec& grid, double x, double y) {
  const double fx = (x - grid.x_min) / grid.cell_size;
  const double fy = (y - grid.y_min) / grid.cell_size;
  if (!std::isfinite(fx) || !std::isfinite(fy) || fx < -1.0 || fy < -1.0 ||
      fx > grid.n_cols + 1.0 || fy > grid.n_rows + 1.0) {
    throw std::out_of_range("point lies outside the grid extent");
  }
  const int col = std::clamp(static_cast<int>(std::floor(fx)), 0, grid.n_cols - 1);
  const int row = std::clamp(static_cast<int>(std::floor(fy)), 0, grid.n_rows - 1);
  return {row, col};
}

// In-bounds cells within Manhattan distance r of `center`, row-major.
inline std::vector<CellIndex> cross_region(const GridSpec& grid, const CellIndex& center, int r) {
  if (r < 0) throw std::invalid_argument("cross region radius must be nonnegative");
  if (center.row < 0 || center.row >= grid.n_rows || center.col < 0 ||
      center.col >= grid.n_cols) {
    throw std::out_of_range("cross region center is off-grid");
  }
  std::vector<CellIndex> cells;
  for (int dr = -r; dr <= r; ++dr) {
    const int row = center.row + dr;
    if (row < 0 || row >= grid.n_rows) continue;
    const int span = r - std::abs(dr);
    for (int dc = -span; dc <= span; ++dc) {
      const int col = center.col + dc;
      if (col < 0 || col >= grid.n_cols) continue;
      cells.push_back({row, col});
    }
  }
  return cells;
}

}  // namespace rwiou
