#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace metairnet {

/// Boundaries of a g-way floor partition of [0, extent): cell i covers
/// [bounds[i], bounds[i + 1]) with bounds[i] = floor(i * extent / g).
inline std::vector<std::size_t> block_bounds(std::size_t cells, std::size_t extent) {
  if (cells == 0) throw std::invalid_argument("grid must have at least one cell");
  if (extent < cells) {
    throw std::invalid_argument("extent " + std::to_string(extent) + " is smaller than grid size " +
                                std::to_string(cells));
  }
  std::vector<std::size_t> bounds(cells + 1);
  for (std::size_t i = 0; i <= cells; ++i) bounds[i] = i * extent / cells;
  return bounds;
}

/// For every coordinate in [0, extent), the index of the cell covering it.
inline std::vector<std::size_t> block_index(std::size_t cells, std::size_t extent) {
  const auto bounds = block_bounds(cells, extent);
  std::vector<std::size_t> index(extent);
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t x = bounds[i]; x < bounds[i + 1]; ++x) index[x] = i;
  }
  return index;
}

}  // namespace metairnet
