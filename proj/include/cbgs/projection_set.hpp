#pragma once

#include <cstdint>
#include <vector>

#include "cbgs/geometry.hpp"
#include "cbgs/types.hpp"

namespace cbgs {

/// Measured or simulated per-view detector data with acquisition times.
struct ProjectionSet {
  ScanGeometry geom;
  int n_t = 0;                  // number of time indices
  std::vector<DetectorImage> views;
  std::vector<int> time_index;  // per view, in [0, n_t)

  struct NoiseProvenance {
    bool applied = false;
    double lambda = 0.0;
    double sigma = 0.0;
  } noise;
  std::uint64_t seed = 0;

  std::size_t size() const { return views.size(); }
  void validate() const;
};

}  // namespace cbgs
