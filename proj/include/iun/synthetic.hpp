#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace iun::synthetic {

/// Cluster geometry with a planted "pull": every important center drags the
/// nearest fraction of the other centers part of the way towards itself.
struct PlantedOptions {
  std::size_t n_clusters = 60;
  std::size_t dim = 20;
  std::size_t n_important = 10;
  std::size_t points_per_cluster = 5;
  double pull_fraction = 0.5;  // share of the other centers that move
  double pull_strength = 0.2;  // fraction of the distance they travel
  double noise = 0.02;         // isotropic point noise (stdev per coordinate)
  std::uint64_t seed = 0;
};

struct PlantedData {
  std::size_t dim = 0;
  std::vector<double> centers;  // n_clusters x dim, after the pull
  std::vector<int> importance;  // 1 for important clusters, else 0
  std::vector<double> points;   // rows x dim
  std::vector<int> labels;      // cluster of each point row
};

/// Centers uniform in the unit ball; important clusters are a random subset.
PlantedData planted_signal(const PlantedOptions& options);

}  // namespace iun::synthetic
