#include "iun/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iun/error.hpp"
#include "iun/util.hpp"

namespace iun::synthetic {

PlantedData planted_signal(const PlantedOptions& o) {
  if (o.n_clusters < 2 || o.dim < 1 || o.n_important > o.n_clusters || o.points_per_cluster < 1) {
    throw Error(ErrorCode::InvalidArgument, "planted_signal: inconsistent options");
  }
  SplitMix64 rng(o.seed);
  PlantedData d;
  d.dim = o.dim;
  d.centers.resize(o.n_clusters * o.dim);
  for (std::size_t c = 0; c < o.n_clusters; ++c) {
    // Gaussian direction, radius u^(1/dim): uniform in the ball.
    double norm = 0.0;
    for (std::size_t j = 0; j < o.dim; ++j) {
      const double g = rng.normal();
      d.centers[c * o.dim + j] = g;
      norm += g * g;
    }
    norm = std::sqrt(norm);
    const double r = std::pow(rng.uniform(), 1.0 / static_cast<double>(o.dim));
    for (std::size_t j = 0; j < o.dim; ++j) d.centers[c * o.dim + j] *= r / norm;
  }

  std::vector<std::size_t> order(o.n_clusters);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  d.importance.assign(o.n_clusters, 0);
  for (std::size_t i = 0; i < o.n_important; ++i) d.importance[order[i]] = 1;

  auto dist2 = [&](std::size_t a, std::size_t b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < o.dim; ++j) {
      const double x = d.centers[a * o.dim + j] - d.centers[b * o.dim + j];
      acc += x * x;
    }
    return acc;
  };
  for (std::size_t imp = 0; imp < o.n_clusters; ++imp) {
    if (!d.importance[imp]) continue;
    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < o.n_clusters; ++c) {
      if (c != imp) others.push_back(c);
    }
    std::stable_sort(others.begin(), others.end(),
                     [&](std::size_t a, std::size_t b) { return dist2(imp, a) < dist2(imp, b); });
    // Rounded up: with 59 others, moving 29 would stop one short of the D50
    // order statistic and leave the median untouched.
    const auto moved = static_cast<std::size_t>(std::ceil(o.pull_fraction * static_cast<double>(others.size())));
    for (std::size_t i = 0; i < moved; ++i) {
      const std::size_t c = others[i];
      for (std::size_t j = 0; j < o.dim; ++j) {
        double& x = d.centers[c * o.dim + j];
        x += o.pull_strength * (d.centers[imp * o.dim + j] - x);
      }
    }
  }

  for (std::size_t c = 0; c < o.n_clusters; ++c) {
    for (std::size_t p = 0; p < o.points_per_cluster; ++p) {
      for (std::size_t j = 0; j < o.dim; ++j) d.points.push_back(d.centers[c * o.dim + j] + o.noise * rng.normal());
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

}  // namespace iun::synthetic
