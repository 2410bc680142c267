#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace selfcal {

using Point = Eigen::Vector2d;

// Row-per-point storage for 2D point sets; every batched API in the library
// takes and returns this shape.
template <typename Scalar>
using PointsT = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;
using Points = PointsT<double>;

using Labels = std::vector<int>;

inline constexpr int kUnlabeled = -1;

using Rng = std::mt19937_64;

// Named sub-streams derived from one root seed. Each consumer draws from its
// own stream so that adding draws in one place never shifts another.
enum class Stream : std::uint64_t {
  Data = 1,
  Init = 2,
  Batch = 3,
  Time = 4,
  Noise = 5,
  Sgld = 6,
  Sampler = 7,
  Dropout = 8,
  Split = 9,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(salt),
                    0x5c6a1u};
  return Rng(seq);
}

inline Points standard_normal_points(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Points z(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    z(i, 0) = normal(rng);
    z(i, 1) = normal(rng);
  }
  return z;
}

}  // namespace selfcal
