#pragma once

#include <array>
#include <cstdint>

#include <Eigen/Dense>

namespace nwflow {

/// One step of splitmix64: advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// xoshiro256++ seeded by four successive splitmix64 outputs.
///
/// Draw conventions (shared with any other implementation that wants
/// bit-identical data):
///   uniform()  = (next() >> 11) * 2^-53, in [0, 1)
///   normal()   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2), two uniforms per draw
///   index(n)   = floor(uniform() * n)
///   rademacher = +1 if the top bit of next() is set, else -1
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  double normal();
  std::uint64_t index(std::uint64_t n);
  double rademacher();

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace nwflow
