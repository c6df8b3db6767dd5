// Finite-difference checks of every learned block on a small 64-bit model.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sager {

struct BlockCheck {
  std::string block;
  double max_rel_error = 0;
};

inline constexpr double kGradTolerance = 1e-4;

std::vector<BlockCheck> run_gradient_checks(std::uint64_t seed);

}  // namespace sager
