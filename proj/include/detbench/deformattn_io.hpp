#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "detbench/deformattn.hpp"

namespace detbench::deformattn {

using Instance = DeformableAttentionInstance<double>;

// Instance fixture document:
//   levels:           [{height, width, channels, values: H*W*C numbers, row-major,
//                       channel fastest}]
//   query:            [C_q numbers]
//   reference_points: [[x, y]] one per level
//   offsets:          [[[dx, dy] x N] x M]
//   logits:           [[N numbers] x M]
//   projections:      [[C_out x C nested rows] x N] x M
std::string serialize_instance(const Instance& inst);
Instance parse_instance_text(std::string_view text);
Instance parse_instance(const std::filesystem::path& path);

inline constexpr double kOracleTolerance = 1e-12;    // fused vs naive, absolute
inline constexpr double kGradientTolerance = 1e-4;   // max relative error

struct KernelCheckReport {
  int trials = 0;
  double max_oracle_deviation = 0.0;
  // Worst relative gradient error per target over the seed instance
  // (M=2, N=4, C=8) and trials / 5 further random instances.
  double max_grad_error[4] = {0.0, 0.0, 0.0, 0.0};
  int gradient_instances = 0;

  bool passed() const;
};

// Oracle equivalence over `trials` random instances starting at `seed`,
// followed by gradient checks with step `h` for every GradTarget.
KernelCheckReport kernel_check(std::uint64_t seed, int trials, double h);

}  // namespace detbench::deformattn
