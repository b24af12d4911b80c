#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ftn {

// Analytic per-layer cost entry. Counting conventions (single sample):
//   conv            mult_adds = out_c * in_c * kh * kw * out_h * out_w
//   matmul MxK,KxN  mult_adds = M * K * N
//   batch norm      one mult-add per element
//   pooling/softmax/elementwise add or scale: one op per element
// Bias additions are not counted separately.
struct LayerCost {
  std::string kind;
  std::int64_t params = 0;
  std::int64_t mult_adds = 0;
};

struct CostModel {
  std::string module;
  std::vector<std::int64_t> input_shape;  // [C, H, W]
  std::vector<LayerCost> layers;

  std::int64_t params() const;
  std::int64_t mult_adds() const;
};

// Enumerates every parameter and mult-add of the CFA module for a C-channel
// H x W input with pool factor n.
CostModel cfa_cost(int channels, int pool_factor, int height, int width);

// Same for the two-branch PAM-CAM baseline (reduction factor fixed at 2).
CostModel pamcam_cost(int channels, int height, int width);

std::int64_t count_params(const CostModel& m);
std::int64_t count_flops(const CostModel& m);

std::string cost_report_json(const CostModel& m);

}  // namespace ftn
