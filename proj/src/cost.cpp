#include "ftn/cost.hpp"

#include <nlohmann/json.hpp>

#include "ftn/tensor.hpp"

namespace ftn {

using i64 = std::int64_t;

std::int64_t CostModel::params() const {
  i64 s = 0;
  for (const auto& l : layers) s += l.params;
  return s;
}

std::int64_t CostModel::mult_adds() const {
  i64 s = 0;
  for (const auto& l : layers) s += l.mult_adds;
  return s;
}

namespace {

LayerCost conv(const std::string& name, i64 in_c, i64 out_c, i64 k, i64 out_h,
               i64 out_w) {
  return {name, out_c * in_c * k * k + out_c, out_c * in_c * k * k * out_h * out_w};
}

LayerCost batch_norm(const std::string& name, i64 c, i64 h, i64 w) {
  return {name, 2 * c, c * h * w};
}

LayerCost matmul(const std::string& name, i64 m, i64 k, i64 n) {
  return {name, 0, m * k * n};
}

LayerCost per_element(const std::string& name, i64 elements, i64 params = 0) {
  return {name, params, elements};
}

}  // namespace

CostModel cfa_cost(int channels, int pool_factor, int height, int width) {
  if (channels <= 0 || pool_factor <= 0 || channels % pool_factor != 0)
    throw Error("cfa_cost: channels must be divisible by the pool factor");
  const i64 c = channels, h = height, w = width;
  const i64 d = c / pool_factor;
  const i64 n = h * w;

  CostModel m;
  m.module = "cfa";
  m.input_shape = {c, h, w};
  m.layers = {
      per_element("channel_max_pool", c * h * w),
      conv("q_conv 1x1", d, d, 1, h, w),
      conv("k_conv 1x1", d, d, 1, h, w),
      conv("v_conv 1x1", d, d, 1, h, w),
      batch_norm("q_bn", d, h, w),
      batch_norm("k_bn", d, h, w),
      per_element("q_relu + k_relu", 2 * d * h * w),
      matmul("channel_affinity QK^T", d, n, d),
      per_element("channel_affinity softmax", d * d),
      matmul("position_affinity K^TQ", n, d, n),
      per_element("position_affinity softmax", n * n),
      matmul("ca XV", d, d, n),
      matmul("pa VS^T", d, n, n),
      per_element("fuse gamma*CA + phi*PA + B", 2 * d * h * w, 2),
      batch_norm("fuse_bn", d, h, w),
      conv("recover 1x1", d, c, 1, h, w),
  };
  return m;
}

CostModel pamcam_cost(int channels, int height, int width) {
  if (channels <= 0 || channels % 2 != 0)
    throw Error("pamcam_cost: channels must be even");
  const i64 c = channels, h = height, w = width;
  const i64 d = c / 2;
  const i64 n = h * w;

  CostModel m;
  m.module = "pamcam";
  m.input_shape = {c, h, w};
  auto branch = [&](const std::string& tag, bool positional) {
    m.layers.push_back(conv(tag + " reduce 3x3", c, d, 3, h, w));
    m.layers.push_back(conv(tag + " q_conv 1x1", d, d, 1, h, w));
    m.layers.push_back(conv(tag + " k_conv 1x1", d, d, 1, h, w));
    m.layers.push_back(conv(tag + " v_conv 1x1", d, d, 1, h, w));
    m.layers.push_back(batch_norm(tag + " q_bn", d, h, w));
    m.layers.push_back(batch_norm(tag + " k_bn", d, h, w));
    m.layers.push_back(per_element(tag + " q_relu + k_relu", 2 * d * h * w));
    if (positional) {
      m.layers.push_back(matmul(tag + " affinity K^TQ", n, d, n));
      m.layers.push_back(per_element(tag + " affinity softmax", n * n));
      m.layers.push_back(matmul(tag + " map VS^T", d, n, n));
    } else {
      m.layers.push_back(matmul(tag + " affinity QK^T", d, n, d));
      m.layers.push_back(per_element(tag + " affinity softmax", d * d));
      m.layers.push_back(matmul(tag + " map XV", d, d, n));
    }
    m.layers.push_back(per_element(tag + " gate F + alpha*map", d * h * w, 1));
    m.layers.push_back(conv(tag + " restore 3x3", d, c, 3, h, w));
  };
  branch("position", true);
  branch("channel", false);
  m.layers.push_back(per_element("sum branches with input", 2 * c * h * w));
  return m;
}

std::int64_t count_params(const CostModel& m) { return m.params(); }
std::int64_t count_flops(const CostModel& m) { return m.mult_adds(); }

std::string cost_report_json(const CostModel& m) {
  nlohmann::json j;
  j["module"] = m.module;
  j["params"] = m.params();
  j["mult_adds"] = m.mult_adds();
  j["input_shape"] = m.input_shape;
  return j.dump();
}

}  // namespace ftn
