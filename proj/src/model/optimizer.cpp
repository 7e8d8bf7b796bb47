#include <algorithm>
#include <cmath>

#include "ktl/model.hpp"

namespace ktl::model {

OptimizerState init_optimizer(const ModelParams& params) {
  OptimizerState s;
  s.square_avg = params.params.zeros_like<float>();
  return s;
}

void optimizer_step(ModelParams& model, const ParamSet<float>& grads, OptimizerState& state,
                    const RmsPropConfig& cfg, std::span<const ParamGroup> groups) {
  if (grads.flatten_shapes() != model.params.flatten_shapes() ||
      state.square_avg.flatten_shapes() != model.params.flatten_shapes())
    throw InternalError("optimizer_step: parameter, gradient and state shapes differ");
  auto active = [&](ParamGroup g) { return std::find(groups.begin(), groups.end(), g) != groups.end(); };

  std::vector<const std::vector<float>*> g_list;
  grads.for_each([&](ParamGroup g, const std::vector<float>& v) {
    if (!active(g)) return;
    for (float x : v)
      if (!std::isfinite(x)) throw InternalError("optimizer_step: non-finite gradient entry");
  });
  grads.for_each([&](ParamGroup, const std::vector<float>& v) { g_list.push_back(&v); });
  std::vector<std::vector<float>*> s_list;
  state.square_avg.for_each([&](ParamGroup, std::vector<float>& v) { s_list.push_back(&v); });

  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  std::size_t idx = 0;
  model.params.for_each([&](ParamGroup g, std::vector<float>& p) {
    const std::vector<float>& gr = *g_list[idx];
    std::vector<float>& sq = *s_list[idx];
    ++idx;
    if (!active(g)) return;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gr[i];
      const double s = cfg.alpha * sq[i] + (1.0 - cfg.alpha) * gi * gi;
      sq[i] = static_cast<float>(s);
      p[i] = static_cast<float>(p[i] * decay - cfg.learning_rate * gi / (std::sqrt(s) + cfg.epsilon));
    }
  });
  ++state.steps;
}

}  // namespace ktl::model
