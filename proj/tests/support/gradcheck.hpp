#pragma once

// Central finite-difference oracle for the three training losses on small
// random double-precision networks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ktl/model.hpp"

namespace gradcheck {

using ktl::Rng;
using ktl::model::Network;
using ktl::model::Tensor;

enum class Loss { detector, contrastive, stage2 };

inline const char* name(Loss l) {
  switch (l) {
    case Loss::detector: return "detector MSE";
    case Loss::contrastive: return "contrastive";
    case Loss::stage2: return "masked stage-2 MSE";
  }
  return "?";
}

struct Instance {
  Network<double> net;
  std::vector<Tensor<double>> inputs;
  ktl::model::LossClosure<double> closure;
};

inline Tensor<double> random_map(Rng& rng, int c, int h, int w, double lo, double hi) {
  Tensor<double> t(c, h, w);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline Instance make_instance(Loss loss, Rng& rng) {
  ktl::model::ModelDims dims;
  dims.input_h = dims.input_w = 16;
  dims.hidden = 3;
  dims.descriptor_dim = 4;
  dims.landmarks = loss == Loss::stage2 ? 3 : 0;
  Instance in;
  in.net = ktl::model::init_network<double>(dims, rng.next());
  // Non-zero biases so every parameter carries gradient.
  in.net.params.for_each([&](ktl::model::ParamGroup, std::vector<double>& v) {
    for (double& x : v) x += 0.1 * rng.normal();
  });
  const int n_images = loss == Loss::contrastive ? 2 : 1;
  for (int i = 0; i < n_images; ++i) in.inputs.push_back(random_map(rng, 1, 16, 16, 0.0, 1.0));
  const int H = dims.output_h(), W = dims.output_w();

  switch (loss) {
    case Loss::detector: {
      const auto target = random_map(rng, 1, H, W, 0.0, 1.0);
      in.closure = [target](std::span<const ktl::model::ForwardCache<double>> c,
                            std::span<ktl::model::OutputGrads<double>> g) {
        return ktl::model::detector_loss<double>(c[0].detector, target, &g[0].detector);
      };
      break;
    }
    case Loss::contrastive: {
      ktl::model::PairBatch batch;
      auto loc = [&](int image) {
        return ktl::model::LocationRef{image, {rng.uniform(0, W - 1), rng.uniform(0, H - 1)}};
      };
      for (int i = 0; i < 4; ++i) batch.positives.emplace_back(loc(0), loc(1));
      for (int i = 0; i < 6; ++i) {
        const int image = i % 2;
        batch.negatives.push_back({loc(image), loc(image), true});
      }
      const double margin = rng.uniform(0.5, 3.0);
      in.closure = [batch, margin](std::span<const ktl::model::ForwardCache<double>> c,
                                   std::span<ktl::model::OutputGrads<double>> g) {
        std::vector<const Tensor<double>*> maps;
        std::vector<Tensor<double>> grads;
        for (const auto& cache : c) {
          maps.push_back(&cache.features);
          grads.emplace_back(cache.features.c, cache.features.h, cache.features.w);
        }
        const double l = ktl::model::contrastive_loss<double>(batch, maps, margin, grads);
        for (std::size_t i = 0; i < grads.size(); ++i) g[i].features = std::move(grads[i]);
        return l;
      };
      break;
    }
    case Loss::stage2: {
      const auto target = random_map(rng, 3, H, W, 0.0, 1.0);
      std::vector<int> detected;
      for (int k = 0; k < 3; ++k)
        if (rng.bernoulli(0.6)) detected.push_back(k);
      if (detected.empty()) detected.push_back(static_cast<int>(rng.index(3)));
      in.closure = [target, detected](std::span<const ktl::model::ForwardCache<double>> c,
                                      std::span<ktl::model::OutputGrads<double>> g) {
        return ktl::model::stage2_loss<double>(c[0].landmarks, target, detected, &g[0].landmarks);
      };
      break;
    }
  }
  return in;
}

inline double loss_at(const Instance& in, const Network<double>& net) {
  std::vector<ktl::model::ForwardCache<double>> caches;
  for (const auto& x : in.inputs) caches.push_back(ktl::model::forward(net, x));
  std::vector<ktl::model::OutputGrads<double>> outs(caches.size());
  return in.closure(caches, outs);
}

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients with (L(p + h) - L(p - h)) / 2h for every
/// parameter. Relative error uses max(|a|, |n|, 1e-6) as denominator.
inline Result check(const Instance& in, double h = 1e-4) {
  const auto analytic = ktl::model::gradient<double>(in.net, in.inputs, in.closure);
  std::vector<const std::vector<double>*> grads;
  analytic.grads.for_each([&](ktl::model::ParamGroup, const std::vector<double>& v) { grads.push_back(&v); });

  Result r;
  Network<double> probe = in.net;
  std::size_t tensor = 0;
  probe.params.for_each([&](ktl::model::ParamGroup, std::vector<double>& v) {
    const std::vector<double>& a = *grads[tensor++];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = loss_at(in, probe);
      v[i] = saved - h;
      const double down = loss_at(in, probe);
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), 1e-6});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a[i] - numeric) / denom);
      ++r.checked;
    }
  });
  return r;
}

}  // namespace gradcheck
