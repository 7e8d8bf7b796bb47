#pragma once

// Desk-scale trainable model: shared (partly dilated) convolutional backbone, single-channel
// detector head, L2-normalised descriptor head and an optional K-channel
// landmark head, together with losses, reverse-mode gradients, RMSprop and
// keypoint extraction.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ktl/common.hpp"
#include "ktl/kernels.hpp"
#include "ktl/keypoints.hpp"

namespace ktl::model {

using kernels::Tensor;

template <typename T>
using Heatmap = Tensor<T>;

struct ModelDims {
  int input_h = 64;
  int input_w = 64;
  int hidden = 32;
  int descriptor_dim = 32;
  int landmarks = 0;  // K; 0 means no landmark head

  int output_h() const { return input_h / 2; }
  int output_w() const { return input_w / 2; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class ParamGroup { backbone, detector, descriptor, landmark };

/// Parameter storage; also used for gradients and optimizer state so all
/// three share one layout. Declaration order is the checkpoint order.
template <typename T>
struct ParamSet {
  std::vector<T> conv1_w, conv1_b;
  std::vector<T> conv2_w, conv2_b;
  std::vector<T> conv3_w, conv3_b;
  std::vector<T> conv4_w, conv4_b;
  std::vector<T> detector_w, detector_b;
  std::vector<T> descriptor_w, descriptor_b;
  std::vector<T> landmark_w, landmark_b;

  template <typename F>
  void for_each(F&& f) {
    f(ParamGroup::backbone, conv1_w); f(ParamGroup::backbone, conv1_b);
    f(ParamGroup::backbone, conv2_w); f(ParamGroup::backbone, conv2_b);
    f(ParamGroup::backbone, conv3_w); f(ParamGroup::backbone, conv3_b);
    f(ParamGroup::backbone, conv4_w); f(ParamGroup::backbone, conv4_b);
    f(ParamGroup::detector, detector_w); f(ParamGroup::detector, detector_b);
    f(ParamGroup::descriptor, descriptor_w); f(ParamGroup::descriptor, descriptor_b);
    f(ParamGroup::landmark, landmark_w); f(ParamGroup::landmark, landmark_b);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ParamSet*>(this)->for_each(
        [&](ParamGroup g, std::vector<T>& v) { f(g, static_cast<const std::vector<T>&>(v)); });
  }

  /// Zero-filled set with the same shapes.
  template <typename U>
  ParamSet<U> zeros_like() const {
    ParamSet<U> out;
    auto src = flatten_shapes();
    std::size_t i = 0;
    out.for_each([&](ParamGroup, std::vector<U>& v) { v.assign(src[i++], U(0)); });
    return out;
  }

  std::vector<std::size_t> flatten_shapes() const {
    std::vector<std::size_t> sizes;
    for_each([&](ParamGroup, const std::vector<T>& v) { sizes.push_back(v.size()); });
    return sizes;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](ParamGroup, const std::vector<T>& v) { n += v.size(); });
    return n;
  }
};

template <typename T>
struct Network {
  ModelDims dims;
  ParamSet<T> params;

  template <typename U>
  Network<U> cast() const;
};

/// The trained artefact: float parameters.
using ModelParams = Network<float>;

/// He-style random initialisation; biases zero.
template <typename T>
Network<T> init_network(const ModelDims& dims, std::uint64_t seed);

/// Adds (or replaces) the K-channel landmark head with a fresh random layer.
template <typename T>
void reset_landmark_head(Network<T>& net, int landmarks, std::uint64_t seed);

/// Intermediate activations kept for the backward pass.
template <typename T>
struct ForwardCache {
  Tensor<T> input;
  Tensor<T> a1, h1, p1, a2, h2, a3, h3, a4, h4;
  Tensor<T> trunk;        // [h2; h4], input of every head
  Tensor<T> detector;     // 1 x Ho x Wo
  Tensor<T> raw_features; // d x Ho x Wo
  Tensor<T> features;     // d x Ho x Wo, unit norm per cell
  Tensor<T> landmarks;    // K x Ho x Wo (empty without landmark head)
};

/// Raster to network input tensor.
template <typename T>
Tensor<T> to_input(const synth::Raster& r);

template <typename T>
ForwardCache<T> forward(const Network<T>& net, const Tensor<T>& input);

/// Gradients of the loss with respect to the network outputs. Empty tensors
/// mean "no gradient through this output".
template <typename T>
struct OutputGrads {
  Tensor<T> detector;
  Tensor<T> features;  // w.r.t. the normalised features
  Tensor<T> landmarks;
};

/// Accumulates parameter gradients for one image into `grads`.
template <typename T>
void backward(const Network<T>& net, const ForwardCache<T>& cache, const OutputGrads<T>& out,
              ParamSet<T>& grads);

/// Loss evaluated on the forward results of a batch. Fills output gradients
/// (pre-sized to match the caches) and returns the scalar loss.
template <typename T>
using LossClosure =
    std::function<double(std::span<const ForwardCache<T>>, std::span<OutputGrads<T>>)>;

template <typename T>
struct GradientResult {
  double loss = 0.0;
  ParamSet<T> grads;
};

/// Reverse-mode gradient of closure(forward(inputs)) with respect to every
/// parameter. Throws InternalError on a non-finite loss.
template <typename T>
GradientResult<T> gradient(const Network<T>& net, std::span<const Tensor<T>> inputs,
                           const LossClosure<T>& closure);

// ---- losses -------------------------------------------------------------

/// Per-cell max over points of exp(-|u - p|^2 / (2 sigma^2)).
template <typename T>
Heatmap<T> render_target(std::span<const Point2> points, double sigma, int grid_h, int grid_w);

/// Mean squared difference. Optionally writes d loss / d predicted.
template <typename T>
double detector_loss(const Heatmap<T>& predicted, const Heatmap<T>& target,
                     Heatmap<T>* grad = nullptr);

struct LocationRef {
  int image = 0;  // index into the per-image feature maps
  Point2 position;
};

struct NegativePair {
  LocationRef a;
  LocationRef b;
  bool same_image = true;
};

struct PairBatch {
  std::vector<std::pair<LocationRef, LocationRef>> positives;
  std::vector<NegativePair> negatives;
  bool empty() const { return positives.empty() && negatives.empty(); }
};

/// Sum of positive squared distances plus hinged negatives, divided by the
/// pair count. grads (optional) must hold one tensor per feature map.
template <typename T>
double contrastive_loss(const PairBatch& batch, std::span<const Tensor<T>* const> feature_maps,
                        double margin, std::span<Tensor<T>> grads = {});

/// Mean over channels in `detected` of the per-channel MSE. Channels outside
/// the detected set receive exactly zero gradient.
template <typename T>
double stage2_loss(const Heatmap<T>& predicted, const Heatmap<T>& target,
                   std::span<const int> detected, Heatmap<T>* grad = nullptr);

/// Bilinear interpolation of a d x H x W map, renormalised to unit length.
template <typename T>
std::vector<double> sample_descriptor(const Tensor<T>& feature_map, Point2 position);

/// Adds the gradient of a sampled descriptor (given d loss / d descriptor)
/// into grad_map.
template <typename T>
void sample_descriptor_backward(const Tensor<T>& feature_map, Point2 position,
                                std::span<const double> grad_descriptor, Tensor<T>& grad_map);

// ---- optimisation -------------------------------------------------------

struct RmsPropConfig {
  double learning_rate = 2e-4;
  double alpha = 0.99;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;
};

struct OptimizerState {
  ParamSet<float> square_avg;
  std::uint64_t steps = 0;
};

OptimizerState init_optimizer(const ModelParams& params);

inline constexpr std::array<ParamGroup, 4> kAllGroups{
    ParamGroup::backbone, ParamGroup::detector, ParamGroup::descriptor, ParamGroup::landmark};

/// RMSprop with decoupled weight decay, applied only to groups in `groups`.
/// Throws InternalError on non-finite gradient entries.
void optimizer_step(ModelParams& params, const ParamSet<float>& grads, OptimizerState& state,
                    const RmsPropConfig& config,
                    std::span<const ParamGroup> groups = kAllGroups);

// ---- extraction ---------------------------------------------------------

/// Strict local maxima over the (2 window + 1)^2 neighbourhood with value >=
/// threshold, strongest first (ties by (y, x)), at most max_points.
template <typename T>
std::vector<keypoints::Keypoint> extract_keypoints(const Heatmap<T>& detector_map,
                                                   double threshold, int window,
                                                   std::size_t max_points);

// ---- persistence --------------------------------------------------------

struct Checkpoint {
  ModelParams model;
  OptimizerState optimizer;
  int round = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws UserError naming the file and round on magic/version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ktl::model
