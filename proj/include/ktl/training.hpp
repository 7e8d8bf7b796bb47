#pragma once

// Bootstrapping, the alternating Stage-1 self-training loop, pair mining and
// Stage-2 detector training and inference.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ktl/correspondence.hpp"
#include "ktl/keypoints.hpp"
#include "ktl/model.hpp"
#include "ktl/synth.hpp"

namespace ktl::training {

enum class NegativeStrategy { same_image, different_cluster };
enum class PositiveSource { clustering, equivariance };

const char* to_string(NegativeStrategy s);
const char* to_string(PositiveSource s);
NegativeStrategy negative_strategy_from_string(const std::string& s);
PositiveSource positive_source_from_string(const std::string& s);

struct TrainConfig {
  // Losses and optimiser.
  double margin = 0.8;
  double lambda = 0.1;
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  int batch_size = 16;
  bool two_step = false;  // separate L_d and L_f updates per batch

  // Schedule.
  int warmup_iters = 2000;
  int recluster_every = 500;
  int rounds = 20;
  int stage2_iters = 2000;

  // Clustering.
  int K = 15;
  int M = 100;
  int kmeans_max_iters = 100;
  bool flip_augmentation = false;

  // Pair mining.
  int positives_per_pair = 32;
  int negatives_per_image = 32;
  double r_min = 4.0;
  double transform_probability = 0.5;
  double transform_strength = 0.5;
  NegativeStrategy negatives = NegativeStrategy::same_image;
  PositiveSource positives = PositiveSource::clustering;

  // Detector targets and extraction.
  double sigma = 1.0;
  double nms_threshold = 0.25;
  int nms_window = 2;
  int max_points_per_image = 30;

  // Initial keypoint filtering.
  int outlier_density_k = 10;
  double outlier_drop_fraction = 0.05;

  // Model.
  int hidden = 32;
  int descriptor_dim = 32;

  std::uint64_t seed = 1;

  /// Throws UserError naming the first invalid field.
  void validate() const;
};

struct RoundMetrics {
  int round = 0;
  double detector_loss = 0.0;     // mean L_d over the round's steps
  double descriptor_loss = 0.0;   // mean L_f
  double points_per_image = 0.0;  // after re-clustering
  std::vector<int> cluster_sizes;
  int negatives_checked = 0;
  double wall_seconds = 0.0;
};

struct TrainingState {
  model::ModelParams params;
  model::OptimizerState optimizer;
  int round = 0;
  correspondence::PseudoLabelSet labels;
  std::optional<correspondence::PseudoLabelSet> flipped_labels;
  std::vector<RoundMetrics> metrics_log;
  double warmup_loss = 0.0;
};

/// Optional observer for every pair batch used in an optimiser step.
using PairHook = std::function<void(const model::PairBatch&, std::span<const int> sample_ids)>;

/// Training images only; keypoints[i] belongs to corpus.samples[train[i]].
struct TrainingData {
  const synth::Corpus* corpus = nullptr;
  std::vector<int> train;  // indices into corpus->samples
  std::vector<keypoints::KeypointSet> initial;
};

TrainingData make_training_data(const synth::Corpus& corpus,
                                std::vector<keypoints::KeypointSet> initial);

/// Fresh parameters and optimiser for the configured dimensions.
TrainingState init_state(const TrainConfig& config, int image_h, int image_w);

/// Equivariance warm-up of backbone and descriptor head, then round-0 labels.
TrainingState warmup(const TrainingData& data, const TrainConfig& config,
                     const PairHook& hook = {});

/// Grid-coordinate image of point p under g for a raster of the given size.
Point2 warp_grid_point(Point2 p, const synth::GeometricTransform& g, int image_size);
Point2 mirror_grid_point(Point2 p, int grid_w);

struct ImageLabels {
  int image = 0;  // index into the batch's feature maps
  int sample_id = 0;
  const correspondence::LabelledImage* labels = nullptr;
  bool mirrored = false;
};

/// Pair batch for images a and b. When `warped` is set, it holds the index
/// of a's deformed copy and g maps a's grid coordinates onto it.
model::PairBatch mine_pairs(const ImageLabels& a, const ImageLabels& b,
                            std::optional<std::pair<int, const synth::GeometricTransform*>> warped,
                            int grid_h, int grid_w, int image_size, const TrainConfig& config,
                            Rng& rng);

/// Inner optimisation steps followed by re-extraction and re-clustering.
void stage1_round(TrainingState& state, const TrainingData& data, const TrainConfig& config,
                  const PairHook& hook = {});

/// Keypoints (with descriptors) of the frozen model on the given samples.
std::vector<keypoints::KeypointSet> extract_all(const model::ModelParams& params,
                                                const synth::Corpus& corpus,
                                                const std::vector<int>& indices,
                                                const TrainConfig& config);

/// Descriptors sampled at fixed positions (labels) with the given model.
std::vector<keypoints::KeypointSet> describe(const model::ModelParams& params,
                                             const synth::Corpus& corpus,
                                             const std::vector<int>& indices,
                                             const std::vector<keypoints::KeypointSet>& sets,
                                             bool mirrored);

/// Mirrored counterparts: features of the flipped raster at mirrored positions.
std::vector<keypoints::KeypointSet> mirrored_sets(const model::ModelParams& params,
                                                  const synth::Corpus& corpus,
                                                  const std::vector<int>& indices,
                                                  const std::vector<keypoints::KeypointSet>& sets);

/// Observer called after warm-up and after every round (for persistence).
using RoundCallback = std::function<void(const TrainingState&)>;

TrainingState run_stage1(const TrainingData& data, const TrainConfig& config,
                         const RoundCallback& on_round = {}, const PairHook& hook = {});

/// Continues an existing state up to config.rounds.
void continue_stage1(TrainingState& state, const TrainingData& data, const TrainConfig& config,
                     const RoundCallback& on_round = {}, const PairHook& hook = {});

/// Final K-way clustering of the Stage-1 points (described by the Stage-1
/// model) and the resulting landmark symmetry map.
struct FinalLabels {
  correspondence::PseudoLabelSet labels;
  correspondence::PseudoLabelSet flipped;  // same points, mirrored frame
  correspondence::SymmetryMap symmetry;
};

FinalLabels final_labels(const model::ModelParams& params, const correspondence::PseudoLabelSet& stage1,
                         const TrainingData& data, const TrainConfig& config);

struct Stage2Model {
  model::ModelParams params;  // with a K-channel landmark head
  std::vector<int> symmetry;  // landmark -> mirrored landmark
  std::vector<char> symmetry_confident;
  correspondence::PseudoLabelSet labels;  // final K-way labels on the training images
  double final_loss = 0.0;
  int skipped_images = 0;
};

/// Final K-way clustering of the Stage-1 keypoints, then heatmap regression
/// of a fresh K-channel head on the Stage-1 backbone.
Stage2Model run_stage2(const TrainingState& stage1, const TrainingData& data,
                       const TrainConfig& config);

struct Landmark {
  Point2 position;  // grid coordinates
  double confidence = 0.0;
};

/// Per-channel argmax of the landmark head (ties to the lowest cell index).
/// With test_flip, each channel is averaged with the mirrored map of its
/// symmetric channel on the flipped raster.
std::vector<Landmark> infer(const model::ModelParams& params, const synth::Raster& raster,
                            bool test_flip, std::span<const int> symmetry = {});

}  // namespace ktl::training
