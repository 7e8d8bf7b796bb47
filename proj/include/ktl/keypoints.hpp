#pragma once

// Initial, unindexed keypoint sets: synthetic noise mixtures, external
// detector files, ANMS thinning and descriptor-density outlier removal.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ktl/common.hpp"
#include "ktl/synth.hpp"

namespace ktl::keypoints {

struct Keypoint {
  Point2 position;  // output-grid coordinates
  double confidence = 1.0;
  std::vector<float> descriptor;  // empty when absent; unit norm otherwise
  std::optional<int> cluster_label;
};

enum class KeypointSource { synthetic_mixture, external_file };

struct KeypointSet {
  int sample_id = 0;
  std::vector<Keypoint> points;
  KeypointSource source = KeypointSource::synthetic_mixture;
};

/// Output grid of a raster: half resolution in each direction.
struct GridSize {
  int h = 32;
  int w = 32;
};

inline GridSize grid_of(const synth::Raster& r) { return {r.h / 2, r.w / 2}; }

/// round(real_ratio * n_points) ground-truth landmarks (without replacement,
/// visible only) jittered uniformly by +-jitter_px raster pixels per axis, the
/// rest uniform over the output grid.
KeypointSet init_mixture(const synth::ImageSample& sample, int n_points, double real_ratio,
                         double jitter_px, std::uint64_t seed);

/// Adaptive non-maximal suppression. Keeps the n_target points with the
/// largest suppression radius (distance to the nearest dominating point);
/// dominance orders by confidence, then by (y, x).
KeypointSet anms_filter(const KeypointSet& set, std::size_t n_target);

/// Drops the drop_fraction of points (corpus-wide) with the largest mean
/// distance to their density_k nearest descriptor neighbours.
std::vector<KeypointSet> outlier_prefilter(const std::vector<KeypointSet>& sets,
                                           std::size_t density_k, double drop_fraction);

/// True when p precedes q in the ANMS dominance order.
bool dominates(const Keypoint& p, const Keypoint& q);

// JSON-lines interchange: {"sample_id", "points": [{"x","y","score","desc"?}]}.
std::vector<KeypointSet> read_keypoint_file(const std::filesystem::path& path);
void write_keypoint_file(const std::filesystem::path& path, const std::vector<KeypointSet>& sets);

}  // namespace ktl::keypoints
