#pragma once

// Correspondence recovery: constrained K-means over keypoint descriptors,
// per-image duplicate removal, flip-aware labelling and cluster symmetry.

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "ktl/common.hpp"
#include "ktl/keypoints.hpp"

namespace ktl::correspondence {

struct CentroidSet {
  int M = 0;
  int d = 0;
  std::vector<double> centroids;       // M x d row-major
  int iteration_count = 0;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after seeding, then after each Lloyd iteration

  std::span<const double> row(int m) const {
    return {centroids.data() + static_cast<std::size_t>(m) * d, static_cast<std::size_t>(d)};
  }
};

struct KMeansResult {
  CentroidSet centroids;
  std::vector<int> labels;
  std::vector<double> sq_dist;  // squared distance of each feature to its centroid
};

/// Lloyd's algorithm with k-means++ seeding on n x d row-major features.
/// Empty clusters are re-seeded from the farthest features. Each run stops
/// after max_iters, on unchanged assignments, or when inertia would increase.
/// The lowest-inertia run of `restarts` seedings is returned (first on ties).
KMeansResult kmeans(std::span<const double> features, std::size_t d, int M, std::uint64_t seed,
                    int max_iters = 100, int restarts = 10);

/// For each (group, label) keeps the member with the smallest sq_dist (lower
/// index on ties). Returns a keep mask.
std::vector<char> dedupe_per_image(std::span<const int> group, std::span<const int> labels,
                                   std::span<const double> sq_dist);

struct LabelledPoint {
  Point2 position;
  int label = 0;
  int source_index = 0;  // index into the originating KeypointSet
  std::vector<float> descriptor;
};

struct LabelledImage {
  int sample_id = 0;
  std::vector<LabelledPoint> points;
};

struct PseudoLabelSet {
  int round = 0;
  int M = 0;
  std::vector<LabelledImage> images;  // one per input set, input order
  CentroidSet centroids;

  const LabelledImage* find(int sample_id) const;
  double points_per_image() const;
};

/// Two-pass clustering: M = K with dedupe as a duplicate filter, then M
/// clusters on the survivors with dedupe. Every set needs descriptors.
PseudoLabelSet recover_correspondence(const std::vector<keypoints::KeypointSet>& sets, int K,
                                      int M, std::uint64_t seed, int max_iters = 100);

/// Shared clustering over original and mirrored features with per-side
/// dedupe. flipped[i] must hold the features of sets[i] at mirrored positions,
/// in the same point order.
std::pair<PseudoLabelSet, PseudoLabelSet> flip_labels(
    const std::vector<keypoints::KeypointSet>& original,
    const std::vector<keypoints::KeypointSet>& flipped, int K, int M, std::uint64_t seed,
    int max_iters = 100);

struct SymmetryMap {
  std::vector<int> map;                      // cluster -> mirrored cluster
  std::vector<std::int64_t> support;         // co-occurrence count behind map[c]
  std::vector<char> confident;
  std::vector<std::vector<std::int64_t>> co_occurrence;
};

/// Optimal assignment over the co-occurrence of (original label, label of the
/// same point in the flipped set). Clusters that never co-occur map to
/// themselves; entries with support < min_support are flagged low-confidence.
SymmetryMap cluster_symmetry_map(const PseudoLabelSet& original, const PseudoLabelSet& flipped,
                                 std::int64_t min_support = 1);

/// Single K-means with M = K plus dedupe; labels are landmark indices.
PseudoLabelSet final_k_clustering(const std::vector<keypoints::KeypointSet>& sets, int K,
                                  std::uint64_t seed, int max_iters = 100);

/// As final_k_clustering, over the union of original and mirrored features.
std::pair<PseudoLabelSet, PseudoLabelSet> final_k_flip_clustering(
    const std::vector<keypoints::KeypointSet>& original,
    const std::vector<keypoints::KeypointSet>& flipped, int K, std::uint64_t seed,
    int max_iters = 100);

/// Nearest-centroid labels for new features plus per-image dedupe.
PseudoLabelSet assign_to_centroids(const std::vector<keypoints::KeypointSet>& sets,
                                   const CentroidSet& centroids);

/// Labelled points back to keypoint sets (descriptor and label attached).
std::vector<keypoints::KeypointSet> to_keypoint_sets(const PseudoLabelSet& labels);

void write_labels(const std::filesystem::path& path, const PseudoLabelSet& labels);
/// Reads positions and labels; descriptors are not stored.
PseudoLabelSet read_labels(const std::filesystem::path& path, int M);

}  // namespace ktl::correspondence
