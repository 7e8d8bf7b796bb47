#pragma once

// Synthetic corpus of deformable, bilaterally symmetric objects with hidden
// ground-truth landmarks.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ktl/common.hpp"

namespace ktl::synth {

/// Grayscale image, row-major, values in [0, 1].
struct Raster {
  int h = 0;
  int w = 0;
  std::vector<float> values;

  Raster() = default;
  Raster(int height, int width, float fill = 0.0f)
      : h(height), w(width), values(static_cast<std::size_t>(height) * width, fill) {}
  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * w + x]; }
  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }
  friend bool operator==(const Raster&, const Raster&) = default;
};

struct ObjectTemplate {
  int template_id = 0;
  std::vector<Point2> canonical_landmarks;  // normalized [0,1]^2
  std::vector<int> symmetry_map;            // involution over landmark indices
  std::uint64_t appearance_seed = 0;
  std::array<int, 2> eye_pair{0, 1};  // landmarks used for the interocular normalizer
};

enum class TransformKind { affine, elastic };

/// Smooth radial displacement used by the elastic transform kind.
struct ElasticBump {
  Point2 centre;
  Point2 displacement;
  double radius = 0.2;
};

/// Maps normalized coordinates (pixel / (size - 1)). Applied in the order:
/// optional mirror x -> 1 - x, affine about the image centre, elastic bumps.
struct GeometricTransform {
  TransformKind kind = TransformKind::affine;
  double rotation = 0.0;  // radians
  double scale_x = 1.0;
  double scale_y = 1.0;
  double shear = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  bool flip = false;
  std::vector<ElasticBump> bumps;

  static GeometricTransform identity() { return {}; }
  static GeometricTransform mirror() {
    GeometricTransform g;
    g.flip = true;
    return g;
  }

  bool is_identity() const;
  bool is_pure_flip() const;
  /// Throws UserError when the parameters do not define an invertible map.
  void validate() const;

  Point2 apply(Point2 p) const;
  Point2 inverse(Point2 q) const;

  friend bool operator==(const GeometricTransform&, const GeometricTransform&);
};

/// 2x3 affine matrix [a b tx; c d ty] acting on normalized coordinates.
struct AffineMatrix {
  double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;
  Point2 apply(Point2 p) const { return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty}; }
};

/// Matrix of the flip+affine part of g (elastic bumps ignored).
AffineMatrix to_matrix(const GeometricTransform& g);
/// Decomposes a non-singular matrix back into transform parameters.
GeometricTransform from_matrix(const AffineMatrix& m);
/// second(first(p)); both must be affine.
GeometricTransform compose(const GeometricTransform& second, const GeometricTransform& first);

struct ImageSample {
  int sample_id = 0;
  int template_id = 0;
  bool is_test = false;
  Raster raster;
  std::vector<Point2> gt_landmarks;  // raster pixel coordinates
  std::vector<bool> visible;
  std::vector<int> symmetry_map;
  std::vector<GeometricTransform> applied_transforms;  // canonical -> image, in order
  std::array<int, 2> eye_pair{0, 1};
};

struct SynthConfig {
  int n_images = 1000;
  int template_pool = 4;
  int image_size = 64;
  double deform_strength = 0.5;
  std::uint64_t seed = 1;
  int landmarks = 15;
  double distractor_fraction = 0.2;
  double max_rotation = 0.5236;  // radians at full strength
  double flip_probability = 0.0;
  bool elastic = true;
  double test_fraction = 0.2;
  std::uint64_t category_seed = 12345;  // fixes the landmark motif set
};

struct Corpus {
  SynthConfig config;
  std::vector<ObjectTemplate> templates;
  std::vector<ImageSample> samples;

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
};

std::vector<ObjectTemplate> make_templates(const SynthConfig& config);

/// Draws a random transform at the given strength. Rotation range scales with
/// max_rotation; flips are drawn with flip_probability.
GeometricTransform random_transform(Rng& rng, double strength, double max_rotation,
                                    double flip_probability, bool elastic);

Corpus generate_corpus(const SynthConfig& config);

/// Convenience overload mirroring the primary signature.
Corpus generate_corpus(int n_images, int template_pool, int image_size, double deform_strength,
                       std::uint64_t seed);

/// Exact analytic map of normalized points.
std::vector<Point2> transform_points(std::span<const Point2> points, const GeometricTransform& g);

/// Same map for raster pixel coordinates of a size x size image.
std::vector<Point2> transform_pixels(std::span<const Point2> points, const GeometricTransform& g,
                                     int size);

/// Warps the raster and landmarks by g. Mirroring re-indexes landmarks through
/// the symmetry map so index i keeps its semantic identity.
ImageSample apply_transform(const ImageSample& sample, const GeometricTransform& g);

/// Bilinear raster sample at pixel coordinates; `outside` beyond the borders.
float sample_bilinear(const Raster& r, double x, double y, float outside = 0.0f);

/// Landmark coordinates are kept on a 2^-24 pixel lattice so mirroring is exact.
double quantize_coordinate(double v);

// Persistence: directory with corpus.json and rasters/<id>.ldr.
void write_raster(const std::filesystem::path& path, const Raster& r);
Raster read_raster(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir, bool force);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace ktl::synth
