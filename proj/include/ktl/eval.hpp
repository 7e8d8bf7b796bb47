#pragma once

// Evaluation protocol: bias-free linear regression between discovered and
// annotated landmarks, forward/backward NME, CED curves, raw-landmark
// metrics and SVT matrix completion.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ktl/common.hpp"
#include "ktl/hungarian.hpp"

namespace ktl::eval {

using Landmarks = std::vector<Point2>;

/// Bias-free map between stacked coordinate vectors [x_0..x_{n-1}, y_0..y_{n-1}].
struct LinearMap {
  int in_points = 0;
  int out_points = 0;
  Eigen::MatrixXd W;  // (2 out) x (2 in)

  Landmarks apply(const Landmarks& in) const;
};

Eigen::VectorXd stack(const Landmarks& pts);
Landmarks unstack(const Eigen::VectorXd& v);

/// Least squares gt ~ W unsup over the given images, via an SVD
/// pseudo-inverse with cutoff 1e-10 sigma_max (minimum-norm on rank deficiency).
LinearMap fit_regressor(std::span<const Landmarks> unsup, std::span<const Landmarks> gt);

/// Mean Euclidean error over points divided by normalizer, times 100.
double nme(const Landmarks& predicted, const Landmarks& gt, double normalizer);

enum class NormalizerKind { interocular, bbox_sqrt_area, custom };
const char* to_string(NormalizerKind k);
NormalizerKind normalizer_from_string(const std::string& s);

double interocular(const Landmarks& gt, std::array<int, 2> eye_pair);
double bbox_sqrt_area(const Landmarks& gt);

struct CedPoint {
  double threshold = 0.0;  // NME %, per landmark
  double fraction = 0.0;
};

struct EvalReport {
  double forward_nme = 0.0;
  double backward_nme = 0.0;
  std::vector<CedPoint> ced;
  std::vector<double> per_landmark_accuracy;  // fraction of test images within accuracy_threshold
  std::vector<double> per_landmark_error;     // mean normalised error %, per gt landmark
  double accuracy_threshold = 10.0;           // % of the normalizer
  std::vector<int> matching;                  // unsup index -> gt index, -1 unmatched
  NormalizerKind normalizer_kind = NormalizerKind::interocular;
  int n_train = 0;
  int n_test = 0;
};

struct EvalInputs {
  std::vector<Landmarks> unsup;       // per image, K points, complete
  std::vector<Landmarks> gt;          // per image, L points
  std::vector<double> normalizer;     // per image
  std::vector<int> train;             // image indices used to fit the regressors
  std::vector<int> test;              // disjoint from train
  NormalizerKind normalizer_kind = NormalizerKind::interocular;
};

EvalReport forward_backward_eval(const EvalInputs& in, int ced_samples = 101,
                                 double accuracy_threshold = 10.0);

/// Sorted-error CED over the given per-landmark errors, thresholds evenly
/// spaced on [0, max error].
std::vector<CedPoint> ced_curve(std::vector<double> errors, int samples);

// ---- matrix completion ---------------------------------------------------

struct SvtConfig {
  std::optional<double> tau;  // default 5 sqrt(rows * cols)
  double step = 1.2;
  int max_iters = 500;
  double tolerance = 1e-7;  // relative residual on observed entries
};

struct SvtResult {
  Eigen::MatrixXd completed;
  int iterations = 0;
  double residual = 0.0;
};

/// Singular value thresholding. Observed entries are copied back verbatim on
/// return. Throws UserError for empty rows or columns.
SvtResult svt_complete(const Eigen::MatrixXd& values, const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& observed,
                       const SvtConfig& config = {});

/// K x N landmark matrix with per-(row, image) missing mask, completed by
/// SVT on the stacked (2K) x N coordinate matrix.
struct LandmarkMatrix {
  int rows = 0;
  int images = 0;
  std::vector<Point2> values;  // rows x images, row-major
  std::vector<char> present;

  Point2& at(int r, int j) { return values[static_cast<std::size_t>(r) * images + j]; }
  const Point2& at(int r, int j) const { return values[static_cast<std::size_t>(r) * images + j]; }
  bool has(int r, int j) const { return present[static_cast<std::size_t>(r) * images + j] != 0; }
};

LandmarkMatrix svt_complete(const LandmarkMatrix& m, const SvtConfig& config = {});

/// Fills missing entries with the given per-row means.
LandmarkMatrix fill_with_means(const LandmarkMatrix& m, const std::vector<Point2>& row_means);
std::vector<Point2> row_means(const LandmarkMatrix& m);

// ---- raw landmark metrics --------------------------------------------------

struct RawMetrics {
  std::vector<int> matching;                   // gt index -> unsup index, -1 unmatched
  std::vector<double> thresholds;              // pixels
  std::vector<std::vector<double>> accuracy;   // [gt][threshold]
  std::vector<double> pck;                     // mean accuracy over gt points per threshold
  double precision = 0.0;
  double precision_radius = 0.0;
};

/// Hungarian matching on mean distance over `match_split`; accuracy and
/// precision measured over `test_split`. unsup entries may be non-finite to
/// mark missing points.
RawMetrics raw_landmark_metrics(std::span<const Landmarks> unsup, std::span<const Landmarks> gt,
                                std::span<const int> match_split, std::span<const int> test_split,
                                std::span<const double> thresholds, double precision_radius);

// ---- output ---------------------------------------------------------------

struct CedSeries {
  std::string name;
  std::vector<CedPoint> points;
};

/// Standalone SVG with axes, one polyline per series and a legend.
std::string plot_ced(std::span<const CedSeries> series, const std::string& title = "CED");

struct LinePlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Generic line plot used by sweeps.
std::string plot_lines(std::span<const LinePlotSeries> series, const std::string& title,
                       const std::string& x_label, const std::string& y_label);

}  // namespace ktl::eval
