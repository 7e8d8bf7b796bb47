#include <algorithm>
#include <cmath>
#include <limits>

#include "ktl/eval.hpp"

namespace ktl::eval {

Eigen::VectorXd stack(const Landmarks& pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::VectorXd v(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v(i) = pts[static_cast<std::size_t>(i)].x;
    v(n + i) = pts[static_cast<std::size_t>(i)].y;
  }
  return v;
}

Landmarks unstack(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size() / 2;
  Landmarks pts(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i)] = {v(i), v(n + i)};
  return pts;
}

Landmarks LinearMap::apply(const Landmarks& in) const {
  if (static_cast<int>(in.size()) != in_points) throw UserError("regressor: input point count mismatch");
  return unstack(W * stack(in));
}

LinearMap fit_regressor(std::span<const Landmarks> unsup, std::span<const Landmarks> gt) {
  if (unsup.empty() || unsup.size() != gt.size())
    throw UserError("fit_regressor: need matching, non-empty training sets");
  const auto K = static_cast<Eigen::Index>(unsup[0].size());
  const auto L = static_cast<Eigen::Index>(gt[0].size());
  if (K == 0 || L == 0) throw UserError("fit_regressor: empty landmark lists");
  const auto N = static_cast<Eigen::Index>(unsup.size());
  Eigen::MatrixXd U(2 * K, N), G(2 * L, N);
  for (Eigen::Index j = 0; j < N; ++j) {
    const auto& u = unsup[static_cast<std::size_t>(j)];
    const auto& g = gt[static_cast<std::size_t>(j)];
    if (static_cast<Eigen::Index>(u.size()) != K || static_cast<Eigen::Index>(g.size()) != L)
      throw UserError("fit_regressor: inconsistent landmark counts");
    U.col(j) = stack(u);
    G.col(j) = stack(g);
  }
  if (!U.allFinite() || !G.allFinite()) throw UserError("fit_regressor: missing or non-finite entries");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(U, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? 1e-10 * s(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  const Eigen::MatrixXd pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  LinearMap m;
  m.in_points = static_cast<int>(K);
  m.out_points = static_cast<int>(L);
  m.W = G * pinv;
  return m;
}

double nme(const Landmarks& predicted, const Landmarks& gt, double normalizer) {
  if (!(normalizer > 0.0) || !std::isfinite(normalizer)) throw UserError("nme: normalizer must be positive");
  if (predicted.size() != gt.size() || gt.empty()) throw UserError("nme: point counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) s += distance(predicted[i], gt[i]);
  return 100.0 * s / static_cast<double>(gt.size()) / normalizer;
}

const char* to_string(NormalizerKind k) {
  switch (k) {
    case NormalizerKind::interocular: return "interocular";
    case NormalizerKind::bbox_sqrt_area: return "bbox_sqrt_area";
    case NormalizerKind::custom: return "custom";
  }
  return "custom";
}

NormalizerKind normalizer_from_string(const std::string& s) {
  if (s == "interocular") return NormalizerKind::interocular;
  if (s == "bbox_sqrt_area") return NormalizerKind::bbox_sqrt_area;
  if (s == "custom") return NormalizerKind::custom;
  throw UserError("unknown normalizer '" + s + "' (interocular, bbox_sqrt_area, custom)");
}

double interocular(const Landmarks& gt, std::array<int, 2> eye_pair) {
  const auto a = static_cast<std::size_t>(eye_pair[0]), b = static_cast<std::size_t>(eye_pair[1]);
  if (a >= gt.size() || b >= gt.size()) throw UserError("interocular: eye index out of range");
  return distance(gt[a], gt[b]);
}

double bbox_sqrt_area(const Landmarks& gt) {
  if (gt.empty()) throw UserError("bbox_sqrt_area: no points");
  double x0 = gt[0].x, x1 = gt[0].x, y0 = gt[0].y, y1 = gt[0].y;
  for (const Point2& p : gt) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return std::sqrt((x1 - x0) * (y1 - y0));
}

std::vector<CedPoint> ced_curve(std::vector<double> errors, int samples) {
  if (errors.empty() || samples < 2) throw UserError("ced_curve: need errors and >= 2 samples");
  std::sort(errors.begin(), errors.end());
  const double max_err = errors.back();
  std::vector<CedPoint> out;
  for (int i = 0; i < samples; ++i) {
    const double t = i + 1 == samples ? max_err : max_err * i / (samples - 1);
    const auto count = std::upper_bound(errors.begin(), errors.end(), t) - errors.begin();
    out.push_back({t, static_cast<double>(count) / static_cast<double>(errors.size())});
  }
  return out;
}

namespace {

std::vector<Landmarks> gather(const std::vector<Landmarks>& all, const std::vector<int>& idx) {
  std::vector<Landmarks> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(all.at(static_cast<std::size_t>(i)));
  return out;
}

// Square cost padded with zeros; returns assignment of the first `rows` rows.
std::vector<int> padded_assignment(const std::vector<std::vector<double>>& cost, int rows, int cols) {
  const int n = std::max(rows, cols);
  std::vector<double> c(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      c[static_cast<std::size_t>(i) * n + j] = cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  const std::vector<int> a = hungarian(c, n);
  std::vector<int> out(static_cast<std::size_t>(rows), -1);
  for (int i = 0; i < rows; ++i)
    if (a[static_cast<std::size_t>(i)] < cols) out[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace

EvalReport forward_backward_eval(const EvalInputs& in, int ced_samples, double accuracy_threshold) {
  if (in.train.empty() || in.test.empty()) throw UserError("eval: empty train or test split");
  std::vector<char> used(in.unsup.size(), 0);
  for (int i : in.train) used.at(static_cast<std::size_t>(i)) = 1;
  for (int i : in.test)
    if (used.at(static_cast<std::size_t>(i))) throw UserError("eval: train and test splits overlap");
  if (in.gt.size() != in.unsup.size() || in.normalizer.size() != in.unsup.size())
    throw UserError("eval: per-image inputs differ in length");

  const auto u_train = gather(in.unsup, in.train), g_train = gather(in.gt, in.train);
  const LinearMap fwd = fit_regressor(u_train, g_train);
  const LinearMap bwd = fit_regressor(g_train, u_train);

  EvalReport r;
  r.normalizer_kind = in.normalizer_kind;
  r.n_train = static_cast<int>(in.train.size());
  r.n_test = static_cast<int>(in.test.size());
  r.accuracy_threshold = accuracy_threshold;
  const std::size_t L = in.gt[0].size(), K = in.unsup[0].size();
  r.per_landmark_accuracy.assign(L, 0.0);
  r.per_landmark_error.assign(L, 0.0);
  std::vector<double> errors;
  double f_sum = 0.0, b_sum = 0.0;
  for (int j : in.test) {
    const auto ju = static_cast<std::size_t>(j);
    const double norm = in.normalizer[ju];
    const Landmarks pred = fwd.apply(in.unsup[ju]);
    f_sum += nme(pred, in.gt[ju], norm);
    b_sum += nme(bwd.apply(in.gt[ju]), in.unsup[ju], norm);
    for (std::size_t l = 0; l < L; ++l) {
      const double e = 100.0 * distance(pred[l], in.gt[ju][l]) / norm;
      errors.push_back(e);
      r.per_landmark_error[l] += e;
      if (e <= accuracy_threshold) r.per_landmark_accuracy[l] += 1.0;
    }
  }
  const double nt = static_cast<double>(in.test.size());
  r.forward_nme = f_sum / nt;
  r.backward_nme = b_sum / nt;
  for (std::size_t l = 0; l < L; ++l) {
    r.per_landmark_accuracy[l] /= nt;
    r.per_landmark_error[l] /= nt;
  }
  r.ced = ced_curve(std::move(errors), ced_samples);

  std::vector<std::vector<double>> cost(K, std::vector<double>(L, 0.0));
  for (int j : in.train)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t l = 0; l < L; ++l)
        cost[k][l] += distance(in.unsup[static_cast<std::size_t>(j)][k], in.gt[static_cast<std::size_t>(j)][l]) /
                      static_cast<double>(in.train.size());
  r.matching = padded_assignment(cost, static_cast<int>(K), static_cast<int>(L));
  return r;
}

// ---- SVT --------------------------------------------------------------------

SvtResult svt_complete(const Eigen::MatrixXd& M, const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& obs,
                       const SvtConfig& cfg) {
  if (M.rows() != obs.rows() || M.cols() != obs.cols()) throw UserError("svt: mask shape mismatch");
  if (M.size() == 0) throw UserError("svt: empty matrix");
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    if (!obs.row(i).any()) throw UserError("svt: row " + std::to_string(i) + " has no observed entry");
  for (Eigen::Index j = 0; j < M.cols(); ++j)
    if (!obs.col(j).any()) throw UserError("svt: column " + std::to_string(j) + " has no observed entry");
  if (!(cfg.step > 0.0)) throw UserError("svt: step must be positive");

  const Eigen::MatrixXd P = obs.cast<double>();
  const Eigen::MatrixXd PM = M.cwiseProduct(P);
  if (!PM.allFinite()) throw UserError("svt: non-finite observed entry");
  SvtResult r;
  if (obs.all()) {
    r.completed = M;
    return r;
  }
  const double tau = cfg.tau.value_or(5.0 * std::sqrt(static_cast<double>(M.rows() * M.cols())));
  // Threshold is in units of the RMS observed entry.
  const double rms = std::sqrt(PM.squaredNorm() / static_cast<double>(obs.count()));
  const double scale = rms > 0.0 ? rms : 1.0;
  const Eigen::MatrixXd Ms = M.cwiseProduct(P) / scale;
  const double pm_norm = Ms.norm();
  Eigen::BDCSVD<Eigen::MatrixXd> probe(Ms);
  const double spec = probe.singularValues()(0);
  const double k0 = spec > 0.0 ? std::ceil(tau / (cfg.step * spec)) : 0.0;
  Eigen::MatrixXd Y = k0 * cfg.step * Ms;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(M.rows(), M.cols());
  for (int it = 0; it < cfg.max_iters; ++it) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd s = (svd.singularValues().array() - tau).max(0.0);
    X = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    const Eigen::MatrixXd R = Ms - X.cwiseProduct(P);
    r.iterations = it + 1;
    r.residual = pm_norm > 0.0 ? R.norm() / pm_norm : R.norm();
    if (r.residual <= cfg.tolerance) break;
    Y += cfg.step * R;
  }
  r.completed = X * scale;
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      if (obs(i, j)) r.completed(i, j) = M(i, j);
  return r;
}

LandmarkMatrix svt_complete(const LandmarkMatrix& m, const SvtConfig& cfg) {
  const Eigen::Index K = m.rows, N = m.images;
  Eigen::MatrixXd V(2 * K, N);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> obs(2 * K, N);
  for (int r = 0; r < m.rows; ++r)
    for (int j = 0; j < m.images; ++j) {
      const bool has = m.has(r, j);
      V(r, j) = has ? m.at(r, j).x : 0.0;
      V(K + r, j) = has ? m.at(r, j).y : 0.0;
      obs(r, j) = obs(K + r, j) = has;
    }
  const SvtResult res = svt_complete(V, obs, cfg);
  LandmarkMatrix out = m;
  for (int r = 0; r < m.rows; ++r)
    for (int j = 0; j < m.images; ++j) {
      if (m.has(r, j)) continue;
      out.at(r, j) = {res.completed(r, j), res.completed(K + r, j)};
      out.present[static_cast<std::size_t>(r) * m.images + j] = 1;
    }
  return out;
}

std::vector<Point2> row_means(const LandmarkMatrix& m) {
  std::vector<Point2> means(static_cast<std::size_t>(m.rows));
  for (int r = 0; r < m.rows; ++r) {
    Point2 s;
    int n = 0;
    for (int j = 0; j < m.images; ++j)
      if (m.has(r, j)) {
        s = s + m.at(r, j);
        ++n;
      }
    if (n == 0) throw UserError("row_means: landmark row " + std::to_string(r) + " never observed");
    means[static_cast<std::size_t>(r)] = (1.0 / n) * s;
  }
  return means;
}

LandmarkMatrix fill_with_means(const LandmarkMatrix& m, const std::vector<Point2>& means) {
  LandmarkMatrix out = m;
  for (int r = 0; r < m.rows; ++r)
    for (int j = 0; j < m.images; ++j)
      if (!m.has(r, j)) {
        out.at(r, j) = means.at(static_cast<std::size_t>(r));
        out.present[static_cast<std::size_t>(r) * m.images + j] = 1;
      }
  return out;
}

// ---- raw metrics --------------------------------------------------------------

RawMetrics raw_landmark_metrics(std::span<const Landmarks> unsup, std::span<const Landmarks> gt,
                                std::span<const int> match_split, std::span<const int> test_split,
                                std::span<const double> thresholds, double precision_radius) {
  if (unsup.size() != gt.size() || unsup.empty()) throw UserError("raw metrics: input sizes differ");
  if (match_split.empty() || test_split.empty()) throw UserError("raw metrics: empty split");
  const std::size_t L = gt[0].size(), K = unsup[0].size();
  auto finite = [](Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); };

  std::vector<std::vector<double>> cost(L, std::vector<double>(K, 0.0));
  std::vector<std::vector<int>> counts(L, std::vector<int>(K, 0));
  for (int j : match_split) {
    const auto& u = unsup[static_cast<std::size_t>(j)];
    const auto& g = gt[static_cast<std::size_t>(j)];
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t k = 0; k < K; ++k)
        if (finite(u[k])) {
          cost[l][k] += distance(u[k], g[l]);
          ++counts[l][k];
        }
  }
  double worst = 0.0;
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t k = 0; k < K; ++k)
      if (counts[l][k] > 0) {
        cost[l][k] /= counts[l][k];
        worst = std::max(worst, cost[l][k]);
      }
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t k = 0; k < K; ++k)
      if (counts[l][k] == 0) cost[l][k] = 10.0 * worst + 1.0;

  RawMetrics r;
  r.matching = padded_assignment(cost, static_cast<int>(L), static_cast<int>(K));
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  r.precision_radius = precision_radius;
  r.accuracy.assign(L, std::vector<double>(thresholds.size(), 0.0));
  const double nt = static_cast<double>(test_split.size());
  std::size_t n_points = 0, n_close = 0;
  for (int j : test_split) {
    const auto& u = unsup[static_cast<std::size_t>(j)];
    const auto& g = gt[static_cast<std::size_t>(j)];
    for (std::size_t l = 0; l < L; ++l) {
      const int k = r.matching[l];
      if (k < 0 || !finite(u[static_cast<std::size_t>(k)])) continue;
      const double e = distance(u[static_cast<std::size_t>(k)], g[l]);
      for (std::size_t t = 0; t < thresholds.size(); ++t)
        if (e <= thresholds[t]) r.accuracy[l][t] += 1.0 / nt;
    }
    for (const Point2& p : u) {
      if (!finite(p)) continue;
      ++n_points;
      for (const Point2& q : g)
        if (distance(p, q) <= precision_radius) {
          ++n_close;
          break;
        }
    }
  }
  r.precision = n_points > 0 ? static_cast<double>(n_close) / static_cast<double>(n_points) : 0.0;
  r.pck.assign(thresholds.size(), 0.0);
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    for (std::size_t l = 0; l < L; ++l) r.pck[t] += r.accuracy[l][t];
    if (L > 0) r.pck[t] /= static_cast<double>(L);
  }
  return r;
}

}  // namespace ktl::eval
