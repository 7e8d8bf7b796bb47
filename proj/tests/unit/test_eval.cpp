#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "ktl/eval.hpp"
#include "test_util.hpp"

using namespace ktl;
using namespace ktl::eval;

namespace {

Landmarks random_landmarks(Rng& rng, int n, double lo = 0, double hi = 64) {
  Landmarks out;
  for (int i = 0; i < n; ++i) out.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
  return out;
}

// Brute-force assignment; next_permutation visits in lexicographic order and
// only a strictly smaller cost replaces the incumbent.
std::vector<int> brute_assignment(const std::vector<double>& cost, int n) {
  std::vector<int> p(static_cast<std::size_t>(n)), best;
  std::iota(p.begin(), p.end(), 0);
  double best_cost = 1e300;
  do {
    double c = 0;
    for (int r = 0; r < n; ++r) c += cost[static_cast<std::size_t>(r * n + p[static_cast<std::size_t>(r)])];
    if (c < best_cost) best_cost = c, best = p;
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

Eigen::MatrixXd design(std::span<const Landmarks> pts) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pts.size()), 2 * static_cast<Eigen::Index>(pts[0].size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = stack(pts[i]).transpose();
  return m;
}

}  // namespace

TEST_CASE("hungarian: brute-force oracle with lexicographic tie-break") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(7));
    std::vector<double> cost(static_cast<std::size_t>(n * n));
    const bool ties = trial % 2 == 0;
    for (double& c : cost) c = ties ? static_cast<double>(rng.index(3)) : rng.uniform(-5, 5);
    const auto h = hungarian(cost, n);
    const auto b = brute_assignment(cost, n);
    CHECK(assignment_cost(cost, n, h) == doctest::Approx(assignment_cost(cost, n, b)).epsilon(1e-12));
    CHECK(h == b);
  }
  const std::vector<double> bad{1, std::nan(""), 0, 1};
  CHECK_THROWS_AS(hungarian(bad, 2), UserError);
  CHECK_THROWS_AS(hungarian(std::vector<double>{1, 2, 3}, 2), UserError);
}

TEST_CASE("fit_regressor: normal equations oracle and minimum norm") {
  Rng rng(2);
  std::vector<Landmarks> u, g;
  for (int i = 0; i < 40; ++i) {
    u.push_back(random_landmarks(rng, 4));
    g.push_back(random_landmarks(rng, 3));
  }
  const LinearMap m = fit_regressor(u, g);
  const Eigen::MatrixXd U = design(u), G = design(g);
  const Eigen::MatrixXd W = (U.transpose() * U).ldlt().solve(U.transpose() * G).transpose();
  CHECK((m.W - W).norm() <= 1e-8 * W.norm());

  // A duplicated input point makes the system rank deficient.
  for (auto& l : u) l[3] = l[0];
  const LinearMap d = fit_regressor(u, g);
  const Eigen::MatrixXd Ud = design(u);
  const Eigen::MatrixXd Wd = Ud.completeOrthogonalDecomposition().solve(G).transpose();
  CHECK((d.W - Wd).norm() <= 1e-8 * Wd.norm());
  CHECK(d.W.col(0).isApprox(d.W.col(3)));
}

TEST_CASE("fit_regressor: exact linear relation is recovered") {
  Rng rng(3);
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(10, 6);
  std::vector<Landmarks> u, g;
  for (int i = 0; i < 30; ++i) {
    u.push_back(random_landmarks(rng, 3));
    g.push_back(unstack(A * stack(u.back())));
  }
  CHECK(fit_regressor(u, g).W.isApprox(A, 1e-9));
}

TEST_CASE("nme: closed form, zero on identity, scale invariance") {
  const Landmarks a{{0, 0}, {10, 0}}, b{{3, 4}, {10, 0}};
  CHECK(nme(a, a, 7) == 0.0);
  CHECK(nme(a, b, 10) == doctest::Approx(25.0));
  Landmarks a2, b2;
  for (auto p : a) a2.push_back({2 * p.x, 2 * p.y});
  for (auto p : b) b2.push_back({2 * p.x, 2 * p.y});
  CHECK(nme(a2, b2, 20) == doctest::Approx(nme(a, b, 10)));
  CHECK(interocular(a, {0, 1}) == doctest::Approx(10));
  CHECK(bbox_sqrt_area(Landmarks{{0, 0}, {4, 9}}) == doctest::Approx(6));
}

TEST_CASE("forward_backward_eval: permutation invariance and distractor landmarks") {
  Rng rng(4);
  EvalInputs in;
  for (int i = 0; i < 80; ++i) {
    in.gt.push_back(random_landmarks(rng, 5, 10, 50));
    Landmarks u;
    for (auto p : in.gt.back()) u.push_back({p.x + rng.normal(), p.y + rng.normal()});
    in.unsup.push_back(u);
    in.normalizer.push_back(interocular(in.gt.back(), {0, 1}));
    (i < 60 ? in.train : in.test).push_back(i);
  }
  const EvalReport base = forward_backward_eval(in);
  CHECK(base.forward_nme > 0);

  EvalInputs perm = in;
  for (auto& u : perm.unsup) std::reverse(u.begin(), u.end());
  const EvalReport p = forward_backward_eval(perm);
  CHECK(p.forward_nme == doctest::Approx(base.forward_nme).epsilon(1e-9));
  CHECK(p.backward_nme == doctest::Approx(base.backward_nme).epsilon(1e-9));
  for (int k = 0; k < 5; ++k) CHECK(p.matching[static_cast<std::size_t>(4 - k)] == base.matching[static_cast<std::size_t>(k)]);

  // Extra landmarks unrelated to the gt cannot be predicted from it.
  EvalInputs noisy = in;
  for (auto& u : noisy.unsup)
    for (int k = 0; k < 3; ++k) u.push_back({rng.uniform(0, 64), rng.uniform(0, 64)});
  const EvalReport n = forward_backward_eval(noisy);
  CHECK(n.backward_nme > base.backward_nme);

  EvalInputs overlap = in;
  overlap.test.push_back(0);
  CHECK_THROWS_AS(forward_backward_eval(overlap), UserError);
}

TEST_CASE("ced_curve: monotone from zero to one") {
  Rng rng(5);
  std::vector<double> e;
  for (int i = 0; i < 200; ++i) e.push_back(std::abs(rng.normal()) * 5);
  const auto c = ced_curve(e, 51);
  REQUIRE(c.size() == 51);
  CHECK(c.front().threshold == 0.0);
  CHECK(c.back().fraction == doctest::Approx(1.0));
  for (std::size_t i = 1; i < c.size(); ++i) {
    CHECK(c[i].threshold > c[i - 1].threshold);
    CHECK(c[i].fraction >= c[i - 1].fraction);
  }
}

TEST_CASE("svt_complete: recovers a rank-2 matrix and keeps observed entries") {
  Rng rng(6);
  const Eigen::MatrixXd A = Eigen::MatrixXd::Random(20, 2) * Eigen::MatrixXd::Random(2, 40);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> obs(20, 40);
  Eigen::MatrixXd seen = A;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 40; ++j) {
      obs(i, j) = rng.bernoulli(0.7);
      if (!obs(i, j)) seen(i, j) = 0;
    }
  SvtConfig cfg;
  cfg.max_iters = 3000;
  const SvtResult r = svt_complete(seen, obs, cfg);
  CHECK((r.completed - A).norm() / A.norm() < 1e-2);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 40; ++j)
      if (obs(i, j)) CHECK(r.completed(i, j) == A(i, j));

  obs.row(3).setConstant(false);
  CHECK_THROWS_AS(svt_complete(seen, obs, cfg), UserError);
}

TEST_CASE("landmark matrix: means fill and SVT keep observed entries") {
  LandmarkMatrix m;
  m.rows = 2;
  m.images = 3;
  m.values = {{1, 2}, {3, 4}, {0, 0}, {5, 5}, {0, 0}, {7, 9}};
  m.present = {1, 1, 0, 1, 0, 1};
  const auto means = row_means(m);
  CHECK(means[0].x == doctest::Approx(2));
  CHECK(means[1].y == doctest::Approx(7));
  const auto f = fill_with_means(m, means);
  CHECK(f.at(0, 2).x == doctest::Approx(2));
  CHECK(f.at(1, 1).y == doctest::Approx(7));
  const auto s = svt_complete(m);
  CHECK(s.at(0, 1).x == 3);
  CHECK(s.at(1, 2).y == 9);
}

TEST_CASE("raw_landmark_metrics: matching, accuracy and precision") {
  // gt 0 is tracked by unsup 1 with 1 px error; unsup 0 is a far-away point.
  std::vector<Landmarks> gt, un;
  for (int i = 0; i < 10; ++i) {
    gt.push_back({{10.0 + i, 10}, {40, 40.0 + i}});
    un.push_back({{60, 2}, {11.0 + i, 10}});
  }
  std::vector<int> match{0, 1, 2, 3, 4}, test{5, 6, 7, 8, 9};
  const std::vector<double> thr{0.5, 1.0, 2.0};
  const RawMetrics r = raw_landmark_metrics(un, gt, match, test, thr, 2.0);
  CHECK(r.matching[0] == 1);
  CHECK(r.matching[1] == 0);
  CHECK(r.accuracy[0] == std::vector<double>{0.0, 1.0, 1.0});
  CHECK(r.accuracy[1] == std::vector<double>{0.0, 0.0, 0.0});
  CHECK(r.pck[1] == doctest::Approx(0.5));
  CHECK(r.precision == doctest::Approx(0.5));

  // Missing points are ignored by precision.
  for (auto& u : un) u[0] = {std::nan(""), std::nan("")};
  CHECK(raw_landmark_metrics(un, gt, match, test, thr, 2.0).precision == doctest::Approx(1.0));
}

TEST_CASE("plots: deterministic SVG with one polyline per series") {
  const std::vector<CedSeries> s{{"a", {{0, 0}, {1, 0.5}, {2, 1}}}, {"b", {{0, 0.2}, {2, 1}}}};
  const std::string svg = plot_ced(s);
  CHECK(svg == plot_ced(s));
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t n = 0;
  for (std::size_t pos = 0; (pos = svg.find("<polyline", pos)) != std::string::npos; ++pos) ++n;
  CHECK(n == 2);
  const std::vector<LinePlotSeries> l{{"x", {{0, 1}, {1, 2}}}};
  CHECK(plot_lines(l, "t", "x", "y").find("<polyline") != std::string::npos);
}
