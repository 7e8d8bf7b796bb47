#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "ktl/correspondence.hpp"
#include "test_util.hpp"

using namespace ktl;
using namespace ktl::correspondence;
using keypoints::Keypoint;
using keypoints::KeypointSet;

namespace {

std::vector<float> unit(std::vector<double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  std::vector<float> out;
  for (double x : v) out.push_back(static_cast<float>(x / std::sqrt(s)));
  return out;
}

// Motif k has descriptor close to basis direction k (d = dims).
std::vector<float> motif(Rng& rng, int k, int dims, double noise) {
  std::vector<double> v(static_cast<std::size_t>(dims), 0.0);
  v[static_cast<std::size_t>(k)] = 1.0;
  for (double& x : v) x += noise * rng.normal();
  return unit(v);
}

std::vector<KeypointSet> random_sets(Rng& rng, int images, int max_points, int d) {
  std::vector<KeypointSet> sets;
  for (int i = 0; i < images; ++i) {
    KeypointSet s;
    s.sample_id = 100 + i;
    const int n = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_points)));
    for (int p = 0; p < n; ++p) {
      Keypoint k;
      k.position = {rng.uniform(0, 31), rng.uniform(0, 31)};
      std::vector<double> v(static_cast<std::size_t>(d));
      for (double& x : v) x = rng.normal();
      k.descriptor = unit(v);
      s.points.push_back(k);
    }
    sets.push_back(s);
  }
  return sets;
}

void check_constraints(const PseudoLabelSet& l, int K) {
  for (const LabelledImage& im : l.images) {
    CHECK(static_cast<int>(im.points.size()) <= K);
    std::set<int> seen;
    for (const LabelledPoint& p : im.points) {
      CHECK(seen.insert(p.label).second);
      CHECK((p.label >= 0 && p.label < l.M));
    }
  }
}

double exhaustive_two_partition(const std::vector<double>& x, std::size_t d) {
  const std::size_t n = x.size() / d;
  double best = 1e300;
  for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    double cost = 0;
    for (int side = 0; side < 2; ++side) {
      std::vector<double> mean(d, 0.0);
      int count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(side)) {
          ++count;
          for (std::size_t k = 0; k < d; ++k) mean[k] += x[i * d + k];
        }
      for (double& m : mean) m /= count;
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(side))
          for (std::size_t k = 0; k < d; ++k) cost += (x[i * d + k] - mean[k]) * (x[i * d + k] - mean[k]);
    }
    best = std::min(best, cost);
  }
  return best;
}

}  // namespace

TEST_CASE("kmeans: M = 1 gives the mean and total variance") {
  Rng rng(1);
  const auto x = testutil::random_vector(rng, 40 * 3);
  const auto r = kmeans(x, 3, 1, 5);
  double var = 0;
  for (int k = 0; k < 3; ++k) {
    double mean = 0;
    for (int i = 0; i < 40; ++i) mean += x[static_cast<std::size_t>(i * 3 + k)] / 40;
    CHECK(r.centroids.centroids[static_cast<std::size_t>(k)] == doctest::Approx(mean).epsilon(1e-12));
    for (int i = 0; i < 40; ++i) var += std::pow(x[static_cast<std::size_t>(i * 3 + k)] - mean, 2);
  }
  CHECK(r.centroids.inertia == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("kmeans: distinct points with M = n reach zero inertia") {
  Rng rng(2);
  const auto x = testutil::random_vector(rng, 7 * 2);
  CHECK(kmeans(x, 2, 7, 3).centroids.inertia == 0.0);
}

TEST_CASE("kmeans: exhaustive 2-partition oracle and monotone inertia") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.index(9), d = 2;
    std::vector<double> x = testutil::random_vector(rng, n * d);
    // Half the trials use two separated blobs, where a single seeding must find the optimum.
    const bool blobs = trial % 2 == 0;
    if (blobs)
      for (std::size_t i = 0; i < n; ++i) x[i * d] = 0.1 * x[i * d] + (i < n / 2 ? -5.0 : 5.0);
    const auto r = kmeans(x, d, 2, rng.next());
    const double best = exhaustive_two_partition(x, d);
    CHECK(r.centroids.inertia >= best - 1e-9);
    if (blobs) CHECK(r.centroids.inertia == doctest::Approx(best).epsilon(1e-9));
    const auto& h = r.centroids.inertia_history;
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1]);
    CHECK(h.back() == doctest::Approx(r.centroids.inertia).epsilon(1e-12));
  }
}

TEST_CASE("kmeans: restarts never do worse than the first seeding") {
  Rng rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    const auto x = testutil::random_vector(rng, 50 * 3);
    const std::uint64_t seed = rng.next();
    const auto one = kmeans(x, 3, 4, seed, 100, 1);
    const auto many = kmeans(x, 3, 4, seed, 100, 8);
    CHECK(many.centroids.inertia <= one.centroids.inertia);
  }
  CHECK_THROWS_AS(kmeans(testutil::random_vector(rng, 6), 2, 2, 1, 100, 0), UserError);
}

TEST_CASE("kmeans: two tight blobs split by membership, deterministic") {
  Rng rng(4);
  std::vector<double> x;
  for (int i = 0; i < 10; ++i) {
    const double c = i < 5 ? -3.0 : 3.0;
    x.push_back(c + 0.01 * rng.normal());
    x.push_back(0.01 * rng.normal());
  }
  const auto r = kmeans(x, 2, 2, 9);
  for (int i = 1; i < 10; ++i) CHECK((r.labels[static_cast<std::size_t>(i)] == r.labels[0]) == (i < 5));
  CHECK(kmeans(x, 2, 2, 9).labels == r.labels);
  CHECK_THROWS_AS(kmeans(x, 2, 11, 9), UserError);
}

TEST_CASE("dedupe_per_image: brute-force group-by minimum") {
  Rng rng(5);
  const std::vector<int> g0{0, 0}, l0{3, 3};
  const std::vector<double> d0{0.3, 0.1};
  CHECK(dedupe_per_image(g0, l0, d0) == std::vector<char>{0, 1});
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 60;
    std::vector<int> group(n), label(n);
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      group[i] = static_cast<int>(rng.index(5));
      label[i] = static_cast<int>(rng.index(6));
      dist[i] = static_cast<double>(rng.index(4));  // frequent ties
    }
    const auto keep = dedupe_per_image(group, label, dist);
    std::map<std::pair<int, int>, std::size_t> best;
    for (std::size_t i = 0; i < n; ++i) {
      const auto key = std::make_pair(group[i], label[i]);
      auto it = best.find(key);
      if (it == best.end() || dist[i] < dist[it->second]) best[key] = i;
    }
    for (std::size_t i = 0; i < n; ++i) CHECK((keep[i] != 0) == (best[{group[i], label[i]}] == i));
  }
}

TEST_CASE("recover_correspondence: constraints hold on random corpora") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = 2 + static_cast<int>(rng.index(6));
    const auto sets = random_sets(rng, 30, 3 * K, 4);
    const int M = K + static_cast<int>(rng.index(static_cast<std::size_t>(2 * K)));
    check_constraints(recover_correspondence(sets, K, M, rng.next()), K);
  }
}

TEST_CASE("recover_correspondence: separable motifs survive both passes") {
  Rng rng(7);
  const int K = 5;
  std::vector<KeypointSet> sets;
  for (int i = 0; i < 20; ++i) {
    KeypointSet s;
    s.sample_id = i;
    for (int k = 0; k < K; ++k) s.points.push_back({{double(k), double(i % 7)}, 1.0, motif(rng, k, 8, 0.02), {}});
    sets.push_back(s);
  }
  const auto l = recover_correspondence(sets, K, K, 3);
  for (const auto& im : l.images) CHECK(im.points.size() == static_cast<std::size_t>(K));

  // Doubling every motif: duplicates collapse to K per image in pass 1.
  for (auto& s : sets) {
    const auto copy = s.points;
    for (auto p : copy) {
      p.position.y += 10;
      p.descriptor = motif(rng, static_cast<int>(p.position.x), 8, 0.02);
      s.points.push_back(p);
    }
  }
  const auto d = recover_correspondence(sets, K, K, 3);
  for (const auto& im : d.images) CHECK(im.points.size() == static_cast<std::size_t>(K));
  check_constraints(d, K);
}

TEST_CASE("recover_correspondence: K = M = 1 keeps the point nearest the centroid") {
  Rng rng(8);
  const auto sets = random_sets(rng, 6, 5, 3);
  const auto l = recover_correspondence(sets, 1, 1, 1);
  std::vector<double> mean(3, 0.0);
  int n = 0;
  for (const auto& s : sets)
    for (const auto& p : s.points) {
      for (int k = 0; k < 3; ++k) mean[static_cast<std::size_t>(k)] += p.descriptor[static_cast<std::size_t>(k)];
      ++n;
    }
  for (double& m : mean) m /= n;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    REQUIRE(l.images[i].points.size() == 1);
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t j = 0; j < sets[i].points.size(); ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += std::pow(sets[i].points[j].descriptor[static_cast<std::size_t>(k)] - mean[static_cast<std::size_t>(k)], 2);
      if (s < bd) bd = s, best = j;
    }
    CHECK(l.images[i].points[0].source_index == static_cast<int>(best));
  }
}

TEST_CASE("recover_correspondence: errors") {
  Rng rng(9);
  const auto sets = random_sets(rng, 3, 2, 3);
  CHECK_THROWS_AS(recover_correspondence(sets, 3, 2, 1), UserError);
  CHECK_THROWS_AS(recover_correspondence(sets, 2, 100, 1), UserError);
  auto bad = sets;
  bad[0].points[0].descriptor.clear();
  CHECK_THROWS_AS(recover_correspondence(bad, 1, 1, 1), UserError);
}

TEST_CASE("flip_labels and symmetry map on a symmetric motif corpus") {
  // Motifs 0 <-> 1 and 2 <-> 3 swap under mirroring; 4 is self-symmetric.
  Rng rng(10);
  const int sym[] = {1, 0, 3, 2, 4};
  std::vector<KeypointSet> orig, flip;
  for (int i = 0; i < 40; ++i) {
    KeypointSet a, b;
    a.sample_id = b.sample_id = i;
    for (int k = 0; k < 5; ++k) {
      a.points.push_back({{double(k), 1}, 1, motif(rng, k, 6, 0.03), {}});
      b.points.push_back({{double(31 - k), 1}, 1, motif(rng, sym[k], 6, 0.03), {}});
    }
    orig.push_back(a);
    flip.push_back(b);
  }
  const auto [lo, lf] = flip_labels(orig, flip, 5, 5, 4);
  check_constraints(lo, 5);
  check_constraints(lf, 5);
  CHECK(lo.centroids.centroids == lf.centroids.centroids);
  // The same (original, flipped) label pair recurs for each motif.
  std::map<int, std::set<std::pair<int, int>>> pairs;
  for (std::size_t i = 0; i < lo.images.size(); ++i)
    for (std::size_t j = 0; j < lo.images[i].points.size(); ++j)
      pairs[lo.images[i].points[j].source_index].insert({lo.images[i].points[j].label, lf.images[i].points[j].label});
  for (const auto& [k, s] : pairs) CHECK(s.size() == 1);

  const SymmetryMap m = cluster_symmetry_map(lo, lf);
  for (int c = 0; c < 5; ++c) {
    if (!m.confident[static_cast<std::size_t>(c)]) continue;
    CHECK(m.map[static_cast<std::size_t>(m.map[static_cast<std::size_t>(c)])] == c);
  }
  // Total co-occurrence is at least that of the identity.
  std::int64_t chosen = 0, identity = 0;
  for (int c = 0; c < 5; ++c) {
    chosen += m.co_occurrence[static_cast<std::size_t>(c)][static_cast<std::size_t>(m.map[static_cast<std::size_t>(c)])];
    identity += m.co_occurrence[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  }
  CHECK(chosen >= identity);
}

TEST_CASE("flip_labels: disjoint sides cluster like two independent runs") {
  Rng rng(11);
  std::vector<KeypointSet> orig, flip, both;
  for (int i = 0; i < 30; ++i) {
    KeypointSet a, b;
    a.sample_id = b.sample_id = i;
    for (int k = 0; k < 3; ++k) {
      a.points.push_back({{double(k), 0}, 1, motif(rng, k, 6, 0.02), {}});
      b.points.push_back({{double(k), 0}, 1, motif(rng, 3 + k, 6, 0.02), {}});
    }
    orig.push_back(a);
    flip.push_back(b);
  }
  const auto [lo, lf] = flip_labels(orig, flip, 6, 6, 2);
  const double joint = lo.centroids.inertia;
  const double separate = final_k_clustering(orig, 3, 2).centroids.inertia + final_k_clustering(flip, 3, 2).centroids.inertia;
  CHECK(joint == doctest::Approx(separate).epsilon(1e-9));
  std::set<int> lo_labels, lf_labels;
  for (const auto& im : lo.images)
    for (const auto& p : im.points) lo_labels.insert(p.label);
  for (const auto& im : lf.images)
    for (const auto& p : im.points) lf_labels.insert(p.label);
  for (int l : lo_labels) CHECK(lf_labels.count(l) == 0);
}

TEST_CASE("cluster_symmetry_map: known permutation, diagonal, unobserved clusters") {
  const std::vector<int> pi{2, 0, 1, 4, 3};
  PseudoLabelSet a, b;
  a.M = b.M = 6;
  for (int i = 0; i < 10; ++i) {
    LabelledImage x{i, {}}, y{i, {}};
    for (int k = 0; k < 5; ++k) {
      x.points.push_back({{double(k), 0}, k, k, {}});
      y.points.push_back({{double(31 - k), 0}, pi[static_cast<std::size_t>(k)], k, {}});
    }
    a.images.push_back(x);
    b.images.push_back(y);
  }
  const auto m = cluster_symmetry_map(a, b);
  for (int k = 0; k < 5; ++k) CHECK(m.map[static_cast<std::size_t>(k)] == pi[static_cast<std::size_t>(k)]);
  CHECK(m.map[5] == 5);
  CHECK(!m.confident[5]);
  const auto id = cluster_symmetry_map(a, a);
  for (int k = 0; k < 6; ++k) CHECK(id.map[static_cast<std::size_t>(k)] == k);
}

TEST_CASE("final_k_clustering: blob purity, K = 1, determinism") {
  Rng rng(12);
  std::vector<KeypointSet> sets;
  for (int i = 0; i < 25; ++i) {
    KeypointSet s;
    s.sample_id = i;
    for (int k = 0; k < 4; ++k) s.points.push_back({{double(k), 0}, 1, motif(rng, k, 5, 0.02), {}});
    sets.push_back(s);
  }
  const auto l = final_k_clustering(sets, 4, 6);
  std::map<int, std::set<int>> by_motif;
  for (const auto& im : l.images)
    for (const auto& p : im.points) by_motif[p.source_index].insert(p.label);
  for (const auto& [k, labels] : by_motif) CHECK(labels.size() == 1);
  const auto again = final_k_clustering(sets, 4, 6);
  for (std::size_t i = 0; i < l.images.size(); ++i)
    for (std::size_t j = 0; j < l.images[i].points.size(); ++j)
      CHECK(again.images[i].points[j].label == l.images[i].points[j].label);
  for (const auto& im : final_k_clustering(sets, 1, 6).images) {
    REQUIRE(im.points.size() == 1);
    CHECK(im.points[0].label == 0);
  }
}

TEST_CASE("assign_to_centroids and label files") {
  Rng rng(13);
  const auto sets = random_sets(rng, 10, 8, 4);
  const auto l = recover_correspondence(sets, 3, 6, 2);
  const auto again = assign_to_centroids(sets, l.centroids);
  check_constraints(again, 6);
  testutil::TempDir dir("labels");
  write_labels(dir.path() / "r.jsonl", l);
  const auto back = read_labels(dir.path() / "r.jsonl", 6);
  REQUIRE(back.images.size() == l.images.size());
  for (std::size_t i = 0; i < l.images.size(); ++i) {
    CHECK(back.images[i].sample_id == l.images[i].sample_id);
    REQUIRE(back.images[i].points.size() == l.images[i].points.size());
    for (std::size_t j = 0; j < l.images[i].points.size(); ++j) {
      CHECK(back.images[i].points[j].label == l.images[i].points[j].label);
      CHECK(back.images[i].points[j].position == l.images[i].points[j].position);
    }
  }
  CHECK_THROWS_AS(read_labels(dir.path() / "r.jsonl", 2), UserError);
}
