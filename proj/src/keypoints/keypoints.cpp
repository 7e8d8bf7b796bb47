#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "ktl/kernels.hpp"
#include "ktl/keypoints.hpp"

namespace ktl::keypoints {
namespace fs = std::filesystem;
using nlohmann::json;

KeypointSet init_mixture(const synth::ImageSample& sample, int n_points, double real_ratio,
                         double jitter_px, std::uint64_t seed) {
  if (n_points < 1) throw UserError("init_mixture: n_points must be >= 1");
  if (!(real_ratio >= 0.0 && real_ratio <= 1.0))
    throw UserError("init_mixture: real_ratio must lie in [0, 1]");
  if (!(jitter_px >= 0.0)) throw UserError("init_mixture: jitter must be non-negative");

  const GridSize grid = grid_of(sample.raster);
  const int n_real = static_cast<int>(std::lround(real_ratio * n_points));
  std::vector<int> pool;
  for (std::size_t i = 0; i < sample.gt_landmarks.size(); ++i)
    if (sample.visible[i]) pool.push_back(static_cast<int>(i));
  if (n_real > static_cast<int>(pool.size()))
    throw UserError("init_mixture: " + std::to_string(n_real) + " real points requested but sample " +
                    std::to_string(sample.sample_id) + " has only " + std::to_string(pool.size()) +
                    " visible landmarks (sampling with replacement is not allowed)");

  Rng rng(seed);
  KeypointSet set;
  set.sample_id = sample.sample_id;
  set.source = KeypointSource::synthetic_mixture;
  const double max_x = grid.w - 1, max_y = grid.h - 1;
  for (int i = 0; i < n_real; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + rng.index(pool.size() - static_cast<std::size_t>(i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    Point2 p = sample.gt_landmarks[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])];
    if (jitter_px > 0.0) {
      p.x += rng.uniform(-jitter_px, jitter_px);
      p.y += rng.uniform(-jitter_px, jitter_px);
    }
    Point2 g = pixel_to_grid(p);
    g.x = std::clamp(g.x, 0.0, max_x);
    g.y = std::clamp(g.y, 0.0, max_y);
    set.points.push_back({g, 1.0, {}, std::nullopt});
  }
  for (int i = n_real; i < n_points; ++i) {
    const double x = rng.uniform(0.0, max_x);
    const double y = rng.uniform(0.0, max_y);
    set.points.push_back({{x, y}, 0.5, {}, std::nullopt});
  }
  return set;
}

bool dominates(const Keypoint& p, const Keypoint& q) {
  if (p.confidence != q.confidence) return p.confidence > q.confidence;
  if (p.position.y != q.position.y) return p.position.y < q.position.y;
  return p.position.x < q.position.x;
}

KeypointSet anms_filter(const KeypointSet& set, std::size_t n_target) {
  if (set.points.empty()) throw UserError("anms_filter: empty keypoint set");

  // Exact positional duplicates collapse onto their dominating member.
  std::vector<std::size_t> order(set.points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dominates(set.points[a], set.points[b]);
  });
  std::vector<std::size_t> unique;
  for (std::size_t i : order) {
    bool dup = false;
    for (std::size_t j : unique)
      if (set.points[j].position == set.points[i].position) {
        dup = true;
        break;
      }
    if (!dup) unique.push_back(i);
  }

  KeypointSet out;
  out.sample_id = set.sample_id;
  out.source = set.source;
  if (unique.size() <= n_target) {
    std::sort(unique.begin(), unique.end());
    for (std::size_t i : unique) out.points.push_back(set.points[i]);
    return out;
  }

  // unique is in dominance order, so every dominator of unique[i] precedes it.
  const std::size_t n = unique.size();
  std::vector<double> radius(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      radius[i] = std::min(radius[i], squared_distance(set.points[unique[i]].position,
                                                       set.points[unique[j]].position));
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return radius[a] > radius[b]; });
  rank.resize(n_target);
  std::sort(rank.begin(), rank.end());
  for (std::size_t r : rank) out.points.push_back(set.points[unique[r]]);
  return out;
}

std::vector<KeypointSet> outlier_prefilter(const std::vector<KeypointSet>& sets,
                                           std::size_t density_k, double drop_fraction) {
  if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0))
    throw UserError("outlier_prefilter: drop_fraction must lie in [0, 1]");
  std::size_t total = 0, d = 0;
  for (const KeypointSet& s : sets)
    for (const Keypoint& p : s.points) {
      if (p.descriptor.empty())
        throw UserError("outlier_prefilter: keypoint without descriptor in sample " +
                        std::to_string(s.sample_id));
      if (d == 0) d = p.descriptor.size();
      if (p.descriptor.size() != d) throw UserError("outlier_prefilter: descriptor sizes differ");
      ++total;
    }
  if (drop_fraction == 0.0) return sets;
  if (density_k < 1 || density_k >= total)
    throw UserError("outlier_prefilter: density_k = " + std::to_string(density_k) +
                    " needs at least " + std::to_string(density_k + 1) + " points, corpus has " +
                    std::to_string(total));

  std::vector<double> rows;
  rows.reserve(total * d);
  for (const KeypointSet& s : sets)
    for (const Keypoint& p : s.points) rows.insert(rows.end(), p.descriptor.begin(), p.descriptor.end());
  std::vector<double> density(total);
  kernels::knn_mean_distance(rows, d, density_k, density);

  const auto n_drop = static_cast<std::size_t>(std::floor(drop_fraction * static_cast<double>(total) + 1e-9));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return density[a] > density[b]; });
  std::vector<char> keep(total, 1);
  for (std::size_t i = 0; i < n_drop; ++i) keep[order[i]] = 0;

  std::vector<KeypointSet> out;
  std::size_t flat = 0;
  for (const KeypointSet& s : sets) {
    KeypointSet r;
    r.sample_id = s.sample_id;
    r.source = s.source;
    for (const Keypoint& p : s.points)
      if (keep[flat++]) r.points.push_back(p);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<KeypointSet> read_keypoint_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open keypoint file " + path.string());
  std::vector<KeypointSet> sets;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      KeypointSet s;
      s.sample_id = j.at("sample_id");
      s.source = KeypointSource::external_file;
      for (const json& pj : j.at("points")) {
        Keypoint k;
        k.position = {pj.at("x").get<double>(), pj.at("y").get<double>()};
        k.confidence = pj.value("score", 1.0);
        if (!std::isfinite(k.position.x) || !std::isfinite(k.position.y))
          throw UserError(where + ": non-finite coordinate");
        if (!(k.confidence >= 0.0 && k.confidence <= 1.0))
          throw UserError(where + ": score outside [0, 1]");
        if (pj.contains("desc")) {
          k.descriptor = pj.at("desc").get<std::vector<float>>();
          double s2 = 0.0;
          for (float v : k.descriptor) s2 += static_cast<double>(v) * v;
          if (!(s2 > 0.0) || !std::isfinite(s2)) throw UserError(where + ": degenerate descriptor");
          const double inv = 1.0 / std::sqrt(s2);
          for (float& v : k.descriptor) v = static_cast<float>(v * inv);
        }
        s.points.push_back(std::move(k));
      }
      sets.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw UserError(where + ": " + e.what());
    }
  }
  return sets;
}

void write_keypoint_file(const fs::path& path, const std::vector<KeypointSet>& sets) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write keypoint file " + path.string());
  for (const KeypointSet& s : sets) {
    json pts = json::array();
    for (const Keypoint& k : s.points) {
      json p = {{"x", k.position.x}, {"y", k.position.y}, {"score", k.confidence}};
      if (!k.descriptor.empty()) p["desc"] = k.descriptor;
      pts.push_back(std::move(p));
    }
    out << json{{"sample_id", s.sample_id}, {"points", pts}}.dump() << "\n";
  }
  if (!out) throw UserError("failed writing keypoint file " + path.string());
}

}  // namespace ktl::keypoints
