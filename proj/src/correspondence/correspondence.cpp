#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "ktl/correspondence.hpp"
#include "ktl/hungarian.hpp"
#include "ktl/kernels.hpp"

namespace ktl::correspondence {
namespace fs = std::filesystem;
using keypoints::KeypointSet;
using nlohmann::json;

namespace {

struct FlatFeatures {
  std::size_t d = 0;
  std::vector<double> x;
  std::vector<int> group, side, set_index, point_index;
  std::size_t size() const { return group.size(); }
};

FlatFeatures flatten(const std::vector<const std::vector<KeypointSet>*>& sides) {
  FlatFeatures f;
  for (std::size_t s = 0; s < sides.size(); ++s) {
    const auto& sets = *sides[s];
    for (std::size_t i = 0; i < sets.size(); ++i)
      for (std::size_t p = 0; p < sets[i].points.size(); ++p) {
        const auto& desc = sets[i].points[p].descriptor;
        if (desc.empty())
          throw UserError("correspondence: keypoint without descriptor in sample " +
                          std::to_string(sets[i].sample_id));
        if (f.d == 0) f.d = desc.size();
        if (desc.size() != f.d) throw UserError("correspondence: descriptor sizes differ");
        f.x.insert(f.x.end(), desc.begin(), desc.end());
        f.group.push_back(static_cast<int>(i * sides.size() + s));
        f.side.push_back(static_cast<int>(s));
        f.set_index.push_back(static_cast<int>(i));
        f.point_index.push_back(static_cast<int>(p));
      }
  }
  return f;
}

FlatFeatures subset(const FlatFeatures& f, const std::vector<char>& keep) {
  FlatFeatures out;
  out.d = f.d;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!keep[i]) continue;
    out.x.insert(out.x.end(), f.x.begin() + static_cast<std::ptrdiff_t>(i * f.d),
                 f.x.begin() + static_cast<std::ptrdiff_t>((i + 1) * f.d));
    out.group.push_back(f.group[i]);
    out.side.push_back(f.side[i]);
    out.set_index.push_back(f.set_index[i]);
    out.point_index.push_back(f.point_index[i]);
  }
  return out;
}

// Runs one clustering + dedupe per entry of `passes` (each entry is M), then
// splits the final labels back per side.
std::vector<PseudoLabelSet> cluster_sides(const std::vector<const std::vector<KeypointSet>*>& sides,
                                          const std::vector<int>& passes, std::uint64_t seed,
                                          int max_iters) {
  for (std::size_t s = 1; s < sides.size(); ++s) {
    if (sides[s]->size() != sides[0]->size())
      throw UserError("correspondence: original and flipped corpora differ in size");
    for (std::size_t i = 0; i < sides[0]->size(); ++i)
      if ((*sides[s])[i].sample_id != (*sides[0])[i].sample_id ||
          (*sides[s])[i].points.size() != (*sides[0])[i].points.size())
        throw UserError("correspondence: flipped features do not mirror the original keypoints");
  }
  FlatFeatures f = flatten(sides);
  KMeansResult last;
  for (std::size_t pass = 0; pass < passes.size(); ++pass) {
    const int M = passes[pass];
    if (f.size() < static_cast<std::size_t>(M)) {
      if (pass == 0)
        throw UserError("correspondence: " + std::to_string(f.size()) +
                        " keypoints cannot form " + std::to_string(M) + " clusters");
      throw UserError("correspondence: only " + std::to_string(f.size()) +
                      " features survive the duplicate filter; choose M <= " +
                      std::to_string(f.size()) + " (requested M = " + std::to_string(M) + ")");
    }
    last = kmeans(f.x, f.d, M, mix_seed(seed, pass), max_iters);
    const std::vector<char> keep = dedupe_per_image(f.group, last.labels, last.sq_dist);
    if (pass + 1 == passes.size()) {
      std::vector<PseudoLabelSet> out(sides.size());
      for (std::size_t s = 0; s < sides.size(); ++s) {
        out[s].M = M;
        out[s].centroids = last.centroids;
        for (const KeypointSet& set : *sides[s]) out[s].images.push_back({set.sample_id, {}});
      }
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (!keep[i]) continue;
        const auto& src = (*sides[static_cast<std::size_t>(f.side[i])])[static_cast<std::size_t>(f.set_index[i])]
                              .points[static_cast<std::size_t>(f.point_index[i])];
        out[static_cast<std::size_t>(f.side[i])]
            .images[static_cast<std::size_t>(f.set_index[i])]
            .points.push_back({src.position, last.labels[i], f.point_index[i], src.descriptor});
      }
      return out;
    }
    f = subset(f, keep);
  }
  throw InternalError("cluster_sides: no clustering pass requested");
}

void check_counts(int K, int M) {
  if (K < 1) throw UserError("correspondence: K must be >= 1");
  if (M < K) throw UserError("correspondence: M must be >= K");
}

}  // namespace

const LabelledImage* PseudoLabelSet::find(int sample_id) const {
  for (const LabelledImage& im : images)
    if (im.sample_id == sample_id) return &im;
  return nullptr;
}

double PseudoLabelSet::points_per_image() const {
  if (images.empty()) return 0.0;
  std::size_t n = 0;
  for (const LabelledImage& im : images) n += im.points.size();
  return static_cast<double>(n) / static_cast<double>(images.size());
}

PseudoLabelSet recover_correspondence(const std::vector<KeypointSet>& sets, int K, int M,
                                      std::uint64_t seed, int max_iters) {
  check_counts(K, M);
  return cluster_sides({&sets}, {K, M}, seed, max_iters)[0];
}

std::pair<PseudoLabelSet, PseudoLabelSet> flip_labels(const std::vector<KeypointSet>& original,
                                                      const std::vector<KeypointSet>& flipped,
                                                      int K, int M, std::uint64_t seed,
                                                      int max_iters) {
  check_counts(K, M);
  auto r = cluster_sides({&original, &flipped}, {K, M}, seed, max_iters);
  return {std::move(r[0]), std::move(r[1])};
}

PseudoLabelSet final_k_clustering(const std::vector<KeypointSet>& sets, int K, std::uint64_t seed,
                                  int max_iters) {
  check_counts(K, K);
  return cluster_sides({&sets}, {K}, seed, max_iters)[0];
}

std::pair<PseudoLabelSet, PseudoLabelSet> final_k_flip_clustering(
    const std::vector<KeypointSet>& original, const std::vector<KeypointSet>& flipped, int K,
    std::uint64_t seed, int max_iters) {
  check_counts(K, K);
  auto r = cluster_sides({&original, &flipped}, {K}, seed, max_iters);
  return {std::move(r[0]), std::move(r[1])};
}

SymmetryMap cluster_symmetry_map(const PseudoLabelSet& original, const PseudoLabelSet& flipped,
                                 std::int64_t min_support) {
  if (original.M != flipped.M || original.M < 1)
    throw UserError("cluster_symmetry_map: label sets must share M");
  const int M = original.M;
  SymmetryMap s;
  s.co_occurrence.assign(static_cast<std::size_t>(M), std::vector<std::int64_t>(static_cast<std::size_t>(M), 0));
  for (const LabelledImage& im : original.images) {
    const LabelledImage* fl = flipped.find(im.sample_id);
    if (!fl) throw UserError("cluster_symmetry_map: sample " + std::to_string(im.sample_id) +
                             " missing from the flipped labels");
    for (const LabelledPoint& p : im.points)
      for (const LabelledPoint& q : fl->points)
        if (q.source_index == p.source_index)
          ++s.co_occurrence[static_cast<std::size_t>(p.label)][static_cast<std::size_t>(q.label)];
  }

  std::vector<std::int64_t> row(static_cast<std::size_t>(M), 0), col(static_cast<std::size_t>(M), 0);
  for (int a = 0; a < M; ++a)
    for (int b = 0; b < M; ++b) {
      row[static_cast<std::size_t>(a)] += s.co_occurrence[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
      col[static_cast<std::size_t>(b)] += s.co_occurrence[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    }
  std::vector<int> active;
  s.map.resize(static_cast<std::size_t>(M));
  for (int c = 0; c < M; ++c) {
    if (row[static_cast<std::size_t>(c)] == 0 && col[static_cast<std::size_t>(c)] == 0)
      s.map[static_cast<std::size_t>(c)] = c;
    else
      active.push_back(c);
  }
  const int n = static_cast<int>(active.size());
  std::vector<double> cost(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const auto a = static_cast<std::size_t>(active[static_cast<std::size_t>(i)]);
      const auto b = static_cast<std::size_t>(active[static_cast<std::size_t>(j)]);
      cost[static_cast<std::size_t>(i) * n + j] =
          -(static_cast<double>(s.co_occurrence[a][b]) * (M + 1) + (a == b ? 1.0 : 0.0));
    }
  const std::vector<int> assign = eval::hungarian(cost, n);
  for (int i = 0; i < n; ++i)
    s.map[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])] =
        active[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];

  s.support.resize(static_cast<std::size_t>(M));
  s.confident.resize(static_cast<std::size_t>(M));
  for (int c = 0; c < M; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    s.support[cu] = s.co_occurrence[cu][static_cast<std::size_t>(s.map[cu])];
    s.confident[cu] = s.support[cu] >= std::max<std::int64_t>(min_support, 1);
  }
  return s;
}

PseudoLabelSet assign_to_centroids(const std::vector<KeypointSet>& sets, const CentroidSet& centroids) {
  FlatFeatures f = flatten({&sets});
  PseudoLabelSet out;
  out.M = centroids.M;
  out.centroids = centroids;
  for (const KeypointSet& set : sets) out.images.push_back({set.sample_id, {}});
  if (f.size() == 0) return out;
  if (f.d != static_cast<std::size_t>(centroids.d))
    throw UserError("assign_to_centroids: descriptor size differs from the centroids");
  std::vector<int> labels(f.size());
  std::vector<double> dist(f.size());
  kernels::assign_nearest(f.x, centroids.centroids, f.d, labels, dist);
  const std::vector<char> keep = dedupe_per_image(f.group, labels, dist);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!keep[i]) continue;
    const auto& src = sets[static_cast<std::size_t>(f.set_index[i])].points[static_cast<std::size_t>(f.point_index[i])];
    out.images[static_cast<std::size_t>(f.set_index[i])].points.push_back(
        {src.position, labels[i], f.point_index[i], src.descriptor});
  }
  return out;
}

std::vector<KeypointSet> to_keypoint_sets(const PseudoLabelSet& labels) {
  std::vector<KeypointSet> out;
  for (const LabelledImage& im : labels.images) {
    KeypointSet s;
    s.sample_id = im.sample_id;
    for (const LabelledPoint& p : im.points) s.points.push_back({p.position, 1.0, p.descriptor, p.label});
    out.push_back(std::move(s));
  }
  return out;
}

void write_labels(const fs::path& path, const PseudoLabelSet& labels) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw UserError("cannot write labels " + path.string());
    for (const LabelledImage& im : labels.images) {
      json pts = json::array();
      for (const LabelledPoint& p : im.points)
        pts.push_back({{"x", p.position.x}, {"y", p.position.y}, {"label", p.label}});
      out << json{{"sample_id", im.sample_id}, {"round", labels.round}, {"points", pts}}.dump() << "\n";
    }
    if (!out) throw UserError("failed writing labels " + path.string());
  }
  fs::rename(tmp, path);
}

PseudoLabelSet read_labels(const fs::path& path, int M) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open labels " + path.string());
  PseudoLabelSet set;
  set.M = M;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      LabelledImage im;
      im.sample_id = j.at("sample_id");
      set.round = j.at("round");
      int idx = 0;
      for (const json& p : j.at("points")) {
        LabelledPoint lp;
        lp.position = {p.at("x").get<double>(), p.at("y").get<double>()};
        lp.label = p.at("label");
        lp.source_index = idx++;
        if (lp.label < 0 || lp.label >= M) throw UserError("label out of range in " + path.string());
        im.points.push_back(std::move(lp));
      }
      set.images.push_back(std::move(im));
    } catch (const json::exception& e) {
      throw UserError("malformed labels " + path.string() + ": " + e.what());
    }
  }
  return set;
}

}  // namespace ktl::correspondence
