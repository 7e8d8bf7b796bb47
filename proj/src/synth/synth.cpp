#include "ktl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ktl::synth {
namespace {

constexpr double kPi = std::numbers::pi;

struct Blob {
  Point2 offset;  // normalized units relative to the motif centre
  double sigma = 0.0;
  double amplitude = 0.0;
};

using Motif = std::vector<Blob>;

double blob_sum(const Motif& motif, Point2 delta) {
  double v = 0.0;
  for (const Blob& b : motif) {
    const double d2 = squared_distance(delta, b.offset);
    v += b.amplitude * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
  }
  return v;
}

Motif mirror_motif(const Motif& m) {
  Motif out = m;
  for (Blob& b : out) b.offset.x = -b.offset.x;
  return out;
}

// One motif per landmark; mirrored partners get mirrored motifs so a flipped
// object is indistinguishable from an unflipped one with swapped indices.
std::vector<Motif> make_motifs(const std::vector<int>& symmetry, std::uint64_t category_seed,
                               double px) {
  const std::size_t n = symmetry.size();
  std::vector<Motif> motifs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto partner = static_cast<std::size_t>(symmetry[i]);
    if (partner < i) {
      motifs[i] = mirror_motif(motifs[partner]);
      continue;
    }
    Rng rng(mix_seed(category_seed, 100 + i));
    Motif m;
    const double centre_sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    m.push_back({{0.0, 0.0}, rng.uniform(1.0, 1.6) * px, centre_sign * rng.uniform(0.25, 0.4)});
    if (partner == i) {
      // Self-symmetric: satellites on the vertical axis or as a mirrored pair.
      const double r = rng.uniform(2.2, 3.2) * px;
      const double amp = -centre_sign * rng.uniform(0.2, 0.35);
      if (rng.bernoulli(0.5)) {
        const double s = rng.bernoulli(0.5) ? 1.0 : -1.0;
        m.push_back({{0.0, s * r}, 1.0 * px, amp});
      } else {
        const double a = rng.uniform(-0.8, 0.8);
        m.push_back({{r * std::cos(a), r * std::sin(a)}, 1.0 * px, amp});
        m.push_back({{-r * std::cos(a), r * std::sin(a)}, 1.0 * px, amp});
      }
    } else {
      for (int s = 0; s < 2; ++s) {
        const double a = rng.uniform(0.0, 2.0 * kPi);
        const double r = rng.uniform(2.2, 3.2) * px;
        const double amp = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.2, 0.35);
        m.push_back({{r * std::cos(a), r * std::sin(a)}, rng.uniform(0.8, 1.2) * px, amp});
      }
    }
    motifs[i] = std::move(m);
  }
  return motifs;
}

Motif random_distractor(Rng& rng, double px) {
  Motif m;
  const int blobs = 2 + static_cast<int>(rng.index(2));
  for (int b = 0; b < blobs; ++b) {
    const double a = rng.uniform(0.0, 2.0 * kPi);
    const double r = b == 0 ? 0.0 : rng.uniform(1.5, 3.0) * px;
    m.push_back({{r * std::cos(a), r * std::sin(a)},
                 rng.uniform(0.8, 1.5) * px,
                 (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.2, 0.4)});
  }
  return m;
}

struct Layout {
  std::vector<Point2> points;
  std::vector<int> symmetry;
};

double min_separation(const std::vector<Point2>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::min(best, distance(pts[i], pts[j]));
  return best;
}

// Pairs come first as (left, right), midline points last. Pair 0 is the
// widest-set pair and plays the role of the eyes.
Layout base_layout(int k, std::uint64_t category_seed) {
  if (k < 1) throw UserError("synth: landmarks must be >= 1");
  const int n_mid = k == 1 ? 1 : (k % 2 == 1 ? std::min(3, k) : 2);
  const int n_pairs = (k - n_mid) / 2;
  Rng rng(mix_seed(category_seed, 7));
  double sep = 0.09;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 0 && attempt % 2000 == 0) sep *= 0.85;
    Layout l;
    for (int p = 0; p < n_pairs; ++p) {
      const double dx = p == 0 ? rng.uniform(0.2, 0.27) : rng.uniform(0.07, 0.28);
      const double y = p == 0 ? rng.uniform(0.3, 0.38) : rng.uniform(0.22, 0.78);
      const int base = static_cast<int>(l.points.size());
      l.points.push_back({0.5 - dx, y});
      l.points.push_back({0.5 + dx, y});
      l.symmetry.push_back(base + 1);
      l.symmetry.push_back(base);
    }
    for (int m = 0; m < n_mid; ++m) {
      l.points.push_back({0.5, rng.uniform(0.22, 0.78)});
      l.symmetry.push_back(static_cast<int>(l.points.size()) - 1);
    }
    if (l.points.size() < 2 || min_separation(l.points) >= sep) return l;
  }
}

Point2 apply_affine_part(const GeometricTransform& g, Point2 p) { return to_matrix(g).apply(p); }

Point2 elastic_displacement(const std::vector<ElasticBump>& bumps, Point2 q) {
  Point2 d{0.0, 0.0};
  for (const ElasticBump& b : bumps) {
    const double w = std::exp(-squared_distance(q, b.centre) / (2.0 * b.radius * b.radius));
    d = d + w * b.displacement;
  }
  return d;
}

}  // namespace

double quantize_coordinate(double v) {
  constexpr double scale = 16777216.0;  // 2^24
  return std::round(v * scale) / scale;
}

bool GeometricTransform::is_identity() const {
  return rotation == 0.0 && scale_x == 1.0 && scale_y == 1.0 && shear == 0.0 && tx == 0.0 &&
         ty == 0.0 && !flip && (kind == TransformKind::affine || bumps.empty());
}

bool GeometricTransform::is_pure_flip() const {
  GeometricTransform copy = *this;
  copy.flip = false;
  return flip && copy.is_identity();
}

void GeometricTransform::validate() const {
  const double vals[] = {rotation, scale_x, scale_y, shear, tx, ty};
  for (double v : vals)
    if (!std::isfinite(v)) throw UserError("transform: non-finite parameter");
  if (std::abs(scale_x) < 1e-6 || std::abs(scale_y) < 1e-6)
    throw UserError("transform: singular scale");
  if (kind == TransformKind::elastic) {
    // Fixed-point inversion needs the displacement field to be a contraction.
    double lipschitz = 0.0;
    for (const ElasticBump& b : bumps) {
      if (!(b.radius > 0.0)) throw UserError("transform: elastic radius must be positive");
      lipschitz += std::hypot(b.displacement.x, b.displacement.y) / b.radius * 0.6065306597;
    }
    if (lipschitz >= 0.9) throw UserError("transform: elastic field not invertible");
  }
}

Point2 GeometricTransform::apply(Point2 p) const {
  Point2 q = apply_affine_part(*this, p);
  if (kind == TransformKind::elastic && !bumps.empty()) q = q + elastic_displacement(bumps, q);
  return q;
}

Point2 GeometricTransform::inverse(Point2 q) const {
  Point2 r = q;
  if (kind == TransformKind::elastic && !bumps.empty()) {
    // Solve r + D(r) = q.
    for (int it = 0; it < 200; ++it) {
      const Point2 next = q - elastic_displacement(bumps, r);
      const double change = squared_distance(next, r);
      r = next;
      if (change < 1e-30) break;
    }
  }
  const AffineMatrix m = to_matrix(*this);
  const double det = m.a * m.d - m.b * m.c;
  const double x = r.x - m.tx, y = r.y - m.ty;
  return {(m.d * x - m.b * y) / det, (-m.c * x + m.a * y) / det};
}

bool operator==(const GeometricTransform& l, const GeometricTransform& r) {
  if (l.bumps.size() != r.bumps.size()) return false;
  for (std::size_t i = 0; i < l.bumps.size(); ++i) {
    const auto& a = l.bumps[i];
    const auto& b = r.bumps[i];
    if (!(a.centre == b.centre && a.displacement == b.displacement && a.radius == b.radius))
      return false;
  }
  return l.kind == r.kind && l.rotation == r.rotation && l.scale_x == r.scale_x &&
         l.scale_y == r.scale_y && l.shear == r.shear && l.tx == r.tx && l.ty == r.ty &&
         l.flip == r.flip;
}

AffineMatrix to_matrix(const GeometricTransform& g) {
  // A = R(theta) * [1 shear; 0 1] * diag(sx, sy), acting about the centre.
  const double cs = std::cos(g.rotation), sn = std::sin(g.rotation);
  const double u00 = g.scale_x, u01 = g.shear * g.scale_y, u11 = g.scale_y;
  AffineMatrix m;
  m.a = cs * u00;
  m.b = cs * u01 - sn * u11;
  m.c = sn * u00;
  m.d = sn * u01 + cs * u11;
  // p -> A (p - c) + c + t
  m.tx = 0.5 - (m.a * 0.5 + m.b * 0.5) + g.tx;
  m.ty = 0.5 - (m.c * 0.5 + m.d * 0.5) + g.ty;
  if (g.flip) {
    // Pre-compose with x -> 1 - x.
    m.tx += m.a;
    m.ty += m.c;
    m.a = -m.a;
    m.c = -m.c;
  }
  return m;
}

GeometricTransform from_matrix(const AffineMatrix& in) {
  AffineMatrix m = in;
  GeometricTransform g;
  if (m.a * m.d - m.b * m.c < 0.0) {
    // Undo the mirror: M = M' F with F(x) = 1 - x.
    g.flip = true;
    m.a = -m.a;
    m.c = -m.c;
    m.tx -= m.a;
    m.ty -= m.c;
  }
  const double det = m.a * m.d - m.b * m.c;
  if (!(std::abs(det) > 1e-12)) throw UserError("transform: singular matrix");
  // QR with positive diagonal: first column = R * (sx, 0).
  g.scale_x = std::hypot(m.a, m.c);
  g.rotation = std::atan2(m.c, m.a);
  const double cs = std::cos(g.rotation), sn = std::sin(g.rotation);
  const double u01 = cs * m.b + sn * m.d;
  const double u11 = -sn * m.b + cs * m.d;
  g.scale_y = u11;
  g.shear = u01 / u11;
  const AffineMatrix base = to_matrix(GeometricTransform{TransformKind::affine, g.rotation,
                                                         g.scale_x, g.scale_y, g.shear, 0.0,
                                                         0.0, false, {}});
  g.tx = m.tx - base.tx;
  g.ty = m.ty - base.ty;
  return g;
}

GeometricTransform compose(const GeometricTransform& second, const GeometricTransform& first) {
  if ((second.kind == TransformKind::elastic && !second.bumps.empty()) ||
      (first.kind == TransformKind::elastic && !first.bumps.empty()))
    throw UserError("compose: only affine transforms compose in closed form");
  const AffineMatrix s = to_matrix(second), f = to_matrix(first);
  AffineMatrix m;
  m.a = s.a * f.a + s.b * f.c;
  m.b = s.a * f.b + s.b * f.d;
  m.c = s.c * f.a + s.d * f.c;
  m.d = s.c * f.b + s.d * f.d;
  m.tx = s.a * f.tx + s.b * f.ty + s.tx;
  m.ty = s.c * f.tx + s.d * f.ty + s.ty;
  return from_matrix(m);
}

std::vector<int> Corpus::train_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!samples[i].is_test) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Corpus::test_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].is_test) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<ObjectTemplate> make_templates(const SynthConfig& config) {
  const Layout base = base_layout(config.landmarks, config.category_seed);
  std::vector<ObjectTemplate> out;
  for (int t = 0; t < config.template_pool; ++t) {
    ObjectTemplate tpl;
    tpl.template_id = t;
    tpl.appearance_seed = mix_seed(config.seed, 5000 + static_cast<std::uint64_t>(t));
    tpl.symmetry_map = base.symmetry;
    tpl.canonical_landmarks = base.points;
    tpl.eye_pair = {0, base.symmetry[0]};
    Rng rng(tpl.appearance_seed);
    for (std::size_t i = 0; i < base.points.size(); ++i) {
      const auto j = static_cast<std::size_t>(base.symmetry[i]);
      if (j < i) continue;
      const double dx = rng.uniform(-0.02, 0.02), dy = rng.uniform(-0.02, 0.02);
      if (j == i) {
        tpl.canonical_landmarks[i].y += dy;
      } else {
        // Keep the pair mirrored about x = 0.5.
        tpl.canonical_landmarks[i] = tpl.canonical_landmarks[i] + Point2{dx, dy};
        tpl.canonical_landmarks[j] = tpl.canonical_landmarks[j] + Point2{-dx, dy};
      }
    }
    out.push_back(std::move(tpl));
  }
  return out;
}

GeometricTransform random_transform(Rng& rng, double strength, double max_rotation,
                                    double flip_probability, bool elastic) {
  GeometricTransform g;
  g.flip = flip_probability > 0.0 && rng.bernoulli(flip_probability);
  if (strength <= 0.0) return g;
  g.rotation = rng.uniform(-1.0, 1.0) * max_rotation * strength;
  g.scale_x = std::exp(rng.uniform(-1.0, 1.0) * 0.15 * strength);
  g.scale_y = std::exp(rng.uniform(-1.0, 1.0) * 0.15 * strength);
  g.shear = rng.uniform(-1.0, 1.0) * 0.12 * strength;
  g.tx = rng.uniform(-1.0, 1.0) * 0.07 * strength;
  g.ty = rng.uniform(-1.0, 1.0) * 0.07 * strength;
  if (elastic) {
    g.kind = TransformKind::elastic;
    for (int b = 0; b < 3; ++b) {
      ElasticBump bump;
      bump.centre = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
      bump.radius = 0.2;
      bump.displacement = {rng.uniform(-1.0, 1.0) * 0.025 * strength,
                           rng.uniform(-1.0, 1.0) * 0.025 * strength};
      g.bumps.push_back(bump);
    }
  }
  return g;
}

namespace {

ImageSample render_sample(const SynthConfig& cfg, const ObjectTemplate& tpl,
                          const std::vector<Motif>& motifs, int sample_id) {
  const int S = cfg.image_size;
  const double px = 1.0 / (S - 1);
  Rng rng(mix_seed(cfg.seed, 1'000'000 + static_cast<std::uint64_t>(sample_id)));

  ImageSample s;
  s.sample_id = sample_id;
  s.template_id = tpl.template_id;
  s.symmetry_map = tpl.symmetry_map;
  s.eye_pair = tpl.eye_pair;
  const GeometricTransform g = random_transform(rng, cfg.deform_strength, cfg.max_rotation,
                                                cfg.flip_probability, cfg.elastic);
  g.validate();
  s.applied_transforms.push_back(g);

  // Appearance that moves with the object.
  Rng arng(tpl.appearance_seed);
  const double contrast = arng.uniform(0.9, 1.1);
  const double body_rx = arng.uniform(0.32, 0.38), body_ry = arng.uniform(0.36, 0.42);
  const double body_level = arng.uniform(0.08, 0.14);

  // Image-frame background: low-frequency waves plus distractor motifs.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i)
    waves.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(0.0, 2.0 * kPi),
                     rng.uniform(0.02, 0.05)});
  const auto n_distractors =
      static_cast<int>(std::lround(cfg.distractor_fraction * static_cast<double>(cfg.landmarks)));
  std::vector<std::pair<Point2, Motif>> distractors;
  for (int i = 0; i < n_distractors; ++i)
    distractors.emplace_back(Point2{rng.uniform(0.06, 0.94), rng.uniform(0.06, 0.94)},
                             random_distractor(rng, px));

  const double reach2 = (7.0 * px) * (7.0 * px);
  s.raster = Raster(S, S);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const Point2 u{x * px, y * px};
      double v = 0.5;
      for (const Wave& w : waves)
        v += w.amp * std::cos(2.0 * kPi * (w.fx * u.x + w.fy * u.y) + w.phase);
      for (const auto& [centre, motif] : distractors)
        if (squared_distance(u, centre) < reach2) v += blob_sum(motif, u - centre);
      const Point2 c = g.inverse(u);
      const double ex = (c.x - 0.5) / body_rx, ey = (c.y - 0.5) / body_ry;
      v += body_level / (1.0 + std::exp((std::sqrt(ex * ex + ey * ey) - 1.0) * 12.0));
      for (std::size_t i = 0; i < motifs.size(); ++i) {
        const Point2 delta = c - tpl.canonical_landmarks[i];
        if (delta.x * delta.x + delta.y * delta.y < reach2)
          v += contrast * blob_sum(motifs[i], delta);
      }
      v += 0.015 * rng.normal();
      s.raster.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  const std::vector<Point2> canon = transform_points(tpl.canonical_landmarks, g);
  const std::size_t K = canon.size();
  s.gt_landmarks.resize(K);
  s.visible.resize(K);
  for (std::size_t i = 0; i < K; ++i) {
    // A mirrored render re-indexes through the symmetry map.
    const std::size_t src = g.flip ? static_cast<std::size_t>(tpl.symmetry_map[i]) : i;
    const Point2 p{quantize_coordinate(canon[src].x * (S - 1)),
                   quantize_coordinate(canon[src].y * (S - 1))};
    s.gt_landmarks[i] = p;
    s.visible[i] = p.x >= 0.0 && p.x <= S - 1 && p.y >= 0.0 && p.y <= S - 1;
  }
  return s;
}

}  // namespace

Corpus generate_corpus(const SynthConfig& config) {
  if (config.n_images < 1) throw UserError("generate_corpus: n_images must be >= 1");
  if (config.image_size < 32)
    throw UserError("generate_corpus: image_size must be >= 32 (landmark motifs unresolvable)");
  if (config.image_size % 2 != 0) throw UserError("generate_corpus: image_size must be even");
  if (!(config.deform_strength >= 0.0 && config.deform_strength <= 1.0))
    throw UserError("generate_corpus: deform_strength must lie in [0, 1]");
  if (config.template_pool < 1) throw UserError("generate_corpus: template_pool must be >= 1");
  if (!(config.test_fraction >= 0.0 && config.test_fraction < 1.0))
    throw UserError("generate_corpus: test_fraction must lie in [0, 1)");

  Corpus corpus;
  corpus.config = config;
  corpus.templates = make_templates(config);
  const std::vector<Motif> motifs = make_motifs(corpus.templates.front().symmetry_map,
                                                config.category_seed,
                                                1.0 / (config.image_size - 1));
  corpus.samples.resize(static_cast<std::size_t>(config.n_images));
  Rng pick(mix_seed(config.seed, 77));
  std::vector<int> template_of(corpus.samples.size());
  for (int& t : template_of) t = static_cast<int>(pick.index(corpus.templates.size()));
  const auto n_test = static_cast<int>(std::floor(config.test_fraction * config.n_images));

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < config.n_images; ++i) {
    corpus.samples[static_cast<std::size_t>(i)] = render_sample(
        config, corpus.templates[static_cast<std::size_t>(template_of[static_cast<std::size_t>(i)])],
        motifs, i);
    corpus.samples[static_cast<std::size_t>(i)].is_test = i >= config.n_images - n_test;
  }
  return corpus;
}

Corpus generate_corpus(int n_images, int template_pool, int image_size, double deform_strength,
                       std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_images = n_images;
  cfg.template_pool = template_pool;
  cfg.image_size = image_size;
  cfg.deform_strength = deform_strength;
  cfg.seed = seed;
  return generate_corpus(cfg);
}

std::vector<Point2> transform_points(std::span<const Point2> points, const GeometricTransform& g) {
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const Point2& p : points) out.push_back(g.apply(p));
  return out;
}

std::vector<Point2> transform_pixels(std::span<const Point2> points, const GeometricTransform& g,
                                     int size) {
  const double span = size - 1;
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const Point2& p : points) {
    const Point2 q = g.apply({p.x / span, p.y / span});
    out.push_back({q.x * span, q.y * span});
  }
  return out;
}

float sample_bilinear(const Raster& r, double x, double y, float outside) {
  if (!(x >= 0.0 && y >= 0.0 && x <= r.w - 1 && y <= r.h - 1)) return outside;
  const int x0 = std::min(static_cast<int>(x), r.w - 2);
  const int y0 = std::min(static_cast<int>(y), r.h - 2);
  const double fx = x - x0, fy = y - y0;
  const double top = (1.0 - fx) * r.at(y0, x0) + fx * r.at(y0, x0 + 1);
  const double bot = (1.0 - fx) * r.at(y0 + 1, x0) + fx * r.at(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - fy) * top + fy * bot);
}

ImageSample apply_transform(const ImageSample& sample, const GeometricTransform& g) {
  g.validate();
  if (g.is_identity()) return sample;
  const int H = sample.raster.h, W = sample.raster.w;
  if (H != W) throw UserError("apply_transform: square rasters only");
  const std::size_t K = sample.gt_landmarks.size();
  ImageSample out = sample;

  if (g.is_pure_flip()) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.raster.at(y, x) = sample.raster.at(y, W - 1 - x);
    for (std::size_t i = 0; i < K; ++i) {
      const auto src = static_cast<std::size_t>(sample.symmetry_map[i]);
      out.gt_landmarks[i] = {(W - 1) - sample.gt_landmarks[src].x, sample.gt_landmarks[src].y};
      out.visible[i] = sample.visible[src];
    }
    if (!sample.applied_transforms.empty() && sample.applied_transforms.back().is_pure_flip())
      out.applied_transforms.pop_back();
    else
      out.applied_transforms.push_back(g);
    return out;
  }

  const double span = W - 1;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const Point2 src = g.inverse({x / span, y / span});
      out.raster.at(y, x) = sample_bilinear(sample.raster, src.x * span, src.y * span, 0.5f);
    }
  const std::vector<Point2> moved = transform_pixels(sample.gt_landmarks, g, W);
  for (std::size_t i = 0; i < K; ++i) {
    const std::size_t src = g.flip ? static_cast<std::size_t>(sample.symmetry_map[i]) : i;
    const Point2 p{quantize_coordinate(moved[src].x), quantize_coordinate(moved[src].y)};
    out.gt_landmarks[i] = p;
    out.visible[i] = sample.visible[src] && p.x >= 0.0 && p.x <= span && p.y >= 0.0 && p.y <= span;
  }
  out.applied_transforms.push_back(g);
  return out;
}

}  // namespace ktl::synth
