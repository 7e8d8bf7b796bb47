#include "ktl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace ktl::training {

using correspondence::LabelledImage;
using correspondence::PseudoLabelSet;
using keypoints::KeypointSet;
using model::PairBatch;
using model::Tensor;

const char* to_string(NegativeStrategy s) {
  return s == NegativeStrategy::same_image ? "same_image" : "different_cluster";
}
const char* to_string(PositiveSource s) {
  return s == PositiveSource::clustering ? "clustering" : "equivariance";
}
NegativeStrategy negative_strategy_from_string(const std::string& s) {
  if (s == "same_image") return NegativeStrategy::same_image;
  if (s == "different_cluster") return NegativeStrategy::different_cluster;
  throw UserError("unknown negative strategy '" + s + "' (same_image, different_cluster)");
}
PositiveSource positive_source_from_string(const std::string& s) {
  if (s == "clustering") return PositiveSource::clustering;
  if (s == "equivariance") return PositiveSource::equivariance;
  throw UserError("unknown positive source '" + s + "' (clustering, equivariance)");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw UserError(std::string("config: ") + field + " " + rule);
  };
  need(margin > 0.0, "margin", "must be > 0");
  need(lambda > 0.0 && lambda <= 1.0, "lambda", "must lie in (0, 1]");
  need(learning_rate > 0.0, "learning_rate", "must be > 0");
  need(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  need(batch_size >= 1, "batch_size", "must be >= 1");
  need(warmup_iters >= 0, "warmup_iters", "must be >= 0");
  need(recluster_every >= 0, "recluster_every", "must be >= 0");
  need(rounds >= 0, "rounds", "must be >= 0");
  need(stage2_iters >= 0, "stage2_iters", "must be >= 0");
  need(K >= 1, "K", "must be >= 1");
  need(M >= K, "M", "must be >= K");
  need(kmeans_max_iters >= 1, "kmeans_max_iters", "must be >= 1");
  need(positives_per_pair >= 1, "positives_per_pair", "must be >= 1");
  need(negatives_per_image >= 1, "negatives_per_image", "must be >= 1");
  need(r_min > 0.0, "r_min", "must be > 0");
  need(transform_probability >= 0.0 && transform_probability <= 1.0, "transform_probability",
       "must lie in [0, 1]");
  need(transform_strength >= 0.0 && transform_strength <= 1.0, "transform_strength", "must lie in [0, 1]");
  need(sigma > 0.0, "sigma", "must be > 0");
  need(nms_window >= 1, "nms_window", "must be >= 1");
  need(max_points_per_image >= 1, "max_points_per_image", "must be >= 1");
  need(outlier_density_k >= 1, "outlier_density_k", "must be >= 1");
  need(outlier_drop_fraction >= 0.0 && outlier_drop_fraction < 1.0, "outlier_drop_fraction",
       "must lie in [0, 1)");
  need(hidden >= 1, "hidden", "must be >= 1");
  need(descriptor_dim >= 1, "descriptor_dim", "must be >= 1");
}

namespace {

model::RmsPropConfig rmsprop(const TrainConfig& c) {
  return {c.learning_rate, 0.99, 1e-8, c.weight_decay};
}

synth::Raster mirror_raster(const synth::Raster& r) {
  synth::Raster out(r.h, r.w);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) out.at(y, x) = r.at(y, r.w - 1 - x);
  return out;
}

bool in_grid(Point2 p, int grid_h, int grid_w) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= grid_w - 1 && p.y <= grid_h - 1;
}

Point2 random_cell(Rng& rng, int grid_h, int grid_w) {
  return {static_cast<double>(rng.index(static_cast<std::size_t>(grid_w))),
          static_cast<double>(rng.index(static_cast<std::size_t>(grid_h)))};
}

// Random location at least r_min from `anchor`; nullopt if none found quickly.
std::optional<Point2> far_location(Rng& rng, Point2 anchor, double r_min, int grid_h, int grid_w) {
  for (int tries = 0; tries < 64; ++tries) {
    const Point2 q = random_cell(rng, grid_h, grid_w);
    if (distance(q, anchor) >= r_min) return q;
  }
  return std::nullopt;
}

template <typename T>
void keep_random_subset(std::vector<T>& v, std::size_t cap, Rng& rng) {
  if (v.size() <= cap) return;
  for (std::size_t i = 0; i < cap; ++i) std::swap(v[i], v[i + rng.index(v.size() - i)]);
  v.resize(cap);
}

void append(PairBatch& into, const PairBatch& from) {
  into.positives.insert(into.positives.end(), from.positives.begin(), from.positives.end());
  into.negatives.insert(into.negatives.end(), from.negatives.begin(), from.negatives.end());
}

// Same-image negatives around the image's labelled points (or random anchors).
void add_same_image_negatives(PairBatch& batch, int image, const std::vector<Point2>& anchors,
                              int count, double r_min, int grid_h, int grid_w, Rng& rng) {
  for (int n = 0; n < count; ++n) {
    const Point2 a = anchors.empty() ? random_cell(rng, grid_h, grid_w)
                                     : anchors[static_cast<std::size_t>(n) % anchors.size()];
    std::optional<Point2> b;
    if (anchors.size() > 1 && rng.bernoulli(0.5)) {
      const Point2 c = anchors[rng.index(anchors.size())];
      if (distance(a, c) >= r_min) b = c;
    }
    if (!b) b = far_location(rng, a, r_min, grid_h, grid_w);
    if (b) batch.negatives.push_back({{image, a}, {image, *b}, true});
  }
}

std::vector<Point2> positions_of(const LabelledImage* im) {
  std::vector<Point2> out;
  if (im)
    for (const auto& p : im->points) out.push_back(p.position);
  return out;
}

struct BatchInputs {
  std::vector<Tensor<float>> tensors;
  std::vector<std::vector<Point2>> targets;  // detector target positions per input
  std::vector<int> sample_ids;
};

// Index of every training image that carries at least one labelled point.
std::vector<int> labelled_images(const PseudoLabelSet& labels) {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.images.size(); ++i)
    if (!labels.images[i].points.empty()) out.push_back(static_cast<int>(i));
  return out;
}

struct StepLosses {
  double detector = 0.0;
  double descriptor = 0.0;
};

// One optimiser update (or two with two_step) on a prepared batch.
StepLosses train_step(model::ModelParams& params, model::OptimizerState& opt, const BatchInputs& in,
                      const PairBatch& pairs, const TrainConfig& cfg, bool use_detector) {
  const int grid_h = params.dims.output_h(), grid_w = params.dims.output_w();
  std::vector<model::Heatmap<float>> targets;
  if (use_detector)
    for (const auto& t : in.targets) targets.push_back(model::render_target<float>(t, cfg.sigma, grid_h, grid_w));
  const double n_inputs = static_cast<double>(in.tensors.size());
  StepLosses losses;

  auto detector_part = [&](std::span<const model::ForwardCache<float>> caches,
                           std::span<model::OutputGrads<float>> outs) {
    double ld = 0.0;
    for (std::size_t i = 0; i < caches.size(); ++i) {
      model::Heatmap<float> g;
      ld += model::detector_loss(caches[i].detector, targets[i], &g);
      for (float& v : g.data) v = static_cast<float>(v * cfg.lambda / n_inputs);
      outs[i].detector = std::move(g);
    }
    return ld / n_inputs;
  };
  auto descriptor_part = [&](std::span<const model::ForwardCache<float>> caches,
                             std::span<model::OutputGrads<float>> outs) {
    if (pairs.empty()) return 0.0;
    std::vector<const Tensor<float>*> maps;
    for (const auto& c : caches) maps.push_back(&c.features);
    std::vector<Tensor<float>> grads(caches.size());
    for (std::size_t i = 0; i < caches.size(); ++i)
      grads[i] = Tensor<float>(caches[i].features.c, caches[i].features.h, caches[i].features.w);
    const double lf = model::contrastive_loss<float>(pairs, maps, cfg.margin, grads);
    for (std::size_t i = 0; i < caches.size(); ++i) outs[i].features = std::move(grads[i]);
    return lf;
  };

  static constexpr std::array<model::ParamGroup, 2> kDetectorStep{model::ParamGroup::backbone,
                                                                   model::ParamGroup::detector};
  static constexpr std::array<model::ParamGroup, 2> kDescriptorStep{model::ParamGroup::backbone,
                                                                     model::ParamGroup::descriptor};
  static constexpr std::array<model::ParamGroup, 3> kJoint{
      model::ParamGroup::backbone, model::ParamGroup::detector, model::ParamGroup::descriptor};

  if (!use_detector) {
    if (pairs.empty()) return losses;
    const auto r = model::gradient<float>(params, in.tensors, [&](auto caches, auto outs) {
      losses.descriptor = descriptor_part(caches, outs);
      return losses.descriptor;
    });
    model::optimizer_step(params, r.grads, opt, rmsprop(cfg), kDescriptorStep);
    return losses;
  }
  if (cfg.two_step) {
    const auto rd = model::gradient<float>(params, in.tensors, [&](auto caches, auto outs) {
      losses.detector = detector_part(caches, outs);
      return cfg.lambda * losses.detector;
    });
    model::optimizer_step(params, rd.grads, opt, rmsprop(cfg), kDetectorStep);
    if (!pairs.empty()) {
      const auto rf = model::gradient<float>(params, in.tensors, [&](auto caches, auto outs) {
        losses.descriptor = descriptor_part(caches, outs);
        return losses.descriptor;
      });
      model::optimizer_step(params, rf.grads, opt, rmsprop(cfg), kDescriptorStep);
    }
    return losses;
  }
  const auto r = model::gradient<float>(params, in.tensors, [&](auto caches, auto outs) {
    losses.detector = detector_part(caches, outs);
    losses.descriptor = descriptor_part(caches, outs);
    return cfg.lambda * losses.detector + losses.descriptor;
  });
  model::optimizer_step(params, r.grads, opt, rmsprop(cfg), kJoint);
  return losses;
}

const synth::ImageSample& sample_of(const TrainingData& data, int train_pos) {
  return data.corpus->samples[static_cast<std::size_t>(data.train[static_cast<std::size_t>(train_pos)])];
}

PseudoLabelSet cluster(const std::vector<KeypointSet>& sets, const TrainingData& data,
                       const model::ModelParams& params, const TrainConfig& cfg, std::uint64_t seed,
                       std::optional<PseudoLabelSet>& flipped) {
  if (cfg.flip_augmentation) {
    const auto mirrored = mirrored_sets(params, *data.corpus, data.train, sets);
    auto [orig, flip] = correspondence::flip_labels(sets, mirrored, cfg.K, cfg.M, seed, cfg.kmeans_max_iters);
    flipped = std::move(flip);
    return std::move(orig);
  }
  flipped.reset();
  return correspondence::recover_correspondence(sets, cfg.K, cfg.M, seed, cfg.kmeans_max_iters);
}

std::vector<int> cluster_sizes(const PseudoLabelSet& labels) {
  std::vector<int> sizes(static_cast<std::size_t>(labels.M), 0);
  for (const auto& im : labels.images)
    for (const auto& p : im.points) ++sizes[static_cast<std::size_t>(p.label)];
  return sizes;
}

}  // namespace

Point2 warp_grid_point(Point2 p, const synth::GeometricTransform& g, int image_size) {
  const Point2 px = grid_to_pixel(p);
  const std::vector<Point2> out = synth::transform_pixels(std::span<const Point2>(&px, 1), g, image_size);
  return pixel_to_grid(out[0]);
}

Point2 mirror_grid_point(Point2 p, int grid_w) { return {grid_w - 1 - p.x, p.y}; }

TrainingData make_training_data(const synth::Corpus& corpus, std::vector<KeypointSet> initial) {
  TrainingData d;
  d.corpus = &corpus;
  d.train = corpus.train_indices();
  if (initial.size() != d.train.size())
    throw UserError("training: expected initial keypoints for " + std::to_string(d.train.size()) +
                    " training images, got " + std::to_string(initial.size()));
  for (std::size_t i = 0; i < initial.size(); ++i)
    if (initial[i].sample_id != corpus.samples[static_cast<std::size_t>(d.train[i])].sample_id)
      throw UserError("training: initial keypoints are not in training-sample order");
  d.initial = std::move(initial);
  return d;
}

TrainingState init_state(const TrainConfig& cfg, int image_h, int image_w) {
  model::ModelDims dims;
  dims.input_h = image_h;
  dims.input_w = image_w;
  dims.hidden = cfg.hidden;
  dims.descriptor_dim = cfg.descriptor_dim;
  TrainingState s;
  s.params = model::init_network<float>(dims, mix_seed(cfg.seed, 7));
  s.optimizer = model::init_optimizer(s.params);
  return s;
}

std::vector<KeypointSet> describe(const model::ModelParams& params, const synth::Corpus& corpus,
                                  const std::vector<int>& indices, const std::vector<KeypointSet>& sets,
                                  bool mirrored) {
  if (sets.size() != indices.size()) throw InternalError("describe: sets and indices differ");
  std::vector<KeypointSet> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out[i] = sets[i];
    if (sets[i].points.empty()) continue;
    const auto& raster = corpus.samples[static_cast<std::size_t>(indices[i])].raster;
    const auto cache = model::forward(params, model::to_input<float>(mirrored ? mirror_raster(raster) : raster));
    for (auto& p : out[i].points) {
      const std::vector<double> d = model::sample_descriptor(cache.features, p.position);
      p.descriptor.assign(d.begin(), d.end());
    }
  }
  return out;
}

std::vector<KeypointSet> mirrored_sets(const model::ModelParams& params, const synth::Corpus& corpus,
                                       const std::vector<int>& indices, const std::vector<KeypointSet>& sets) {
  std::vector<KeypointSet> m = sets;
  const int grid_w = params.dims.output_w();
  for (auto& s : m)
    for (auto& p : s.points) p.position = mirror_grid_point(p.position, grid_w);
  return describe(params, corpus, indices, m, true);
}

std::vector<KeypointSet> extract_all(const model::ModelParams& params, const synth::Corpus& corpus,
                                     const std::vector<int>& indices, const TrainConfig& cfg) {
  std::vector<KeypointSet> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    const auto& sample = corpus.samples[static_cast<std::size_t>(idx)];
    const auto cache = model::forward(params, model::to_input<float>(sample.raster));
    KeypointSet s;
    s.sample_id = sample.sample_id;
    s.points = model::extract_keypoints(cache.detector, cfg.nms_threshold, cfg.nms_window,
                                        static_cast<std::size_t>(cfg.max_points_per_image));
    for (auto& p : s.points) {
      const std::vector<double> d = model::sample_descriptor(cache.features, p.position);
      p.descriptor.assign(d.begin(), d.end());
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainingState warmup(const TrainingData& data, const TrainConfig& cfg, const PairHook& hook) {
  cfg.validate();
  const synth::Corpus& corpus = *data.corpus;
  const int size = corpus.config.image_size;
  TrainingState state = init_state(cfg, size, size);
  const int grid_h = state.params.dims.output_h(), grid_w = state.params.dims.output_w();

  std::vector<int> usable;
  for (std::size_t i = 0; i < data.initial.size(); ++i)
    if (!data.initial[i].points.empty()) usable.push_back(static_cast<int>(i));
  if (usable.empty()) throw UserError("warm-up: no training image has keypoints");

  Rng rng(mix_seed(cfg.seed, 11));
  double loss_sum = 0.0;
  int loss_steps = 0;
  for (int it = 0; it < cfg.warmup_iters; ++it) {
    BatchInputs in;
    PairBatch pairs;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int pos = usable[rng.index(usable.size())];
      const synth::ImageSample& sample = sample_of(data, pos);
      const auto g = synth::random_transform(rng, cfg.transform_strength, corpus.config.max_rotation, 0.0,
                                             corpus.config.elastic);
      const synth::ImageSample warped = synth::apply_transform(sample, g);
      const int ia = static_cast<int>(in.tensors.size()), ib = ia + 1;
      in.tensors.push_back(model::to_input<float>(sample.raster));
      in.tensors.push_back(model::to_input<float>(warped.raster));
      in.sample_ids.push_back(sample.sample_id);
      in.sample_ids.push_back(sample.sample_id);

      std::vector<Point2> anchors, warped_anchors;
      PairBatch local;
      for (const auto& kp : data.initial[static_cast<std::size_t>(pos)].points) {
        const Point2 q = warp_grid_point(kp.position, g, size);
        anchors.push_back(kp.position);
        if (!in_grid(q, grid_h, grid_w)) continue;
        warped_anchors.push_back(q);
        local.positives.push_back({{ia, kp.position}, {ib, q}});
      }
      keep_random_subset(local.positives, static_cast<std::size_t>(cfg.positives_per_pair), rng);
      add_same_image_negatives(local, ia, anchors, cfg.negatives_per_image, cfg.r_min, grid_h, grid_w, rng);
      add_same_image_negatives(local, ib, warped_anchors, cfg.negatives_per_image, cfg.r_min, grid_h, grid_w, rng);
      append(pairs, local);
    }
    if (hook) hook(pairs, in.sample_ids);
    const StepLosses l = train_step(state.params, state.optimizer, in, pairs, cfg, false);
    loss_sum += l.descriptor;
    ++loss_steps;
  }
  state.warmup_loss = loss_steps > 0 ? loss_sum / loss_steps : 0.0;

  std::vector<KeypointSet> described = describe(state.params, corpus, data.train, data.initial, false);
  std::size_t total = 0;
  for (const auto& s : described) total += s.points.size();
  if (cfg.outlier_drop_fraction > 0.0 && total > static_cast<std::size_t>(cfg.outlier_density_k))
    described = keypoints::outlier_prefilter(described, static_cast<std::size_t>(cfg.outlier_density_k),
                                             cfg.outlier_drop_fraction);
  state.labels = cluster(described, data, state.params, cfg, mix_seed(cfg.seed, 2000), state.flipped_labels);
  state.labels.round = 0;
  if (state.flipped_labels) state.flipped_labels->round = 0;
  state.round = 0;
  return state;
}

model::PairBatch mine_pairs(const ImageLabels& a, const ImageLabels& b,
                            std::optional<std::pair<int, const synth::GeometricTransform*>> warped,
                            int grid_h, int grid_w, int image_size, const TrainConfig& cfg, Rng& rng) {
  PairBatch batch;
  const bool same = a.sample_id == b.sample_id && a.mirrored == b.mirrored;
  if (cfg.positives == PositiveSource::clustering && !same && a.labels && b.labels) {
    for (const auto& p : a.labels->points)
      for (const auto& q : b.labels->points)
        if (p.label == q.label) batch.positives.push_back({{a.image, p.position}, {b.image, q.position}});
  }
  if (warped && a.labels) {
    for (const auto& p : a.labels->points) {
      const Point2 q = warp_grid_point(p.position, *warped->second, image_size);
      if (in_grid(q, grid_h, grid_w)) batch.positives.push_back({{a.image, p.position}, {warped->first, q}});
    }
  }
  keep_random_subset(batch.positives, static_cast<std::size_t>(cfg.positives_per_pair), rng);

  if (cfg.negatives == NegativeStrategy::same_image) {
    add_same_image_negatives(batch, a.image, positions_of(a.labels), cfg.negatives_per_image, cfg.r_min,
                             grid_h, grid_w, rng);
    if (!same)
      add_same_image_negatives(batch, b.image, positions_of(b.labels), cfg.negatives_per_image, cfg.r_min,
                               grid_h, grid_w, rng);
  } else if (a.labels && b.labels && !same) {
    std::vector<model::NegativePair> cand;
    for (const auto& p : a.labels->points)
      for (const auto& q : b.labels->points)
        if (p.label != q.label) cand.push_back({{a.image, p.position}, {b.image, q.position}, false});
    keep_random_subset(cand, static_cast<std::size_t>(2 * cfg.negatives_per_image), rng);
    batch.negatives = std::move(cand);
  }
  return batch;
}

void stage1_round(TrainingState& state, const TrainingData& data, const TrainConfig& cfg, const PairHook& hook) {
  cfg.validate();
  const synth::Corpus& corpus = *data.corpus;
  const int size = corpus.config.image_size;
  const int grid_h = state.params.dims.output_h(), grid_w = state.params.dims.output_w();
  const int next_round = state.round + 1;
  Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(next_round)));
  const auto t0 = std::chrono::steady_clock::now();

  const std::vector<int> labelled = labelled_images(state.labels);
  if (labelled.empty() && cfg.recluster_every > 0) throw UserError("stage 1: no labelled training image");
  double ld_sum = 0.0, lf_sum = 0.0;
  for (int step = 0; step < cfg.recluster_every; ++step) {
    BatchInputs in;
    std::vector<ImageLabels> views;
    std::vector<synth::Raster> view_rasters;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int pos = labelled[rng.index(labelled.size())];
      const bool mirrored = cfg.flip_augmentation && state.flipped_labels && rng.bernoulli(0.5);
      const auto& labels = mirrored ? state.flipped_labels->images[static_cast<std::size_t>(pos)]
                                    : state.labels.images[static_cast<std::size_t>(pos)];
      const synth::ImageSample& sample = sample_of(data, pos);
      views.push_back({static_cast<int>(in.tensors.size()), sample.sample_id, &labels, mirrored});
      view_rasters.push_back(mirrored ? mirror_raster(sample.raster) : sample.raster);
      in.tensors.push_back(model::to_input<float>(view_rasters.back()));
      in.targets.push_back(positions_of(&labels));
      in.sample_ids.push_back(sample.sample_id);
    }
    PairBatch pairs;
    std::vector<synth::GeometricTransform> transforms;
    transforms.reserve(views.size());
    for (std::size_t v = 0; v < views.size(); v += 2) {
      const ImageLabels& a = views[v];
      const ImageLabels& b = v + 1 < views.size() ? views[v + 1] : views[rng.index(views.size())];
      std::optional<std::pair<int, const synth::GeometricTransform*>> warped;
      const bool use_warp = cfg.positives == PositiveSource::equivariance || rng.bernoulli(cfg.transform_probability);
      if (use_warp) {
        transforms.push_back(synth::random_transform(rng, cfg.transform_strength, corpus.config.max_rotation, 0.0,
                                                     corpus.config.elastic));
        const synth::GeometricTransform& g = transforms.back();
        synth::ImageSample src;
        src.raster = view_rasters[v];
        const synth::ImageSample w = synth::apply_transform(src, g);
        const int wi = static_cast<int>(in.tensors.size());
        in.tensors.push_back(model::to_input<float>(w.raster));
        std::vector<Point2> wt;
        for (const Point2& p : positions_of(a.labels)) {
          const Point2 q = warp_grid_point(p, g, size);
          if (in_grid(q, grid_h, grid_w)) wt.push_back(q);
        }
        in.targets.push_back(std::move(wt));
        in.sample_ids.push_back(a.sample_id);
        warped = std::make_pair(wi, &g);
      }
      append(pairs, mine_pairs(a, b, warped, grid_h, grid_w, size, cfg, rng));
    }
    if (hook) hook(pairs, in.sample_ids);
    const StepLosses l = train_step(state.params, state.optimizer, in, pairs, cfg, true);
    ld_sum += l.detector;
    lf_sum += l.descriptor;
  }

  const std::vector<KeypointSet> found = extract_all(state.params, corpus, data.train, cfg);
  state.labels = cluster(found, data, state.params, cfg, mix_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(next_round)),
                         state.flipped_labels);
  state.round = next_round;
  state.labels.round = next_round;
  if (state.flipped_labels) state.flipped_labels->round = next_round;

  RoundMetrics m;
  m.round = next_round;
  const double steps = std::max(cfg.recluster_every, 1);
  m.detector_loss = cfg.recluster_every > 0 ? ld_sum / steps : 0.0;
  m.descriptor_loss = cfg.recluster_every > 0 ? lf_sum / steps : 0.0;
  m.points_per_image = state.labels.points_per_image();
  m.cluster_sizes = cluster_sizes(state.labels);
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  state.metrics_log.push_back(std::move(m));
}

void continue_stage1(TrainingState& state, const TrainingData& data, const TrainConfig& cfg,
                     const RoundCallback& on_round, const PairHook& hook) {
  while (state.round < cfg.rounds) {
    stage1_round(state, data, cfg, hook);
    if (on_round) on_round(state);
  }
}

TrainingState run_stage1(const TrainingData& data, const TrainConfig& cfg, const RoundCallback& on_round,
                         const PairHook& hook) {
  TrainingState state = warmup(data, cfg, hook);
  if (on_round) on_round(state);
  continue_stage1(state, data, cfg, on_round, hook);
  return state;
}

FinalLabels final_labels(const model::ModelParams& params, const PseudoLabelSet& stage1, const TrainingData& data,
                         const TrainConfig& cfg) {
  const std::vector<KeypointSet> sets =
      describe(params, *data.corpus, data.train, correspondence::to_keypoint_sets(stage1), false);
  const std::vector<KeypointSet> mirrored = mirrored_sets(params, *data.corpus, data.train, sets);
  FinalLabels out;
  if (cfg.flip_augmentation) {
    auto [o, f] = correspondence::final_k_flip_clustering(sets, mirrored, cfg.K, mix_seed(cfg.seed, 3000),
                                                          cfg.kmeans_max_iters);
    out.labels = std::move(o);
    out.flipped = std::move(f);
  } else {
    out.labels = correspondence::final_k_clustering(sets, cfg.K, mix_seed(cfg.seed, 3000), cfg.kmeans_max_iters);
    out.flipped = correspondence::assign_to_centroids(mirrored, out.labels.centroids);
  }
  out.symmetry = correspondence::cluster_symmetry_map(out.labels, out.flipped);
  return out;
}

Stage2Model run_stage2(const TrainingState& stage1, const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  const int grid_h = stage1.params.dims.output_h(), grid_w = stage1.params.dims.output_w();
  const int K = cfg.K;

  FinalLabels fl = final_labels(stage1.params, stage1.labels, data, cfg);
  Stage2Model out;
  out.labels = std::move(fl.labels);
  out.symmetry = fl.symmetry.map;
  out.symmetry_confident = fl.symmetry.confident;

  out.params = stage1.params;
  model::reset_landmark_head(out.params, K, mix_seed(cfg.seed, 3001));
  model::OptimizerState opt = model::init_optimizer(out.params);
  static constexpr std::array<model::ParamGroup, 2> kGroups{model::ParamGroup::backbone,
                                                            model::ParamGroup::landmark};

  std::vector<int> usable = labelled_images(out.labels);
  out.skipped_images = static_cast<int>(out.labels.images.size() - usable.size());
  if (usable.empty() && cfg.stage2_iters > 0) throw UserError("stage 2: no image has a detected landmark");
  Rng rng(mix_seed(cfg.seed, 4000));
  for (int it = 0; it < cfg.stage2_iters; ++it) {
    std::vector<Tensor<float>> inputs;
    std::vector<model::Heatmap<float>> targets;
    std::vector<std::vector<int>> detected;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int pos = usable[rng.index(usable.size())];
      const bool mirrored_view = cfg.flip_augmentation && rng.bernoulli(0.5);
      const synth::ImageSample& sample = sample_of(data, pos);
      inputs.push_back(model::to_input<float>(mirrored_view ? mirror_raster(sample.raster) : sample.raster));
      model::Heatmap<float> t(K, grid_h, grid_w);
      std::vector<int> d;
      for (const auto& p : out.labels.images[static_cast<std::size_t>(pos)].points) {
        const int ch = mirrored_view ? out.symmetry[static_cast<std::size_t>(p.label)] : p.label;
        const Point2 at = mirrored_view ? mirror_grid_point(p.position, grid_w) : p.position;
        const auto one = model::render_target<float>(std::span<const Point2>(&at, 1), cfg.sigma, grid_h, grid_w);
        std::copy(one.data.begin(), one.data.end(), t.plane(ch).begin());
        d.push_back(ch);
      }
      targets.push_back(std::move(t));
      detected.push_back(std::move(d));
    }
    const double nb = static_cast<double>(inputs.size());
    const auto r = model::gradient<float>(out.params, inputs, [&](auto caches, auto outs) {
      double loss = 0.0;
      for (std::size_t i = 0; i < caches.size(); ++i) {
        model::Heatmap<float> g;
        loss += model::stage2_loss(caches[i].landmarks, targets[i], detected[i], &g);
        for (float& v : g.data) v = static_cast<float>(v / nb);
        outs[i].landmarks = std::move(g);
      }
      return loss / nb;
    });
    model::optimizer_step(out.params, r.grads, opt, rmsprop(cfg), kGroups);
    out.final_loss = r.loss;
  }
  return out;
}

std::vector<Landmark> infer(const model::ModelParams& params, const synth::Raster& raster, bool test_flip,
                            std::span<const int> symmetry) {
  const int K = params.dims.landmarks;
  if (K < 1) throw UserError("infer: model has no landmark head");
  const auto cache = model::forward(params, model::to_input<float>(raster));
  Tensor<float> maps = cache.landmarks;
  if (test_flip) {
    if (symmetry.size() != static_cast<std::size_t>(K)) throw UserError("infer: test-time flip needs a symmetry map");
    const auto flipped = model::forward(params, model::to_input<float>(mirror_raster(raster)));
    const int W = maps.w;
    for (int k = 0; k < K; ++k)
      for (int y = 0; y < maps.h; ++y)
        for (int x = 0; x < W; ++x)
          maps.at(k, y, x) = 0.5f * (cache.landmarks.at(k, y, x) +
                                     flipped.landmarks.at(symmetry[static_cast<std::size_t>(k)], y, W - 1 - x));
  }
  std::vector<Landmark> out(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const auto plane = maps.plane(k);
    const auto best = static_cast<int>(std::max_element(plane.begin(), plane.end()) - plane.begin());
    out[static_cast<std::size_t>(k)] = {{static_cast<double>(best % maps.w), static_cast<double>(best / maps.w)},
                                        plane[static_cast<std::size_t>(best)]};
  }
  return out;
}

}  // namespace ktl::training
