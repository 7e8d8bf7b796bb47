#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_map>

#include "ktl/pipeline.hpp"

namespace ktl::pipeline {
namespace {

std::vector<keypoints::KeypointSet> mixture_keypoints(const synth::Corpus& corpus, const std::vector<int>& train,
                                                      const KeypointConfig& k, std::uint64_t seed) {
  std::vector<keypoints::KeypointSet> out;
  out.reserve(train.size());
  for (int idx : train) {
    const auto& sample = corpus.samples[static_cast<std::size_t>(idx)];
    out.push_back(keypoints::init_mixture(sample, k.n_points, k.real_ratio, k.jitter_px,
                                          mix_seed(seed, static_cast<std::uint64_t>(sample.sample_id))));
  }
  return out;
}

std::vector<keypoints::KeypointSet> file_keypoints(const synth::Corpus& corpus, const std::vector<int>& train,
                                                   const KeypointConfig& k) {
  std::vector<keypoints::KeypointSet> read = keypoints::read_keypoint_file(k.file);
  std::vector<keypoints::KeypointSet> out(train.size());
  std::unordered_map<int, std::size_t> slot;
  for (std::size_t i = 0; i < train.size(); ++i) {
    out[i].sample_id = corpus.samples[static_cast<std::size_t>(train[i])].sample_id;
    out[i].source = keypoints::KeypointSource::external_file;
    slot[out[i].sample_id] = i;
  }
  for (auto& s : read) {
    const auto it = slot.find(s.sample_id);
    if (it != slot.end()) out[it->second] = std::move(s);  // test and unknown samples are ignored
  }
  return out;
}

struct GtTable {
  std::vector<eval::Landmarks> gt;
  std::vector<double> normalizer;
};

GtTable gt_table(const synth::Corpus& corpus, const std::vector<int>& order, eval::NormalizerKind kind) {
  GtTable t;
  for (int idx : order) {
    const auto& s = corpus.samples[static_cast<std::size_t>(idx)];
    t.gt.push_back(s.gt_landmarks);
    double n = kind == eval::NormalizerKind::bbox_sqrt_area ? eval::bbox_sqrt_area(s.gt_landmarks)
                                                            : eval::interocular(s.gt_landmarks, s.eye_pair);
    if (!(n > 0.0)) throw UserError("eval: degenerate normaliser for sample " + std::to_string(s.sample_id));
    t.normalizer.push_back(n);
  }
  return t;
}

// Shared tail of every evaluation: unsup holds train images first, then test.
StageEvaluation finish(std::vector<eval::Landmarks> unsup, const synth::Corpus& corpus, const RunConfig& config,
                       int stage, double points_per_image) {
  const std::vector<int> train = corpus.train_indices(), test = corpus.test_indices();
  if (train.empty() || test.empty()) throw UserError("eval: the corpus needs both training and test images");
  std::vector<int> order = train;
  order.insert(order.end(), test.begin(), test.end());
  const GtTable gt = gt_table(corpus, order, config.eval.normalizer);

  eval::EvalInputs in;
  in.unsup = std::move(unsup);
  in.gt = gt.gt;
  in.normalizer = gt.normalizer;
  in.normalizer_kind = config.eval.normalizer;
  const int n_train = static_cast<int>(train.size());
  const int n_fit = config.eval.regressor_train_images > 0 ? std::min(config.eval.regressor_train_images, n_train) : n_train;
  for (int i = 0; i < n_fit; ++i) in.train.push_back(i);
  for (std::size_t i = 0; i < test.size(); ++i) in.test.push_back(n_train + static_cast<int>(i));

  StageEvaluation out;
  out.stage = stage;
  out.points_per_image = points_per_image;
  out.report = eval::forward_backward_eval(in, config.eval.ced_samples, config.eval.accuracy_threshold);

  double mean_norm = 0.0;
  for (double n : gt.normalizer) mean_norm += n;
  mean_norm /= static_cast<double>(gt.normalizer.size());
  const double radius = config.eval.precision_radius > 0.0 ? config.eval.precision_radius : 0.1 * mean_norm;
  out.raw = eval::raw_landmark_metrics(in.unsup, in.gt, in.train, in.test, config.eval.raw_thresholds, radius);
  return out;
}

}  // namespace

std::vector<keypoints::KeypointSet> initial_keypoints(const synth::Corpus& corpus, const RunConfig& config) {
  const std::vector<int> train = corpus.train_indices();
  std::vector<keypoints::KeypointSet> sets =
      config.keypoints.source == KeypointSourceKind::file
          ? file_keypoints(corpus, train, config.keypoints)
          : mixture_keypoints(corpus, train, config.keypoints, mix_seed(config.train.seed, 5));
  if (config.keypoints.anms_target > 0)
    for (auto& s : sets) s = keypoints::anms_filter(s, static_cast<std::size_t>(config.keypoints.anms_target));
  return sets;
}

StageEvaluation evaluate_stage1(const model::ModelParams& params, const correspondence::PseudoLabelSet& labels,
                                const synth::Corpus& corpus, const RunConfig& config) {
  const int K = config.train.K;
  training::TrainingData data;
  data.corpus = &corpus;
  data.train = corpus.train_indices();
  if (labels.images.size() != data.train.size())
    throw UserError("eval: Stage-1 labels do not cover the training split");
  const training::FinalLabels fl = training::final_labels(params, labels, data, config.train);
  const std::vector<int> test = corpus.test_indices();
  const auto test_labels = correspondence::assign_to_centroids(
      training::extract_all(params, corpus, test, config.train), fl.labels.centroids);

  const int n_train = static_cast<int>(data.train.size()), n_test = static_cast<int>(test.size());
  eval::LandmarkMatrix tr{K, n_train, std::vector<Point2>(static_cast<std::size_t>(K) * n_train),
                          std::vector<char>(static_cast<std::size_t>(K) * n_train, 0)};
  for (int j = 0; j < n_train; ++j)
    for (const auto& p : fl.labels.images[static_cast<std::size_t>(j)].points) {
      tr.at(p.label, j) = grid_to_pixel(p.position);
      tr.present[static_cast<std::size_t>(p.label) * n_train + j] = 1;
    }

  // Landmarks never found on a training image carry no information; drop them.
  std::vector<int> rows;
  for (int r = 0; r < K; ++r)
    for (int j = 0; j < n_train; ++j)
      if (tr.has(r, j)) {
        rows.push_back(r);
        break;
      }
  if (rows.empty()) throw UserError("eval: no Stage-1 landmark was detected on any training image");
  std::vector<int> cols;
  for (int j = 0; j < n_train; ++j)
    for (int r : rows)
      if (tr.has(r, j)) {
        cols.push_back(j);
        break;
      }

  const int R = static_cast<int>(rows.size());
  eval::LandmarkMatrix sub{R, static_cast<int>(cols.size()),
                           std::vector<Point2>(static_cast<std::size_t>(R) * cols.size()),
                           std::vector<char>(static_cast<std::size_t>(R) * cols.size(), 0)};
  for (int r = 0; r < R; ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      if (tr.has(rows[static_cast<std::size_t>(r)], cols[c])) {
        sub.at(r, static_cast<int>(c)) = tr.at(rows[static_cast<std::size_t>(r)], cols[c]);
        sub.present[static_cast<std::size_t>(r) * cols.size() + c] = 1;
      }
  const std::vector<Point2> means = eval::row_means(sub);
  const eval::LandmarkMatrix done = cols.size() > 1 ? eval::svt_complete(sub) : eval::fill_with_means(sub, means);

  std::vector<eval::Landmarks> unsup(static_cast<std::size_t>(n_train + n_test), eval::Landmarks(rows.size()));
  for (int j = 0; j < n_train; ++j)
    for (int r = 0; r < R; ++r) unsup[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] = means[static_cast<std::size_t>(r)];
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (int r = 0; r < R; ++r) unsup[static_cast<std::size_t>(cols[c])][static_cast<std::size_t>(r)] = done.at(r, static_cast<int>(c));

  double test_points = 0.0;
  std::vector<int> row_of(static_cast<std::size_t>(K), -1);
  for (int r = 0; r < R; ++r) row_of[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])] = r;
  for (int j = 0; j < n_test; ++j) {
    auto& u = unsup[static_cast<std::size_t>(n_train + j)];
    u = means;
    for (const auto& p : test_labels.images[static_cast<std::size_t>(j)].points) {
      test_points += 1.0;
      const int r = row_of[static_cast<std::size_t>(p.label)];
      if (r >= 0) u[static_cast<std::size_t>(r)] = grid_to_pixel(p.position);
    }
  }
  return finish(std::move(unsup), corpus, config, 1, n_test > 0 ? test_points / n_test : 0.0);
}

StageEvaluation evaluate_stage2(const training::Stage2Model& model, const synth::Corpus& corpus,
                                const RunConfig& config, bool test_flip) {
  std::vector<int> order = corpus.train_indices();
  const std::vector<int> test = corpus.test_indices();
  order.insert(order.end(), test.begin(), test.end());
  std::vector<eval::Landmarks> unsup;
  unsup.reserve(order.size());
  double points = 0.0;
  for (int idx : order) {
    const auto lms = training::infer(model.params, corpus.samples[static_cast<std::size_t>(idx)].raster, test_flip,
                                     model.symmetry);
    eval::Landmarks u;
    for (const auto& l : lms) u.push_back(grid_to_pixel(l.position));
    points += static_cast<double>(u.size());
    unsup.push_back(std::move(u));
  }
  StageEvaluation e = finish(std::move(unsup), corpus, config, 2, points / static_cast<double>(order.size()));
  e.test_flip = test_flip;
  return e;
}

StageEvaluation evaluate_oracle(const synth::Corpus& corpus, const RunConfig& config) {
  std::vector<int> order = corpus.train_indices();
  const std::vector<int> test = corpus.test_indices();
  order.insert(order.end(), test.begin(), test.end());
  std::vector<eval::Landmarks> unsup;
  for (int idx : order) unsup.push_back(corpus.samples[static_cast<std::size_t>(idx)].gt_landmarks);
  const double ppi = unsup.empty() ? 0.0 : static_cast<double>(unsup.front().size());
  return finish(std::move(unsup), corpus, config, 0, ppi);
}

json report_json(const StageEvaluation& e) {
  const auto& r = e.report;
  json ced = json::array();
  for (const auto& p : r.ced) ced.push_back({{"threshold", p.threshold}, {"fraction", p.fraction}});
  json per = json::array();
  for (std::size_t i = 0; i < r.per_landmark_accuracy.size(); ++i)
    per.push_back({{"landmark", i}, {"accuracy", r.per_landmark_accuracy[i]}, {"mean_error", r.per_landmark_error[i]}});
  return {{"stage", e.stage},
          {"test_flip", e.test_flip},
          {"forward_nme", r.forward_nme},
          {"backward_nme", r.backward_nme},
          {"normalizer_kind", eval::to_string(r.normalizer_kind)},
          {"n_train", r.n_train},
          {"n_test", r.n_test},
          {"points_per_image", e.points_per_image},
          {"accuracy_threshold", r.accuracy_threshold},
          {"matching", r.matching},
          {"per_landmark", per},
          {"ced", ced},
          {"raw",
           {{"matching", e.raw.matching},
            {"thresholds", e.raw.thresholds},
            {"pck", e.raw.pck},
            {"precision", e.raw.precision},
            {"precision_radius", e.raw.precision_radius}}}};
}

void write_evaluation(const fs::path& dir, const StageEvaluation& e) {
  fs::create_directories(dir);
  write_file_atomic(dir / "report.json", report_json(e).dump(2) + "\n");
  const std::string name = e.stage == 0 ? "oracle" : "stage " + std::to_string(e.stage) + (e.test_flip ? " (flip)" : "");
  const eval::CedSeries series{name, e.report.ced};
  write_file_atomic(dir / "ced.svg", eval::plot_ced(std::span<const eval::CedSeries>(&series, 1), "CED, " + name));
  std::string csv = "landmark,accuracy,mean_error\n";
  char buf[96];
  for (std::size_t i = 0; i < e.report.per_landmark_accuracy.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", i, e.report.per_landmark_accuracy[i], e.report.per_landmark_error[i]);
    csv += buf;
  }
  write_file_atomic(dir / "per_landmark.csv", csv);
}

}  // namespace ktl::pipeline
