#include <fstream>
#include <set>
#include <sstream>

#include "ktl/pipeline.hpp"

namespace ktl::pipeline {
namespace {

// Reads the keys present in one JSON object; anything left over is an error.
class Reader {
 public:
  Reader(const json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
    if (!j_.is_object()) throw UserError("config: '" + scope_ + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw UserError("config: unknown key '" + qualified(key) + "'");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw UserError("config: '" + qualified(key) + "' has the wrong type");
    }
  }

  template <typename E, typename Parse>
  void get_enum(const char* key, E& field, Parse parse) {
    std::string s;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, s);
    field = parse(s);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  std::string qualified(const std::string& key) const { return scope_.empty() ? key : scope_ + "." + key; }
  const json& j_;
  std::string scope_;
  std::set<std::string> seen_;
};

KeypointSourceKind source_from_string(const std::string& s) {
  if (s == "mixture") return KeypointSourceKind::mixture;
  if (s == "file") return KeypointSourceKind::file;
  throw UserError("config: keypoints.source must be 'mixture' or 'file', got '" + s + "'");
}

const char* to_string(KeypointSourceKind k) { return k == KeypointSourceKind::mixture ? "mixture" : "file"; }

}  // namespace

void RunConfig::validate() const {
  if (corpus.empty()) throw UserError("config: corpus path is empty");
  const auto& k = keypoints;
  if (k.n_points < 1) throw UserError("config: keypoints.n_points must be >= 1");
  if (!(k.real_ratio >= 0.0 && k.real_ratio <= 1.0)) throw UserError("config: keypoints.real_ratio must lie in [0, 1]");
  if (!(k.jitter_px >= 0.0)) throw UserError("config: keypoints.jitter_px must be >= 0");
  if (k.anms_target < 0) throw UserError("config: keypoints.anms_target must be >= 0");
  if (k.source == KeypointSourceKind::file && k.file.empty())
    throw UserError("config: keypoints.file is required when keypoints.source is 'file'");
  train.validate();
  if (eval.regressor_train_images < 0) throw UserError("config: eval.regressor_train_images must be >= 0");
  if (eval.ced_samples < 2) throw UserError("config: eval.ced_samples must be >= 2");
  if (!(eval.accuracy_threshold > 0.0)) throw UserError("config: eval.accuracy_threshold must be > 0");
  for (double t : eval.raw_thresholds)
    if (!(t > 0.0)) throw UserError("config: eval.raw_thresholds must be positive");
  if (!(eval.precision_radius >= 0.0)) throw UserError("config: eval.precision_radius must be >= 0");
}

json to_json(const RunConfig& c) {
  const auto& s = c.synth;
  const auto& k = c.keypoints;
  const auto& t = c.train;
  const auto& e = c.eval;
  return {
      {"corpus", c.corpus},
      {"log_wall_time", c.log_wall_time},
      {"synth",
       {{"n_images", s.n_images},
        {"template_pool", s.template_pool},
        {"image_size", s.image_size},
        {"deform_strength", s.deform_strength},
        {"seed", s.seed},
        {"landmarks", s.landmarks},
        {"distractor_fraction", s.distractor_fraction},
        {"max_rotation", s.max_rotation},
        {"flip_probability", s.flip_probability},
        {"elastic", s.elastic},
        {"test_fraction", s.test_fraction},
        {"category_seed", s.category_seed}}},
      {"keypoints",
       {{"source", to_string(k.source)},
        {"n_points", k.n_points},
        {"real_ratio", k.real_ratio},
        {"jitter_px", k.jitter_px},
        {"anms_target", k.anms_target},
        {"file", k.file}}},
      {"train",
       {{"margin", t.margin},
        {"lambda", t.lambda},
        {"learning_rate", t.learning_rate},
        {"weight_decay", t.weight_decay},
        {"batch_size", t.batch_size},
        {"two_step", t.two_step},
        {"warmup_iters", t.warmup_iters},
        {"recluster_every", t.recluster_every},
        {"rounds", t.rounds},
        {"stage2_iters", t.stage2_iters},
        {"K", t.K},
        {"M", t.M},
        {"kmeans_max_iters", t.kmeans_max_iters},
        {"flip_augmentation", t.flip_augmentation},
        {"positives_per_pair", t.positives_per_pair},
        {"negatives_per_image", t.negatives_per_image},
        {"r_min", t.r_min},
        {"transform_probability", t.transform_probability},
        {"transform_strength", t.transform_strength},
        {"negatives", training::to_string(t.negatives)},
        {"positives", training::to_string(t.positives)},
        {"sigma", t.sigma},
        {"nms_threshold", t.nms_threshold},
        {"nms_window", t.nms_window},
        {"max_points_per_image", t.max_points_per_image},
        {"outlier_density_k", t.outlier_density_k},
        {"outlier_drop_fraction", t.outlier_drop_fraction},
        {"hidden", t.hidden},
        {"descriptor_dim", t.descriptor_dim},
        {"seed", t.seed}}},
      {"eval",
       {{"normalizer", eval::to_string(e.normalizer)},
        {"regressor_train_images", e.regressor_train_images},
        {"ced_samples", e.ced_samples},
        {"accuracy_threshold", e.accuracy_threshold},
        {"test_flip", e.test_flip},
        {"raw_thresholds", e.raw_thresholds},
        {"precision_radius", e.precision_radius}}},
  };
}

RunConfig from_json(const json& j, RunConfig c) {
  Reader root(j, "");
  root.get("corpus", c.corpus);
  root.get("log_wall_time", c.log_wall_time);
  if (const json* sj = root.child("synth")) {
    Reader r(*sj, "synth");
    auto& s = c.synth;
    r.get("n_images", s.n_images);
    r.get("template_pool", s.template_pool);
    r.get("image_size", s.image_size);
    r.get("deform_strength", s.deform_strength);
    r.get("seed", s.seed);
    r.get("landmarks", s.landmarks);
    r.get("distractor_fraction", s.distractor_fraction);
    r.get("max_rotation", s.max_rotation);
    r.get("flip_probability", s.flip_probability);
    r.get("elastic", s.elastic);
    r.get("test_fraction", s.test_fraction);
    r.get("category_seed", s.category_seed);
  }
  if (const json* kj = root.child("keypoints")) {
    Reader r(*kj, "keypoints");
    auto& k = c.keypoints;
    r.get_enum("source", k.source, source_from_string);
    r.get("n_points", k.n_points);
    r.get("real_ratio", k.real_ratio);
    r.get("jitter_px", k.jitter_px);
    r.get("anms_target", k.anms_target);
    r.get("file", k.file);
  }
  if (const json* tj = root.child("train")) {
    Reader r(*tj, "train");
    auto& t = c.train;
    r.get("margin", t.margin);
    r.get("lambda", t.lambda);
    r.get("learning_rate", t.learning_rate);
    r.get("weight_decay", t.weight_decay);
    r.get("batch_size", t.batch_size);
    r.get("two_step", t.two_step);
    r.get("warmup_iters", t.warmup_iters);
    r.get("recluster_every", t.recluster_every);
    r.get("rounds", t.rounds);
    r.get("stage2_iters", t.stage2_iters);
    r.get("K", t.K);
    r.get("M", t.M);
    r.get("kmeans_max_iters", t.kmeans_max_iters);
    r.get("flip_augmentation", t.flip_augmentation);
    r.get("positives_per_pair", t.positives_per_pair);
    r.get("negatives_per_image", t.negatives_per_image);
    r.get("r_min", t.r_min);
    r.get("transform_probability", t.transform_probability);
    r.get("transform_strength", t.transform_strength);
    r.get_enum("negatives", t.negatives, training::negative_strategy_from_string);
    r.get_enum("positives", t.positives, training::positive_source_from_string);
    r.get("sigma", t.sigma);
    r.get("nms_threshold", t.nms_threshold);
    r.get("nms_window", t.nms_window);
    r.get("max_points_per_image", t.max_points_per_image);
    r.get("outlier_density_k", t.outlier_density_k);
    r.get("outlier_drop_fraction", t.outlier_drop_fraction);
    r.get("hidden", t.hidden);
    r.get("descriptor_dim", t.descriptor_dim);
    r.get("seed", t.seed);
  }
  if (const json* ej = root.child("eval")) {
    Reader r(*ej, "eval");
    auto& e = c.eval;
    r.get_enum("normalizer", e.normalizer, eval::normalizer_from_string);
    r.get("regressor_train_images", e.regressor_train_images);
    r.get("ced_samples", e.ced_samples);
    r.get("accuracy_threshold", e.accuracy_threshold);
    r.get("test_flip", e.test_flip);
    r.get("raw_thresholds", e.raw_thresholds);
    r.get("precision_radius", e.precision_radius);
  }
  return c;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UserError("cannot write " + path.string());
    out << text;
    if (!out) throw UserError("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw UserError("malformed config " + path.string() + ": " + e.what());
  }
  RunConfig c = from_json(j);
  c.validate();
  return c;
}

void save_config(const fs::path& path, const RunConfig& c) { write_file_atomic(path, to_json(c).dump(2) + "\n"); }

}  // namespace ktl::pipeline
