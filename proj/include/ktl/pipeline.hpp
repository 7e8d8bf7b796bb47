#pragma once

// Run configuration, run-directory persistence and the end-to-end
// train / evaluate / sweep orchestration behind the command-line tool.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ktl/eval.hpp"
#include "ktl/keypoints.hpp"
#include "ktl/synth.hpp"
#include "ktl/training.hpp"

namespace ktl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

enum class KeypointSourceKind { mixture, file };

struct KeypointConfig {
  KeypointSourceKind source = KeypointSourceKind::mixture;
  int n_points = 15;
  double real_ratio = 1.0;
  double jitter_px = 3.0;
  int anms_target = 0;  // 0 keeps every point
  std::string file;     // JSONL, when source = file
};

struct EvalConfig {
  eval::NormalizerKind normalizer = eval::NormalizerKind::interocular;
  int regressor_train_images = 0;  // 0 uses every training image
  int ced_samples = 101;
  double accuracy_threshold = 10.0;
  bool test_flip = false;
  std::vector<double> raw_thresholds{3.0, 6.0};  // pixels
  double precision_radius = 0.0;                  // 0: 10% of the mean normaliser
};

struct RunConfig {
  std::string corpus = "corpus";
  synth::SynthConfig synth;
  KeypointConfig keypoints;
  training::TrainConfig train;
  EvalConfig eval;
  bool log_wall_time = false;  // real seconds in metrics.csv (breaks byte-identical reruns)

  void validate() const;
};

json to_json(const RunConfig& c);
/// Overlays the keys present in j onto `base`. Unknown keys are errors.
RunConfig from_json(const json& j, RunConfig base = {});
RunConfig load_config(const fs::path& path);
void save_config(const fs::path& path, const RunConfig& c);

/// Writes text to path via a temporary file and rename.
void write_file_atomic(const fs::path& path, const std::string& text);
std::string read_file(const fs::path& path);

/// Initial keypoints for the corpus's training images, in train order.
std::vector<keypoints::KeypointSet> initial_keypoints(const synth::Corpus& corpus, const RunConfig& config);

// ---- evaluation --------------------------------------------------------------

struct StageEvaluation {
  eval::EvalReport report;
  eval::RawMetrics raw;
  double points_per_image = 0.0;  // over test images, before completion
  int stage = 1;
  bool test_flip = false;
};

/// Stage 1: final K-way labels on the training images, nearest-centroid labels
/// on re-extracted test keypoints, SVT completion on train, mean filling on test.
StageEvaluation evaluate_stage1(const model::ModelParams& params, const correspondence::PseudoLabelSet& labels,
                                const synth::Corpus& corpus, const RunConfig& config);

/// Stage 2: K landmarks per image from the landmark head.
StageEvaluation evaluate_stage2(const training::Stage2Model& model, const synth::Corpus& corpus,
                                const RunConfig& config, bool test_flip);

/// Ground truth against itself; sanity check of the protocol.
StageEvaluation evaluate_oracle(const synth::Corpus& corpus, const RunConfig& config);

json report_json(const StageEvaluation& e);
/// report.json, ced.svg and per_landmark.csv in dir.
void write_evaluation(const fs::path& dir, const StageEvaluation& e);

// ---- run directory --------------------------------------------------------------

enum class StageSelection { one, two, all };
StageSelection stage_from_string(const std::string& s);

struct TrainOptions {
  StageSelection stage = StageSelection::all;
  bool resume = false;
  bool force = false;
  bool quiet = false;
};

/// Latest completed Stage-1 round checkpoint in run_dir, if any.
std::optional<int> latest_round(const fs::path& run_dir);

std::string metrics_csv(const std::vector<training::RoundMetrics>& log, bool wall_time);
std::vector<training::RoundMetrics> read_metrics_csv(const fs::path& path);

void save_stage2(const fs::path& run_dir, const training::Stage2Model& m);
training::Stage2Model load_stage2(const fs::path& run_dir);

/// Loads corpus, config and latest Stage-1 state from a run directory.
training::TrainingState load_stage1(const fs::path& run_dir, int round, const RunConfig& config);

/// The `train` command. Writes config.json first, then per-round artefacts,
/// and evaluates every completed stage into eval/stage{N}/ (the last one is
/// also copied to report.json).
void train(const fs::path& run_dir, const RunConfig& config, const TrainOptions& options);

/// The `eval` command on an existing run directory.
StageEvaluation evaluate_run(const fs::path& run_dir, int stage, bool test_flip, bool oracle);

// ---- sweeps ----------------------------------------------------------------------

enum class SweepKind { noise, clusters, strategy };
SweepKind sweep_from_string(const std::string& s);
const char* to_string(SweepKind s);

struct SweepCell {
  std::string name;
  double x = 0.0;  // plotted value
  RunConfig config;
};

std::vector<SweepCell> sweep_cells(SweepKind kind, const RunConfig& base);

struct SweepRow {
  std::string name;
  double x = 0.0;
  double forward_nme = 0.0;
  double backward_nme = 0.0;
  double points_per_image = 0.0;
  std::string error;  // non-empty when the cell failed
};

/// Runs every cell in its own sub-directory of out_dir (train then evaluate
/// the requested stage), writes sweep.csv and sweep.svg.
std::vector<SweepRow> run_sweep(const fs::path& out_dir, SweepKind kind, const RunConfig& base,
                                StageSelection stage, int jobs, bool force);

}  // namespace ktl::pipeline
