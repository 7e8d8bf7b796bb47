#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ktl/pipeline.hpp"

namespace ktl::pipeline {
namespace {

fs::path checkpoint_path(const fs::path& run_dir, int round) {
  return run_dir / "checkpoints" / ("round_" + std::to_string(round) + ".ktl");
}
fs::path labels_path(const fs::path& run_dir, int round, bool flipped) {
  return run_dir / "labels" / ("round_" + std::to_string(round) + (flipped ? "_flipped" : "") + ".jsonl");
}

void log(bool quiet, const std::string& line) {
  if (!quiet) std::cerr << line << std::endl;
}

std::string format(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

void persist_round(const fs::path& run_dir, const training::TrainingState& s, const RunConfig& config) {
  model::Checkpoint ck{s.params, s.optimizer, s.round};
  correspondence::write_labels(labels_path(run_dir, s.round, false), s.labels);
  if (s.flipped_labels) correspondence::write_labels(labels_path(run_dir, s.round, true), *s.flipped_labels);
  write_file_atomic(run_dir / "metrics.csv", metrics_csv(s.metrics_log, config.log_wall_time));
  if (s.round == 0)
    write_file_atomic(run_dir / "warmup.json",
                      json{{"warmup_iters", config.train.warmup_iters},
                           {"descriptor_loss", s.warmup_loss},
                           {"points_per_image", s.labels.points_per_image()}}
                              .dump(2) +
                          "\n");
  // The checkpoint goes last: its presence marks the round as complete.
  model::save_checkpoint(checkpoint_path(run_dir, s.round), ck);
}

void clear_run(const fs::path& run_dir) {
  for (const char* name : {"checkpoints", "labels", "eval"}) fs::remove_all(run_dir / name);
  for (const char* name : {"metrics.csv", "report.json", "warmup.json", "stage2_meta.json", "config.json"})
    fs::remove(run_dir / name);
}

void evaluate_into(const fs::path& run_dir, const StageEvaluation& e) {
  const fs::path dir = run_dir / "eval" / ("stage" + std::to_string(e.stage) + (e.test_flip ? "_flip" : ""));
  write_evaluation(dir, e);
}

}  // namespace

StageSelection stage_from_string(const std::string& s) {
  if (s == "1") return StageSelection::one;
  if (s == "2") return StageSelection::two;
  if (s == "all") return StageSelection::all;
  throw UserError("--stage must be 1, 2 or all (got '" + s + "')");
}

std::optional<int> latest_round(const fs::path& run_dir) {
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<int> best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int r = -1;
    char tail = 0;
    if (std::sscanf(name.c_str(), "round_%d.ktl%c", &r, &tail) == 1 && r >= 0 && (!best || r > *best)) best = r;
  }
  return best;
}

std::string metrics_csv(const std::vector<training::RoundMetrics>& log, bool wall_time) {
  std::string out = "round,detector_loss,descriptor_loss,points_per_image,wall_seconds\n";
  char buf[200];
  for (const auto& m : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.6f,%.3f\n", m.round, m.detector_loss, m.descriptor_loss,
                  m.points_per_image, wall_time ? m.wall_seconds : 0.0);
    out += buf;
  }
  return out;
}

std::vector<training::RoundMetrics> read_metrics_csv(const fs::path& path) {
  std::vector<training::RoundMetrics> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    training::RoundMetrics m;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &m.round, &m.detector_loss, &m.descriptor_loss,
                    &m.points_per_image, &m.wall_seconds) != 5)
      throw UserError("malformed metrics row in " + path.string() + ": " + line);
    out.push_back(m);
  }
  return out;
}

training::TrainingState load_stage1(const fs::path& run_dir, int round, const RunConfig& config) {
  const model::Checkpoint ck = model::load_checkpoint(checkpoint_path(run_dir, round));
  if (ck.round != round)
    throw UserError("checkpoint " + checkpoint_path(run_dir, round).string() + " holds round " + std::to_string(ck.round));
  training::TrainingState s;
  s.params = ck.model;
  s.optimizer = ck.optimizer;
  s.round = round;
  s.labels = correspondence::read_labels(labels_path(run_dir, round, false), config.train.M);
  if (config.train.flip_augmentation)
    s.flipped_labels = correspondence::read_labels(labels_path(run_dir, round, true), config.train.M);
  if (fs::exists(run_dir / "metrics.csv"))
    for (const auto& m : read_metrics_csv(run_dir / "metrics.csv"))
      if (m.round <= round) s.metrics_log.push_back(m);
  if (static_cast<int>(s.metrics_log.size()) != round)
    throw UserError("metrics.csv in " + run_dir.string() + " does not match round " + std::to_string(round));
  return s;
}

void save_stage2(const fs::path& run_dir, const training::Stage2Model& m) {
  correspondence::write_labels(run_dir / "labels" / "stage2.jsonl", m.labels);
  std::vector<int> confident(m.symmetry_confident.begin(), m.symmetry_confident.end());
  write_file_atomic(run_dir / "stage2_meta.json", json{{"K", m.params.dims.landmarks},
                                                       {"symmetry", m.symmetry},
                                                       {"symmetry_confident", confident},
                                                       {"final_loss", m.final_loss},
                                                       {"skipped_images", m.skipped_images}}
                                                          .dump(2) +
                                                      "\n");
  model::save_checkpoint(run_dir / "checkpoints" / "stage2.ktl", {m.params, model::init_optimizer(m.params), m.labels.round});
}

training::Stage2Model load_stage2(const fs::path& run_dir) {
  const fs::path ck_path = run_dir / "checkpoints" / "stage2.ktl";
  if (!fs::exists(ck_path)) throw UserError("no Stage-2 checkpoint in " + run_dir.string() + " (run train --stage 2)");
  training::Stage2Model m;
  m.params = model::load_checkpoint(ck_path).model;
  json meta;
  try {
    meta = json::parse(read_file(run_dir / "stage2_meta.json"));
    m.symmetry = meta.at("symmetry").get<std::vector<int>>();
    for (int c : meta.at("symmetry_confident").get<std::vector<int>>()) m.symmetry_confident.push_back(static_cast<char>(c));
    m.final_loss = meta.at("final_loss");
    m.skipped_images = meta.at("skipped_images");
  } catch (const json::exception& e) {
    throw UserError("malformed stage2_meta.json in " + run_dir.string() + ": " + e.what());
  }
  const int K = m.params.dims.landmarks;
  if (static_cast<int>(m.symmetry.size()) != K) throw UserError("stage2_meta.json does not match the checkpoint");
  m.labels = correspondence::read_labels(run_dir / "labels" / "stage2.jsonl", K);
  return m;
}

void train(const fs::path& run_dir, const RunConfig& config, const TrainOptions& opt) {
  config.validate();
  const bool existing = fs::exists(run_dir / "config.json");
  if (opt.resume) {
    if (!existing) throw UserError("nothing to resume in " + run_dir.string());
  } else if (existing) {
    if (!opt.force) throw UserError("run directory " + run_dir.string() + " already holds a run (use --force or --resume)");
    clear_run(run_dir);
  }
  fs::create_directories(run_dir);
  save_config(run_dir / "config.json", config);

  const synth::Corpus corpus = synth::load_corpus(config.corpus);
  const training::TrainingData data = training::make_training_data(corpus, initial_keypoints(corpus, config));
  const training::TrainConfig& tc = config.train;

  auto on_round = [&](const training::TrainingState& s) {
    persist_round(run_dir, s, config);
    if (s.round == 0)
      log(opt.quiet, format("warm-up done: L_f %.4f, %.2f labelled points per image", s.warmup_loss,
                            s.labels.points_per_image()));
    else {
      const auto& m = s.metrics_log.back();
      log(opt.quiet, "round " + std::to_string(s.round) + "/" + std::to_string(tc.rounds) +
                         format(": L_d %.5f, L_f %.4f, %.2f points per image", m.detector_loss, m.descriptor_loss,
                                m.points_per_image));
    }
  };

  training::TrainingState state;
  const std::optional<int> latest = latest_round(run_dir);
  if (opt.stage == StageSelection::two) {
    if (!latest) throw UserError("Stage 2 needs a Stage-1 checkpoint in " + run_dir.string());
    state = load_stage1(run_dir, *latest, config);
  } else if (opt.resume && latest) {
    state = load_stage1(run_dir, *latest, config);
    log(opt.quiet, "resuming after round " + std::to_string(*latest));
    training::continue_stage1(state, data, tc, on_round);
  } else {
    state = training::run_stage1(data, tc, on_round);
  }

  StageEvaluation last;
  if (opt.stage != StageSelection::two) {
    last = evaluate_stage1(state.params, state.labels, corpus, config);
    evaluate_into(run_dir, last);
    log(opt.quiet, format("stage 1: forward NME %.3f, backward NME %.3f", last.report.forward_nme,
                          last.report.backward_nme));
  }
  if (opt.stage != StageSelection::one) {
    const training::Stage2Model m = training::run_stage2(state, data, tc);
    save_stage2(run_dir, m);
    last = evaluate_stage2(m, corpus, config, config.eval.test_flip);
    evaluate_into(run_dir, last);
    log(opt.quiet, format("stage 2: forward NME %.3f, backward NME %.3f", last.report.forward_nme,
                          last.report.backward_nme));
  }
  write_file_atomic(run_dir / "report.json", report_json(last).dump(2) + "\n");
}

StageEvaluation evaluate_run(const fs::path& run_dir, int stage, bool test_flip, bool oracle) {
  const RunConfig config = load_config(run_dir / "config.json");
  const synth::Corpus corpus = synth::load_corpus(config.corpus);
  StageEvaluation e;
  if (oracle) {
    e = evaluate_oracle(corpus, config);
    write_evaluation(run_dir / "eval" / "oracle", e);
    return e;
  }
  if (stage == 1) {
    const std::optional<int> latest = latest_round(run_dir);
    if (!latest) throw UserError("no Stage-1 checkpoint in " + run_dir.string());
    const training::TrainingState s = load_stage1(run_dir, *latest, config);
    e = evaluate_stage1(s.params, s.labels, corpus, config);
  } else if (stage == 2) {
    e = evaluate_stage2(load_stage2(run_dir), corpus, config, test_flip);
  } else {
    throw UserError("--stage must be 1 or 2 for eval");
  }
  evaluate_into(run_dir, e);
  return e;
}

SweepKind sweep_from_string(const std::string& s) {
  if (s == "noise") return SweepKind::noise;
  if (s == "clusters") return SweepKind::clusters;
  if (s == "strategy") return SweepKind::strategy;
  throw UserError("unknown sweep '" + s + "' (noise, clusters, strategy)");
}

const char* to_string(SweepKind s) {
  switch (s) {
    case SweepKind::noise: return "noise";
    case SweepKind::clusters: return "clusters";
    case SweepKind::strategy: return "strategy";
  }
  return "?";
}

std::vector<SweepCell> sweep_cells(SweepKind kind, const RunConfig& base) {
  std::vector<SweepCell> cells;
  char name[64];
  switch (kind) {
    case SweepKind::noise:
      for (int i = 0; i <= 5; ++i) {
        SweepCell c{"", i * 0.2, base};
        c.config.keypoints.real_ratio = i * 0.2;
        std::snprintf(name, sizeof name, "real_ratio_%.1f", c.x);
        c.name = name;
        cells.push_back(std::move(c));
      }
      break;
    case SweepKind::clusters: {
      const int K = base.train.K;
      for (int m : {K, 2 * K, 3 * K}) {
        SweepCell c{"M_" + std::to_string(m), static_cast<double>(m), base};
        c.config.train.M = m;
        cells.push_back(std::move(c));
      }
      break;
    }
    case SweepKind::strategy: {
      int i = 0;
      for (auto neg : {training::NegativeStrategy::same_image, training::NegativeStrategy::different_cluster})
        for (auto pos : {training::PositiveSource::clustering, training::PositiveSource::equivariance}) {
          SweepCell c{std::string(training::to_string(neg)) + "+" + training::to_string(pos), static_cast<double>(i++), base};
          c.config.train.negatives = neg;
          c.config.train.positives = pos;
          cells.push_back(std::move(c));
        }
      break;
    }
  }
  return cells;
}

std::vector<SweepRow> run_sweep(const fs::path& out_dir, SweepKind kind, const RunConfig& base, StageSelection stage,
                                int jobs, bool force) {
  const std::vector<SweepCell> cells = sweep_cells(kind, base);
  std::set<std::string> names;
  for (const auto& c : cells)
    if (!names.insert(c.name).second) throw UserError("sweep cells share the run directory '" + c.name + "'");
  const fs::path corpus = fs::weakly_canonical(fs::absolute(base.corpus));
  const fs::path out = fs::weakly_canonical(fs::absolute(out_dir));
  if (out == corpus || std::mismatch(out.begin(), out.end(), corpus.begin(), corpus.end()).first == out.end())
    throw UserError("sweep directory " + out_dir.string() + " overlaps the corpus");
  fs::create_directories(out_dir);

  std::vector<SweepRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const SweepCell& c = cells[i];
      SweepRow& row = rows[i];
      row.name = c.name;
      row.x = c.x;
      try {
        train(out_dir / c.name, c.config, {stage, false, force, true});
        const json r = json::parse(read_file(out_dir / c.name / "report.json"));
        row.forward_nme = r.at("forward_nme");
        row.backward_nme = r.at("backward_nme");
        row.points_per_image = r.at("points_per_image");
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      std::lock_guard<std::mutex> lock(io);
      std::cerr << "cell " << c.name << (row.error.empty() ? format(": forward NME %.3f", row.forward_nme)
                                                           : ": failed (" + row.error + ")")
                << std::endl;
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string csv = "cell,x,forward_nme,backward_nme,points_per_image,error\n";
  char buf[256];
  eval::LinePlotSeries fwd{"forward NME", {}}, bwd{"backward NME", {}};
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%g,%.6f,%.6f,%.4f,", r.name.c_str(), r.x, r.forward_nme, r.backward_nme,
                  r.points_per_image);
    std::string err = r.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n') ch = ' ';
    csv += buf + err + "\n";
    if (r.error.empty()) {
      fwd.points.emplace_back(r.x, r.forward_nme);
      bwd.points.emplace_back(r.x, r.backward_nme);
    }
  }
  write_file_atomic(out_dir / "sweep.csv", csv);
  const std::vector<eval::LinePlotSeries> series{fwd, bwd};
  const char* x_label = kind == SweepKind::noise ? "real ratio" : kind == SweepKind::clusters ? "M" : "strategy";
  write_file_atomic(out_dir / "sweep.svg",
                    eval::plot_lines(series, std::string(to_string(kind)) + " sweep", x_label, "NME (%)"));
  return rows;
}

}  // namespace ktl::pipeline
