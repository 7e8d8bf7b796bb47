// ktl: corpus generation, training, evaluation, sweeps and inference.

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "ktl/pipeline.hpp"

namespace fs = std::filesystem;
using ktl::pipeline::json;
using ktl::pipeline::RunConfig;

namespace {

struct Common {
  std::string run_dir;
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> corpus;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--run-dir", c.run_dir, "Run directory (default: $KTL_RUN_DIR or ./run)");
  cmd->add_option("--config", c.config_file, "JSON config file");
  cmd->add_option("--set", c.sets, "Override a config key, e.g. --set train.K=10");
  cmd->add_option("--seed", c.seed, "Seed for corpus generation and training");
  cmd->add_option("--corpus", c.corpus, "Corpus directory");
}

fs::path run_dir_of(const Common& c) {
  if (!c.run_dir.empty()) return c.run_dir;
  if (const char* env = std::getenv("KTL_RUN_DIR"); env && *env) return env;
  return "run";
}

// "a.b=value" -> {"a": {"b": value}}; value is parsed as JSON when possible.
json override_of(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ktl::UserError("--set expects key=value, got '" + s + "'");
  const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json root = json::object();
  json* node = &root;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1)
    node = &(*node)[key.substr(start, dot - start)];
  (*node)[key.substr(start)] = value;
  return root;
}

RunConfig resolve(const Common& c, RunConfig base) {
  if (!c.config_file.empty()) {
    json j;
    try {
      j = json::parse(ktl::pipeline::read_file(c.config_file));
    } catch (const json::parse_error& e) {
      throw ktl::UserError("malformed config " + c.config_file + ": " + e.what());
    }
    base = ktl::pipeline::from_json(j, base);
  }
  for (const auto& s : c.sets) base = ktl::pipeline::from_json(override_of(s), base);
  if (c.seed) {
    base.synth.seed = *c.seed;
    base.train.seed = *c.seed;
  }
  if (c.corpus) base.corpus = *c.corpus;
  base.validate();
  return base;
}

void print_eval(const ktl::pipeline::StageEvaluation& e) {
  const auto& r = e.report;
  std::printf("forward NME %.4f  backward NME %.4f  points/image %.2f  (train %d, test %d, %s)\n", r.forward_nme,
              r.backward_nme, e.points_per_image, r.n_train, r.n_test, ktl::eval::to_string(r.normalizer_kind));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised landmark discovery by keypoint correspondence recovery"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, ablate_c, infer_c;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic corpus");
  add_common(gen, gen_c);
  std::optional<int> n_images;
  bool gen_force = false;
  gen->add_option("--n-images", n_images, "Number of images");
  gen->add_flag("--force", gen_force, "Overwrite an existing corpus");

  auto* tr = app.add_subcommand("train", "Train Stage 1 and/or Stage 2");
  add_common(tr, train_c);
  std::string stage = "all";
  std::optional<int> rounds;
  bool resume = false, force = false, quiet = false;
  tr->add_option("--stage", stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
  tr->add_option("--rounds", rounds, "Number of Stage-1 rounds");
  tr->add_flag("--resume", resume, "Continue from the latest checkpoint");
  tr->add_flag("--force", force, "Replace an existing run");
  tr->add_flag("--quiet", quiet, "No progress output");

  auto* ev = app.add_subcommand("eval", "Evaluate a trained run");
  add_common(ev, eval_c);
  int eval_stage = 2;
  bool test_flip = false, oracle = false;
  ev->add_option("--stage", eval_stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  ev->add_flag("--test-flip", test_flip, "Average with the mirrored prediction (Stage 2)");
  ev->add_flag("--oracle", oracle, "Evaluate ground truth against itself");

  auto* ab = app.add_subcommand("ablate", "Run an ablation sweep");
  add_common(ab, ablate_c);
  std::string sweep = "noise", ab_stage = "1", ab_out;
  int jobs = 1;
  bool ab_force = false;
  ab->add_option("--sweep", sweep, "noise, clusters or strategy")->check(CLI::IsMember({"noise", "clusters", "strategy"}));
  ab->add_option("--stage", ab_stage, "Stage evaluated per cell: 1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
  ab->add_option("--out", ab_out, "Sweep directory (default: <run-dir>/ablate/<sweep>)");
  ab->add_option("--jobs", jobs, "Cells run in parallel")->check(CLI::PositiveNumber);
  ab->add_flag("--force", ab_force, "Replace existing cells");

  auto* inf = app.add_subcommand("infer", "Predict K landmarks with a Stage-2 model");
  add_common(inf, infer_c);
  std::optional<int> sample_id;
  std::string raster_path;
  bool infer_flip = false;
  inf->add_option("--sample", sample_id, "Sample id in the run's corpus");
  inf->add_option("--raster", raster_path, "Raster file (.ldr)");
  inf->add_flag("--test-flip", infer_flip, "Average with the mirrored prediction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) {
      RunConfig c = resolve(gen_c, {});
      if (n_images) c.synth.n_images = *n_images;
      c.validate();
      const ktl::synth::Corpus corpus = ktl::synth::generate_corpus(c.synth);
      ktl::synth::save_corpus(corpus, c.corpus, gen_force);
      std::printf("corpus %s: %zu images (%zu train, %zu test), %zu templates, %dx%d px, %d landmarks\n",
                  c.corpus.c_str(), corpus.samples.size(), corpus.train_indices().size(),
                  corpus.test_indices().size(), corpus.templates.size(), c.synth.image_size, c.synth.image_size,
                  c.synth.landmarks);
    } else if (*tr) {
      const fs::path run_dir = run_dir_of(train_c);
      RunConfig base;
      if (resume && fs::exists(run_dir / "config.json")) base = ktl::pipeline::load_config(run_dir / "config.json");
      RunConfig c = resolve(train_c, base);
      if (rounds) c.train.rounds = *rounds;
      c.validate();
      ktl::pipeline::train(run_dir, c, {ktl::pipeline::stage_from_string(stage), resume, force, quiet});
      std::printf("run complete: %s\n", run_dir.c_str());
    } else if (*ev) {
      const fs::path run_dir = run_dir_of(eval_c);
      print_eval(ktl::pipeline::evaluate_run(run_dir, eval_stage, test_flip, oracle));
    } else if (*ab) {
      const fs::path run_dir = run_dir_of(ablate_c);
      const RunConfig c = resolve(ablate_c, {});
      const auto kind = ktl::pipeline::sweep_from_string(sweep);
      const fs::path out = ab_out.empty() ? run_dir / "ablate" / sweep : fs::path(ab_out);
      const auto rows = ktl::pipeline::run_sweep(out, kind, c, ktl::pipeline::stage_from_string(ab_stage), jobs, ab_force);
      int failed = 0;
      for (const auto& r : rows) {
        if (!r.error.empty()) ++failed;
        std::printf("%-36s forward %.4f  backward %.4f%s\n", r.name.c_str(), r.forward_nme, r.backward_nme,
                    r.error.empty() ? "" : "  FAILED");
      }
      std::printf("sweep written to %s\n", out.c_str());
      if (failed) return 1;
    } else if (*inf) {
      const fs::path run_dir = run_dir_of(infer_c);
      const RunConfig c = ktl::pipeline::load_config(run_dir / "config.json");
      const auto model = ktl::pipeline::load_stage2(run_dir);
      ktl::synth::Raster raster;
      if (!raster_path.empty()) {
        raster = ktl::synth::read_raster(raster_path);
      } else if (sample_id) {
        const ktl::synth::Corpus corpus = ktl::synth::load_corpus(c.corpus);
        bool found = false;
        for (const auto& s : corpus.samples)
          if (s.sample_id == *sample_id) {
            raster = s.raster;
            found = true;
          }
        if (!found) throw ktl::UserError("no sample " + std::to_string(*sample_id) + " in " + c.corpus);
      } else {
        throw ktl::UserError("infer needs --sample or --raster");
      }
      json out = json::array();
      for (const auto& l : ktl::training::infer(model.params, raster, infer_flip, model.symmetry)) {
        const ktl::Point2 p = ktl::grid_to_pixel(l.position);
        out.push_back({{"x", p.x}, {"y", p.y}, {"confidence", l.confidence}});
      }
      std::printf("%s\n", out.dump().c_str());
    }
  } catch (const ktl::UserError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const ktl::InternalError& e) {
    std::cerr << "internal error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
