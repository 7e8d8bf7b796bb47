#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "ktl/pipeline.hpp"
#include "test_util.hpp"

using namespace ktl;
using namespace ktl::pipeline;

namespace {

int ktl_cli(const std::string& args) {
  const std::string cmd = std::string(KTL_BINARY) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return read_file(p); }

// Tiny end-to-end configuration; a full run takes well under a second.
RunConfig tiny(const fs::path& corpus) {
  RunConfig c;
  c.corpus = corpus.string();
  c.synth.n_images = 30;
  c.synth.image_size = 32;
  c.synth.template_pool = 2;
  c.synth.landmarks = 4;
  c.keypoints.n_points = 6;
  c.keypoints.real_ratio = 0.5;
  c.keypoints.jitter_px = 1.0;
  auto& t = c.train;
  t.hidden = 4;
  t.descriptor_dim = 6;
  t.batch_size = 2;
  t.warmup_iters = 4;
  t.recluster_every = 3;
  t.rounds = 2;
  t.stage2_iters = 4;
  t.K = 4;
  t.M = 8;
  t.nms_threshold = 0.0;
  t.max_points_per_image = 8;
  t.positives_per_pair = 8;
  t.negatives_per_image = 8;
  t.r_min = 2.0;
  t.outlier_density_k = 3;
  return c;
}

struct Fixture {
  testutil::TempDir dir{"pipeline"};
  fs::path corpus = dir.path() / "corpus";
  fs::path config = dir.path() / "config.json";
  RunConfig cfg = tiny(corpus);

  Fixture() {
    save_config(config, cfg);
    REQUIRE(ktl_cli("generate --config " + config.string()) == 0);
  }
  std::string run(const std::string& name) const { return (dir.path() / name).string(); }
};

}  // namespace

TEST_CASE("config: JSON round trip, overlay and unknown keys") {
  RunConfig c = tiny("somewhere");
  c.train.negatives = training::NegativeStrategy::different_cluster;
  c.eval.normalizer = eval::NormalizerKind::bbox_sqrt_area;
  const json j = to_json(c);
  CHECK(to_json(from_json(j)) == j);
  const RunConfig o = from_json(json::parse(R"({"train": {"K": 7, "M": 21}})"), c);
  CHECK(o.train.K == 7);
  CHECK(o.train.hidden == c.train.hidden);
  CHECK_THROWS_AS(from_json(json::parse(R"({"train": {"kk": 1}})")), UserError);
  CHECK_THROWS_AS(from_json(json::parse(R"({"trian": {}})")), UserError);
  CHECK_THROWS_AS(from_json(json::parse(R"({"train": {"K": "ten"}})")), UserError);
  RunConfig bad = c;
  bad.train.M = 2;
  CHECK_THROWS_AS(bad.validate(), UserError);
}

TEST_CASE("cli: exit codes and refusals") {
  Fixture f;
  const std::string cfg = "--config " + f.config.string();
  CHECK(ktl_cli("generate " + cfg) == 1);  // existing corpus without --force
  CHECK(ktl_cli("generate " + cfg + " --force") == 0);
  CHECK(ktl_cli("train " + cfg + " --set train.nope=1 --run-dir " + f.run("r")) == 1);
  CHECK(ktl_cli("train " + cfg + " --set train.K=0 --run-dir " + f.run("r")) == 1);
  CHECK(ktl_cli("eval --run-dir " + f.run("missing")) == 1);
  CHECK(ktl_cli("train --stage 2 " + cfg + " --run-dir " + f.run("s2")) == 1);
  CHECK(ktl_cli("frobnicate") == 1);
  std::ofstream(f.dir.path() / "broken.json") << "{\"train\": ";
  CHECK(ktl_cli("train --config " + (f.dir.path() / "broken.json").string() + " --run-dir " + f.run("b")) == 1);
}

TEST_CASE("cli: generate is reproducible for a fixed seed") {
  Fixture f;
  const fs::path other = f.dir.path() / "corpus2";
  CHECK(ktl_cli("generate --config " + f.config.string() + " --corpus " + other.string()) == 0);
  CHECK(slurp(f.corpus / "corpus.json") == slurp(other / "corpus.json"));
  CHECK(slurp(f.corpus / "rasters" / "000007.ldr") == slurp(other / "rasters" / "000007.ldr"));
}

TEST_CASE("cli: warm-up only run leaves exactly one checkpoint") {
  Fixture f;
  CHECK(ktl_cli("train --quiet --stage 1 --rounds 0 --config " + f.config.string() + " --run-dir " + f.run("w")) == 0);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(fs::path(f.run("w")) / "checkpoints")) names.push_back(e.path().filename());
  CHECK(names == std::vector<std::string>{"round_0.ktl"});
  CHECK(fs::exists(fs::path(f.run("w")) / "eval" / "stage1" / "report.json"));
}

TEST_CASE("cli: full run, inference, oracle and byte-identical reruns") {
  Fixture f;
  const std::string cfg = " --quiet --config " + f.config.string() + " --run-dir ";
  REQUIRE(ktl_cli("train" + cfg + f.run("a")) == 0);
  REQUIRE(ktl_cli("train" + cfg + f.run("b")) == 0);
  const fs::path a = f.run("a"), b = f.run("b");
  for (const char* file : {"metrics.csv", "report.json", "eval/stage1/report.json", "eval/stage2/ced.svg",
                           "eval/stage2/per_landmark.csv", "labels/round_2.jsonl"})
    CHECK_MESSAGE(slurp(a / file) == slurp(b / file), file);
  CHECK(fs::exists(a / "checkpoints" / "stage2.ktl"));
  CHECK(ktl_cli("infer --sample 3 --run-dir " + a.string()) == 0);
  CHECK(ktl_cli("infer --run-dir " + a.string()) == 1);

  const json s2 = json::parse(slurp(a / "eval" / "stage2" / "report.json"));
  CHECK(s2.at("points_per_image").get<double>() == doctest::Approx(4.0));

  // A rerun over an existing run needs --force and reproduces it exactly.
  CHECK(ktl_cli("train" + cfg + f.run("a")) == 1);
  CHECK(ktl_cli("train --force" + cfg + f.run("a")) == 0);
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));

  CHECK(ktl_cli("eval --oracle --run-dir " + a.string()) == 0);
  const json oracle = json::parse(slurp(a / "eval" / "oracle" / "report.json"));
  CHECK(oracle.at("forward_nme").get<double>() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("cli: interrupted then resumed run matches an uninterrupted one") {
  Fixture f;
  const std::string cfg = " --quiet --config " + f.config.string() + " --run-dir ";
  REQUIRE(ktl_cli("train --stage 1" + cfg + f.run("full")) == 0);
  REQUIRE(ktl_cli("train --stage 1 --rounds 1" + cfg + f.run("part")) == 0);
  REQUIRE(ktl_cli("train --stage 1 --resume --rounds 2 --quiet --run-dir " + f.run("part")) == 0);
  CHECK(slurp(fs::path(f.run("full")) / "metrics.csv") == slurp(fs::path(f.run("part")) / "metrics.csv"));
  CHECK(slurp(fs::path(f.run("full")) / "labels" / "round_2.jsonl") ==
        slurp(fs::path(f.run("part")) / "labels" / "round_2.jsonl"));
}

TEST_CASE("cli: corrupted checkpoint is reported with its round") {
  Fixture f;
  REQUIRE(ktl_cli("train --stage 1 --quiet --config " + f.config.string() + " --run-dir " + f.run("c")) == 0);
  const fs::path ck = fs::path(f.run("c")) / "checkpoints" / "round_2.ktl";
  {
    std::fstream io(ck, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(8);
    const char junk[4] = {9, 9, 9, 9};
    io.write(junk, 4);
  }
  const std::string log = (f.dir.path() / "err.txt").string();
  const std::string cmd = std::string(KTL_BINARY) + " eval --stage 1 --run-dir " + f.run("c") + " 2> " + log;
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 1);
  CHECK(slurp(log).find("round 2") != std::string::npos);
}

TEST_CASE("sweeps: grid shapes") {
  const RunConfig c = tiny("x");
  CHECK(sweep_cells(SweepKind::noise, c).size() == 6);
  CHECK(sweep_cells(SweepKind::clusters, c).size() == 3);
  CHECK(sweep_cells(SweepKind::strategy, c).size() == 4);
  for (const auto& cell : sweep_cells(SweepKind::clusters, c)) CHECK(cell.config.train.M >= c.train.K);
}
