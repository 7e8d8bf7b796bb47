#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "ktl/binary_io.hpp"
#include "ktl/synth.hpp"

namespace ktl::synth {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kRasterMagic[4] = {'L', 'D', 'R', '1'};

json transform_to_json(const GeometricTransform& g) {
  json j = {{"kind", g.kind == TransformKind::affine ? "affine" : "elastic"},
            {"rotation", g.rotation},
            {"scale_x", g.scale_x},
            {"scale_y", g.scale_y},
            {"shear", g.shear},
            {"tx", g.tx},
            {"ty", g.ty},
            {"flip", g.flip}};
  json bumps = json::array();
  for (const ElasticBump& b : g.bumps)
    bumps.push_back({{"cx", b.centre.x},
                     {"cy", b.centre.y},
                     {"dx", b.displacement.x},
                     {"dy", b.displacement.y},
                     {"radius", b.radius}});
  j["bumps"] = bumps;
  return j;
}

GeometricTransform transform_from_json(const json& j) {
  GeometricTransform g;
  g.kind = j.at("kind").get<std::string>() == "elastic" ? TransformKind::elastic
                                                         : TransformKind::affine;
  g.rotation = j.at("rotation");
  g.scale_x = j.at("scale_x");
  g.scale_y = j.at("scale_y");
  g.shear = j.at("shear");
  g.tx = j.at("tx");
  g.ty = j.at("ty");
  g.flip = j.at("flip");
  for (const json& b : j.at("bumps"))
    g.bumps.push_back({{b.at("cx"), b.at("cy")}, {b.at("dx"), b.at("dy")}, b.at("radius")});
  return g;
}

json synth_config_to_json(const SynthConfig& c) {
  return {{"n_images", c.n_images},
          {"template_pool", c.template_pool},
          {"image_size", c.image_size},
          {"deform_strength", c.deform_strength},
          {"seed", c.seed},
          {"landmarks", c.landmarks},
          {"distractor_fraction", c.distractor_fraction},
          {"max_rotation", c.max_rotation},
          {"flip_probability", c.flip_probability},
          {"elastic", c.elastic},
          {"test_fraction", c.test_fraction},
          {"category_seed", c.category_seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  c.n_images = j.at("n_images");
  c.template_pool = j.at("template_pool");
  c.image_size = j.at("image_size");
  c.deform_strength = j.at("deform_strength");
  c.seed = j.at("seed");
  c.landmarks = j.at("landmarks");
  c.distractor_fraction = j.at("distractor_fraction");
  c.max_rotation = j.at("max_rotation");
  c.flip_probability = j.at("flip_probability");
  c.elastic = j.at("elastic");
  c.test_fraction = j.at("test_fraction");
  c.category_seed = j.at("category_seed");
  return c;
}

std::string raster_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rasters/%06d.ldr", id);
  return buf;
}

}  // namespace

void write_raster(const fs::path& path, const Raster& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write raster " + path.string());
  out.write(kRasterMagic, 4);
  io::write_u32(out, static_cast<std::uint32_t>(r.h));
  io::write_u32(out, static_cast<std::uint32_t>(r.w));
  io::write_f32_array(out, r.values);
  if (!out) throw UserError("failed writing raster " + path.string());
}

Raster read_raster(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open raster " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kRasterMagic, 4) != 0)
    throw UserError("bad raster magic in " + path.string());
  const std::uint32_t h = io::read_u32(in), w = io::read_u32(in);
  if (h == 0 || w == 0 || h > 16384 || w > 16384)
    throw UserError("implausible raster size in " + path.string());
  Raster r(static_cast<int>(h), static_cast<int>(w));
  io::read_f32_array(in, r.values);
  if (!in) throw UserError("truncated raster " + path.string());
  return r;
}

void save_corpus(const Corpus& corpus, const fs::path& dir, bool force) {
  const fs::path manifest = dir / "corpus.json";
  if (fs::exists(manifest) && !force)
    throw UserError("corpus already exists at " + dir.string() + " (use --force to overwrite)");
  std::error_code ec;
  fs::create_directories(dir / "rasters", ec);
  if (ec) throw UserError("cannot create corpus directory " + dir.string() + ": " + ec.message());

  json templates = json::array();
  for (const ObjectTemplate& t : corpus.templates) {
    json lm = json::array();
    for (const Point2& p : t.canonical_landmarks) lm.push_back({p.x, p.y});
    templates.push_back({{"template_id", t.template_id},
                         {"canonical_landmarks", lm},
                         {"symmetry_map", t.symmetry_map},
                         {"appearance_seed", t.appearance_seed},
                         {"eye_pair", t.eye_pair}});
  }
  json samples = json::array();
  for (const ImageSample& s : corpus.samples) {
    json gt = json::array();
    for (std::size_t i = 0; i < s.gt_landmarks.size(); ++i)
      gt.push_back({s.gt_landmarks[i].x, s.gt_landmarks[i].y, s.visible[i]});
    json tr = json::array();
    for (const GeometricTransform& g : s.applied_transforms) tr.push_back(transform_to_json(g));
    const std::string name = raster_name(s.sample_id);
    samples.push_back({{"sample_id", s.sample_id},
                       {"template_id", s.template_id},
                       {"split", s.is_test ? "test" : "train"},
                       {"raster", name},
                       {"transforms", tr},
                       {"gt_landmarks", gt}});
    write_raster(dir / name, s.raster);
  }
  json doc = {{"format", "ktl-corpus"},
              {"version", 1},
              {"config", synth_config_to_json(corpus.config)},
              {"templates", templates},
              {"samples", samples}};
  std::ofstream out(manifest);
  if (!out) throw UserError("cannot write " + manifest.string());
  out << doc.dump(1) << "\n";
}

Corpus load_corpus(const fs::path& dir) {
  const fs::path manifest = dir / "corpus.json";
  std::ifstream in(manifest);
  if (!in) throw UserError("no corpus at " + dir.string() + " (missing corpus.json)");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw UserError("malformed corpus.json: " + std::string(e.what()));
  }
  Corpus c;
  c.config = synth_config_from_json(doc.at("config"));
  for (const json& t : doc.at("templates")) {
    ObjectTemplate tpl;
    tpl.template_id = t.at("template_id");
    for (const json& p : t.at("canonical_landmarks")) tpl.canonical_landmarks.push_back({p[0], p[1]});
    tpl.symmetry_map = t.at("symmetry_map").get<std::vector<int>>();
    tpl.appearance_seed = t.at("appearance_seed");
    tpl.eye_pair = t.at("eye_pair").get<std::array<int, 2>>();
    c.templates.push_back(std::move(tpl));
  }
  for (const json& j : doc.at("samples")) {
    ImageSample s;
    s.sample_id = j.at("sample_id");
    s.template_id = j.at("template_id");
    s.is_test = j.at("split").get<std::string>() == "test";
    for (const json& g : j.at("transforms")) s.applied_transforms.push_back(transform_from_json(g));
    for (const json& p : j.at("gt_landmarks")) {
      s.gt_landmarks.push_back({p[0], p[1]});
      s.visible.push_back(p[2].get<bool>());
    }
    const auto& tpl = c.templates.at(static_cast<std::size_t>(s.template_id));
    s.symmetry_map = tpl.symmetry_map;
    s.eye_pair = tpl.eye_pair;
    s.raster = read_raster(dir / j.at("raster").get<std::string>());
    c.samples.push_back(std::move(s));
  }
  return c;
}

}  // namespace ktl::synth
