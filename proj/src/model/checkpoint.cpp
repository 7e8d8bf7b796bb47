#include <cstring>
#include <fstream>

#include "ktl/binary_io.hpp"
#include "ktl/model.hpp"

namespace ktl::model {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'K', 'T', 'L', '1'};
constexpr std::uint32_t kVersion = 1;

void write_set(std::ostream& out, const ParamSet<float>& set) {
  set.for_each([&](ParamGroup, const std::vector<float>& v) {
    io::write_u32(out, static_cast<std::uint32_t>(v.size()));
    io::write_f32_array(out, v);
  });
}

void read_set(std::istream& in, ParamSet<float>& set, const std::vector<std::size_t>& expected,
              const std::string& where) {
  std::size_t i = 0;
  set.for_each([&](ParamGroup, std::vector<float>& v) {
    const std::uint32_t n = io::read_u32(in);
    if (!in || n != expected[i]) throw UserError(where + ": tensor size mismatch");
    v.resize(n);
    io::read_f32_array(in, v);
    ++i;
  });
  if (!in) throw UserError(where + ": truncated file");
}

std::vector<std::size_t> expected_sizes(const ModelDims& d) {
  const std::size_t C = static_cast<std::size_t>(d.hidden), D = static_cast<std::size_t>(d.descriptor_dim),
                    K = static_cast<std::size_t>(d.landmarks);
  return {C * 9, C, C * C * 9, C, C * C * 9, C, C * C * 9, C, 2 * C, 1, 2 * D * C, D, 2 * K * C, K};
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw UserError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    io::write_u32(out, static_cast<std::uint32_t>(ckpt.round));
    io::write_u32(out, kVersion);
    const ModelDims& d = ckpt.model.dims;
    for (int v : {d.input_h, d.input_w, d.hidden, d.descriptor_dim, d.landmarks})
      io::write_u32(out, static_cast<std::uint32_t>(v));
    io::write_u64(out, ckpt.optimizer.steps);
    write_set(out, ckpt.model.params);
    write_set(out, ckpt.optimizer.square_avg);
    if (!out) throw UserError("failed writing checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("missing checkpoint " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  const std::uint32_t round = io::read_u32(in);
  const std::string where = "checkpoint " + path.string() + " (round " + std::to_string(round) + ")";
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw UserError("checkpoint " + path.string() + ": bad magic, file corrupted");
  const std::uint32_t version = io::read_u32(in);
  if (version != kVersion)
    throw UserError(where + ": unsupported version " + std::to_string(version));
  Checkpoint c;
  c.round = static_cast<int>(round);
  ModelDims& d = c.model.dims;
  for (int* v : {&d.input_h, &d.input_w, &d.hidden, &d.descriptor_dim, &d.landmarks})
    *v = static_cast<int>(io::read_u32(in));
  if (!in || d.hidden < 1 || d.hidden > 4096 || d.descriptor_dim < 1 || d.descriptor_dim > 4096 ||
      d.landmarks < 0 || d.landmarks > 4096)
    throw UserError(where + ": implausible dimensions header");
  c.optimizer.steps = io::read_u64(in);
  const auto sizes = expected_sizes(d);
  read_set(in, c.model.params, sizes, where);
  read_set(in, c.optimizer.square_avg, sizes, where);
  return c;
}

}  // namespace ktl::model
