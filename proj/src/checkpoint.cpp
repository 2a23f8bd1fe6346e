#include "hapax/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "hapax/kvfile.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor blob io assumes a little-endian host");

namespace hapax {

namespace {

constexpr std::uint8_t kDtypeF32 = 0;

void put_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_tensor(std::ostream& out, const std::string& name,
                  const RowMat<float>& m) {
  if (name.size() > 0xffff) throw FormatError("tensor name too long");
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), std::streamsize(name.size()));
  out.put(char(kDtypeF32));
  out.put(char(2));  // rank
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            std::streamsize(sizeof(float) * m.size()));
}

void write_blob(const std::filesystem::path& file,
                const ModelParams<float>& p) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + file.string());
  p.visit([&](const std::string& name, const RowMat<float>& m) {
    write_tensor(out, name, m);
  });
  if (!out) throw FormatError("write failed: " + file.string());
}

struct TensorRecord {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

std::map<std::string, TensorRecord> read_blob(
    const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + file.string());
  std::map<std::string, TensorRecord> tensors;
  while (true) {
    unsigned char len_b[2];
    if (!in.read(reinterpret_cast<char*>(len_b), 2)) break;  // clean EOF
    std::uint16_t name_len =
        std::uint16_t(len_b[0]) | std::uint16_t(len_b[1]) << 8;
    std::string name(name_len, '\0');
    char dtype = 0, rank = 0;
    if (!in.read(name.data(), name_len) || !in.get(dtype) || !in.get(rank))
      throw FormatError("truncated tensor record in " + file.string());
    if (std::uint8_t(dtype) != kDtypeF32)
      throw FormatError("unsupported dtype tag " +
                        std::to_string(int(std::uint8_t(dtype))));
    TensorRecord rec;
    std::size_t total = 1;
    for (int i = 0; i < int(std::uint8_t(rank)); ++i) {
      unsigned char d[4];
      if (!in.read(reinterpret_cast<char*>(d), 4))
        throw FormatError("truncated dims in " + file.string());
      std::uint32_t dim = std::uint32_t(d[0]) | std::uint32_t(d[1]) << 8 |
                          std::uint32_t(d[2]) << 16 | std::uint32_t(d[3]) << 24;
      rec.dims.push_back(dim);
      total *= dim;
    }
    rec.data.resize(total);
    if (!in.read(reinterpret_cast<char*>(rec.data.data()),
                 std::streamsize(sizeof(float) * total)))
      throw FormatError("truncated payload for tensor '" + name + "' in " +
                        file.string());
    if (!tensors.emplace(std::move(name), std::move(rec)).second)
      throw FormatError("duplicate tensor record in " + file.string());
  }
  return tensors;
}

void fill_params(ModelParams<float>& p,
                 const std::map<std::string, TensorRecord>& tensors,
                 const std::string& context) {
  std::size_t used = 0;
  p.visit([&](const std::string& name, RowMat<float>& m) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw FormatError(context + ": missing tensor '" + name + "'");
    const TensorRecord& rec = it->second;
    if (rec.dims.size() != 2 || rec.dims[0] != std::uint32_t(m.rows()) ||
        rec.dims[1] != std::uint32_t(m.cols()))
      throw FormatError(context + ": shape mismatch for tensor '" + name +
                        "'");
    std::memcpy(m.data(), rec.data.data(), sizeof(float) * rec.data.size());
    ++used;
  });
  if (used != tensors.size())
    throw FormatError(context + ": blob contains unexpected extra tensors");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir,
                     const ModelParams<float>& params, std::uint64_t step,
                     std::uint64_t seed, const AdamState* optim) {
  std::filesystem::create_directories(dir);
  KvFile kv;
  kv.set_u64("format_version", 1);
  kv.set_u64("step", step);
  kv.set_u64("seed", seed);
  kv.set_bool("has_optimizer", optim != nullptr);
  if (optim) kv.set_u64("optimizer_steps", optim->steps);
  params.config.to_kv(kv);
  kv.write(dir / "manifest.txt");
  write_blob(dir / "tensors.bin", params);
  if (optim) {
    std::ofstream out(dir / "optim.bin", std::ios::binary | std::ios::trunc);
    if (!out)
      throw FormatError("cannot open for writing: " +
                        (dir / "optim.bin").string());
    optim->m.visit([&](const std::string& name, const RowMat<float>& t) {
      write_tensor(out, "m." + name, t);
    });
    optim->v.visit([&](const std::string& name, const RowMat<float>& t) {
      write_tensor(out, "v." + name, t);
    });
    if (!out) throw FormatError("optimizer state write failed");
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  KvFile kv = KvFile::read(dir / "manifest.txt");
  std::uint64_t version = kv.get_u64("format_version");
  if (version != 1)
    throw FormatError("unsupported checkpoint format_version " +
                      std::to_string(version));
  LoadedCheckpoint out;
  out.meta.format_version = static_cast<std::uint32_t>(version);
  out.meta.step = kv.get_u64("step");
  out.meta.seed = kv.get_u64("seed");
  out.meta.has_optimizer = kv.get_bool_or("has_optimizer", false);
  out.meta.config = ModelConfig::from_kv(kv);

  out.params = make_params<float>(out.meta.config);
  fill_params(out.params, read_blob(dir / "tensors.bin"), dir.string());

  if (out.meta.has_optimizer) {
    auto tensors = read_blob(dir / "optim.bin");
    AdamState st = AdamState::zeros(out.meta.config);
    st.steps = kv.get_u64_or("optimizer_steps", 0);
    std::map<std::string, TensorRecord> ms, vs;
    for (auto& [name, rec] : tensors) {
      if (name.rfind("m.", 0) == 0)
        ms.emplace(name.substr(2), std::move(rec));
      else if (name.rfind("v.", 0) == 0)
        vs.emplace(name.substr(2), std::move(rec));
      else
        throw FormatError("unexpected optimizer tensor '" + name + "'");
    }
    fill_params(st.m, ms, dir.string() + " (adam m)");
    fill_params(st.v, vs, dir.string() + " (adam v)");
    out.optim = std::move(st);
  }
  return out;
}

Eigen::MatrixXf load_embedding_matrix(const std::filesystem::path& dir) {
  auto tensors = read_blob(dir / "tensors.bin");
  auto it = tensors.find("wte");
  if (it == tensors.end())
    throw FormatError(dir.string() + ": checkpoint has no 'wte' tensor");
  const TensorRecord& rec = it->second;
  if (rec.dims.size() != 2)
    throw FormatError("unexpected rank for 'wte'");
  Eigen::MatrixXf m(rec.dims[0], rec.dims[1]);
  for (std::uint32_t r = 0; r < rec.dims[0]; ++r)
    for (std::uint32_t c = 0; c < rec.dims[1]; ++c)
      m(r, c) = rec.data[std::size_t(r) * rec.dims[1] + c];
  return m;
}

std::uint64_t file_checksum(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + file.string());
  char buf[65536];
  std::uint64_t h = 1469598103934665603ull;
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

}  // namespace hapax
