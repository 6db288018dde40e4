#include "tscl/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include "tscl/errors.hpp"

namespace tscl {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'T', 'S', 'R', 'B'};

std::string sanitize(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (c == '/' || c == '\\') c = '_';
  return s;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

std::uint64_t fnv1a_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (is) {
    is.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void save_param_store(const fs::path& dir, const ParamStore& ps) {
  fs::create_directories(dir / "params");
  std::ostringstream manifest;
  for (const Param& p : ps.items()) {
    const fs::path file = dir / "params" / (sanitize(p.name) + ".bin");
    {
      std::ofstream os(file, std::ios::binary);
      if (!os) throw IoError("cannot write " + file.string());
      os.write(kMagic, 4);
      write_u32(os, 1);  // version
      write_u32(os, 2);  // rank
      write_u64(os, static_cast<std::uint64_t>(p.value.rows()));
      write_u64(os, static_cast<std::uint64_t>(p.value.cols()));
      std::vector<float> buf(p.value.size());
      const Real* src = p.value.data();  // column-major storage order
      for (Index i = 0; i < p.value.size(); ++i)
        buf[static_cast<std::size_t>(i)] = static_cast<float>(src[i]);
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    manifest << std::hex << fnv1a_file(file) << std::dec << ' '
             << fs::file_size(file) << ' ' << sanitize(p.name) << ".bin\n";
  }
  std::ofstream m(dir / "manifest.txt");
  if (!m) throw IoError("cannot write manifest in " + dir.string());
  m << manifest.str();
}

void load_param_store(const fs::path& dir, ParamStore& ps) {
  for (Param& p : ps.items()) {
    const fs::path file = dir / "params" / (sanitize(p.name) + ".bin");
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError("missing parameter file " + file.string());
    char magic[4];
    is.read(magic, 4);
    if (std::string(magic, 4) != std::string(kMagic, 4))
      throw MalformedFile("bad magic in " + file.string());
    const std::uint32_t version = read_u32(is);
    const std::uint32_t rank = read_u32(is);
    if (version != 1 || rank != 2)
      throw MalformedFile("unsupported header in " + file.string());
    const auto rows = static_cast<Index>(read_u64(is));
    const auto cols = static_cast<Index>(read_u64(is));
    if (rows != p.value.rows() || cols != p.value.cols())
      throw CheckpointMismatch("shape of " + p.name + " is " +
                               std::to_string(rows) + "x" + std::to_string(cols) +
                               ", expected " + std::to_string(p.value.rows()) +
                               "x" + std::to_string(p.value.cols()));
    std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw MalformedFile("truncated parameter file " + file.string());
    Real* dst = p.value.data();
    for (std::size_t i = 0; i < buf.size(); ++i)
      dst[static_cast<Index>(i)] = static_cast<Real>(buf[i]);
  }
}

void write_kv_file(const fs::path& p,
                   const std::map<std::string, std::string>& kv) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
}

std::map<std::string, std::string> read_kv_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read " + p.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace {

std::map<std::string, std::string> spec_to_kv(const EncoderSpec& s) {
  return {
      {"kind", to_string(s.kind)},
      {"input_dim", std::to_string(s.input_dim)},
      {"hidden_dim", std::to_string(s.hidden_dim)},
      {"num_layers", std::to_string(s.num_layers)},
      {"kernel_size", std::to_string(s.kernel_size)},
      {"num_heads", std::to_string(s.num_heads)},
      {"attention", s.attention == AttentionKind::Full ? "full" : "probsparse"},
      {"probsparse_factor", std::to_string(s.probsparse_factor)},
      {"inner_dim", std::to_string(s.inner_dim)},
  };
}

EncoderSpec spec_from_kv(const std::map<std::string, std::string>& kv) {
  EncoderSpec s;
  s.kind = backbone_kind_from_string(kv.at("kind"));
  s.input_dim = std::stoi(kv.at("input_dim"));
  s.hidden_dim = std::stoi(kv.at("hidden_dim"));
  s.num_layers = std::stoi(kv.at("num_layers"));
  s.kernel_size = std::stoi(kv.at("kernel_size"));
  s.num_heads = std::stoi(kv.at("num_heads"));
  s.attention = kv.at("attention") == "full" ? AttentionKind::Full
                                             : AttentionKind::ProbSparse;
  s.probsparse_factor = std::stod(kv.at("probsparse_factor"));
  s.inner_dim = std::stoi(kv.at("inner_dim"));
  s.validate();
  return s;
}

}  // namespace

void save_encoder(const fs::path& dir, const Encoder& enc) {
  fs::create_directories(dir);
  write_kv_file(dir / "spec.txt", spec_to_kv(enc.spec()));
  save_param_store(dir, enc.params());
}

EncoderSpec load_encoder_spec(const fs::path& dir) {
  return spec_from_kv(read_kv_file(dir / "spec.txt"));
}

Encoder load_encoder(const fs::path& dir) {
  const EncoderSpec spec = load_encoder_spec(dir);
  Encoder enc = build_encoder(spec, 0);
  load_param_store(dir, enc.params());
  return enc;
}

}  // namespace tscl
