#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gmatt/model.hpp"

namespace gmatt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

// Triangular cyclic learning-rate schedule. gamma decays the cycle peak
// (amplitude), never the floor.
struct LrSchedule {
  double eta_min = 1e-4;
  double eta_max = 5e-4;
  int cycle_epochs = 10;
  double gamma = 0.98;
};

struct CheckpointMeta {
  ModelConfig config;
  LrSchedule sched;
  int epochs_completed = 0;
  std::uint64_t seed = 0;
  bool with_class = false;
  std::uint64_t adam_step = 0;
  std::vector<std::string> encoder_symbols, decoder_symbols;
};

template <class S>
struct AdamState {
  std::map<std::string, Mat<S>> m, v;
  std::uint64_t step = 0;
};

template <class S>
struct Checkpoint {
  CheckpointMeta meta;
  ModelParams<S> params;
  AdamState<S> adam;
};

namespace ckpt_detail {

constexpr char kMagic[4] = {'G', 'M', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CorruptCheckpointError("checkpoint truncated");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
  auto n = read_pod<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw CorruptCheckpointError("checkpoint truncated");
  return s;
}

template <class S>
void write_tensor(std::ostream& os, const std::string& name, const Mat<S>& m) {
  write_string(os, name);
  write_pod<std::uint8_t>(os, sizeof(S) == 4 ? 0 : 1);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), sizeof(S) * m.size());
}

template <class S>
std::pair<std::string, Mat<S>> read_tensor(std::istream& is) {
  std::string name = read_string(is);
  auto dtype = read_pod<std::uint8_t>(is);
  if ((dtype == 0) != (sizeof(S) == 4))
    throw ConfigMismatchError("checkpoint dtype differs from requested scalar type");
  auto rows = read_pod<std::uint32_t>(is);
  auto cols = read_pod<std::uint32_t>(is);
  Mat<S> m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()), sizeof(S) * m.size());
  if (!is) throw CorruptCheckpointError("checkpoint truncated in tensor " + name);
  return {name, std::move(m)};
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string meta_to_text(const CheckpointMeta& m) {
  std::ostringstream os;
  const ModelConfig& c = m.config;
  os << "d_model=" << c.d_model << "\nheads=" << c.heads << "\nd_k=" << c.d_k
     << "\nd_v=" << c.d_v << "\nencoder_layers=" << c.encoder_layers
     << "\ndecoder_layers=" << c.decoder_layers << "\ntcb_depth=" << c.tcb_depth
     << "\nd_ff=" << c.d_ff << "\ndropout=" << format_double(c.dropout)
     << "\nmax_in=" << c.max_in << "\nmax_out=" << c.max_out
     << "\nencoder_vocab=" << c.encoder_vocab << "\ndecoder_vocab=" << c.decoder_vocab
     << "\ntpe_d=" << c.tpe_d << "\neta_min=" << format_double(m.sched.eta_min)
     << "\neta_max=" << format_double(m.sched.eta_max)
     << "\ncycle_epochs=" << m.sched.cycle_epochs
     << "\nlr_gamma=" << format_double(m.sched.gamma)
     << "\nepochs_completed=" << m.epochs_completed << "\nseed=" << m.seed
     << "\nwith_class=" << (m.with_class ? 1 : 0) << "\nadam_step=" << m.adam_step << "\n";
  return os.str();
}

inline CheckpointMeta meta_from_text(const std::string& text) {
  CheckpointMeta m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptCheckpointError("bad config line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    ModelConfig& c = m.config;
    if (key == "d_model") c.d_model = std::stoi(val);
    else if (key == "heads") c.heads = std::stoi(val);
    else if (key == "d_k") c.d_k = std::stoi(val);
    else if (key == "d_v") c.d_v = std::stoi(val);
    else if (key == "encoder_layers") c.encoder_layers = std::stoi(val);
    else if (key == "decoder_layers") c.decoder_layers = std::stoi(val);
    else if (key == "tcb_depth") c.tcb_depth = std::stoi(val);
    else if (key == "d_ff") c.d_ff = std::stoi(val);
    else if (key == "dropout") c.dropout = std::stod(val);
    else if (key == "max_in") c.max_in = std::stoi(val);
    else if (key == "max_out") c.max_out = std::stoi(val);
    else if (key == "encoder_vocab") c.encoder_vocab = std::stoi(val);
    else if (key == "decoder_vocab") c.decoder_vocab = std::stoi(val);
    else if (key == "tpe_d") c.tpe_d = std::stoi(val);
    else if (key == "eta_min") m.sched.eta_min = std::stod(val);
    else if (key == "eta_max") m.sched.eta_max = std::stod(val);
    else if (key == "cycle_epochs") m.sched.cycle_epochs = std::stoi(val);
    else if (key == "lr_gamma") m.sched.gamma = std::stod(val);
    else if (key == "epochs_completed") m.epochs_completed = std::stoi(val);
    else if (key == "seed") m.seed = std::stoull(val);
    else if (key == "with_class") m.with_class = val == "1";
    else if (key == "adam_step") m.adam_step = std::stoull(val);
    else throw CorruptCheckpointError("unknown config key: " + key);
  }
  return m;
}

}  // namespace ckpt_detail

template <class S>
void save_checkpoint(const Checkpoint<S>& ckpt, const std::string& path) {
  using namespace ckpt_detail;
  for (const auto& [name, t] : ckpt.params.tensors)
    if (!all_finite(t.value)) throw NonFiniteError("non-finite parameter at save: " + name);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_string(os, meta_to_text(ckpt.meta));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.meta.encoder_symbols.size()));
  for (const auto& s : ckpt.meta.encoder_symbols) write_string(os, s);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.meta.decoder_symbols.size()));
  for (const auto& s : ckpt.meta.decoder_symbols) write_string(os, s);

  std::uint64_t count = ckpt.params.tensors.size() + ckpt.adam.m.size() + ckpt.adam.v.size();
  write_pod<std::uint64_t>(os, count);
  for (const auto& [name, t] : ckpt.params.tensors) write_tensor<S>(os, "param." + name, t.value);
  for (const auto& [name, m] : ckpt.adam.m) write_tensor<S>(os, "adam.m." + name, m);
  for (const auto& [name, v] : ckpt.adam.v) write_tensor<S>(os, "adam.v." + name, v);
  if (!os) throw DataError("checkpoint write failed: " + path);
}

template <class S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw CorruptCheckpointError("bad magic bytes");
  auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion) throw CorruptCheckpointError("unsupported checkpoint version");

  Checkpoint<S> ckpt;
  ckpt.meta = meta_from_text(read_string(is));
  auto enc_n = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < enc_n; ++i)
    ckpt.meta.encoder_symbols.push_back(read_string(is));
  auto dec_n = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < dec_n; ++i)
    ckpt.meta.decoder_symbols.push_back(read_string(is));

  ckpt.meta.config.validate();
  auto count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto [name, m] = read_tensor<S>(is);
    if (name.rfind("param.", 0) == 0) {
      Tensor<S> t;
      t.value = std::move(m);
      t.zero_grad();
      ckpt.params.tensors.emplace(name.substr(6), std::move(t));
    } else if (name.rfind("adam.m.", 0) == 0) {
      ckpt.adam.m.emplace(name.substr(7), std::move(m));
    } else if (name.rfind("adam.v.", 0) == 0) {
      ckpt.adam.v.emplace(name.substr(7), std::move(m));
    } else {
      throw CorruptCheckpointError("unknown tensor section: " + name);
    }
  }
  ckpt.adam.step = ckpt.meta.adam_step;
  return ckpt;
}

// Raises ConfigMismatchError when a loaded checkpoint disagrees with the
// model shape the caller expects.
inline void check_config_compatible(const CheckpointMeta& loaded, const ModelConfig& expected) {
  const ModelConfig& c = loaded.config;
  auto fail = [](const std::string& what) {
    throw ConfigMismatchError("checkpoint config mismatch: " + what);
  };
  if (c.d_model != expected.d_model) fail("d_model");
  if (c.heads != expected.heads) fail("heads");
  if (c.dk() != expected.dk() || c.dv() != expected.dv()) fail("head dims");
  if (c.encoder_layers != expected.encoder_layers) fail("encoder_layers");
  if (c.decoder_layers != expected.decoder_layers) fail("decoder_layers");
  if (c.tcb_depth != expected.tcb_depth) fail("tcb_depth");
  if (c.dff() != expected.dff()) fail("d_ff");
  if (c.encoder_vocab != expected.encoder_vocab) fail("encoder_vocab");
  if (c.decoder_vocab != expected.decoder_vocab) fail("decoder_vocab");
  if (c.tpe_d != expected.tpe_d) fail("tpe_d");
}

}  // namespace gmatt
