#include "gmatt/run_config.hpp"

#include <fstream>
#include <sstream>

namespace gmatt {

namespace {

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    return x;
  } catch (const std::exception&) {
    throw DataError("config: bad integer for " + key + ": " + v);
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    return x;
  } catch (const std::exception&) {
    throw DataError("config: bad number for " + key + ": " + v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw DataError("config: bad boolean for " + key + ": " + v);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  ModelConfig& m = cfg.model;
  if (key == "d_model") m.d_model = to_int(key, value);
  else if (key == "heads") m.heads = to_int(key, value);
  else if (key == "d_k") m.d_k = to_int(key, value);
  else if (key == "d_v") m.d_v = to_int(key, value);
  else if (key == "encoder_layers") m.encoder_layers = to_int(key, value);
  else if (key == "decoder_layers") m.decoder_layers = to_int(key, value);
  else if (key == "tcb_depth") m.tcb_depth = to_int(key, value);
  else if (key == "d_ff") m.d_ff = to_int(key, value);
  else if (key == "dropout") m.dropout = to_double(key, value);
  else if (key == "max_in") m.max_in = to_int(key, value);
  else if (key == "max_out") m.max_out = to_int(key, value);
  else if (key == "tpe_d") m.tpe_d = to_int(key, value);
  else if (key == "eta_min") cfg.sched.eta_min = to_double(key, value);
  else if (key == "eta_max") cfg.sched.eta_max = to_double(key, value);
  else if (key == "cycle_epochs") cfg.sched.cycle_epochs = to_int(key, value);
  else if (key == "lr_gamma") cfg.sched.gamma = to_double(key, value);
  else if (key == "epochs") cfg.epochs = to_int(key, value);
  else if (key == "batch_size") cfg.batch_size = to_int(key, value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "with_class") cfg.with_class = to_bool(key, value);
  else throw DataError("config: unknown key: " + key);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
    apply_setting(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace gmatt
