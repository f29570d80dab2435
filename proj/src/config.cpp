#include "attr/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace attr {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

const std::map<std::string, std::string>& Config::defaults() {
  static const std::map<std::string, std::string> d = {
      // model structure
      {"scales", "0.5,1,2"},
      {"projection", "res"},  // lp | conv | res
      {"res_blocks", "3"},
      {"embed_dim", "64"},
      {"encoder_units", "6"},
      {"heads", "8"},
      {"msda_points", "4"},
      {"num_queries", "20"},
      {"num_decoders", "9"},
      {"aux_loss", "true"},
      // optimization
      {"lr", "0.0001"},
      {"weight_decay", "0.05"},
      {"backbone_lr_mult", "0.1"},
      {"total_steps", "2000"},
      {"batch_size", "2"},
      {"points_k", "1024"},
      {"lambda_cls_matched", "0.4"},
      {"lambda_cls_unmatched", "0.02"},
      {"augment", "false"},
      {"save_every", "500"},
      {"seed", "0"},
      // synthetic data
      {"synth_h", "96"},
      {"synth_w", "96"},
      {"count", "16"},
      {"val_frac", "0.2"},
      {"min_instances", "1"},
      {"max_instances", "4"},
      {"curve_prob", "0.3"},
      {"small_text_prob", "0.3"},
      // inference / evaluation
      {"infer_short_side", "640"},
      {"conf_thresh", "0.5"},
      {"keep_largest_component", "false"},
      {"raster_res", "512"},
      {"iou_thresh", "0.5"},
      {"overlay", "false"},
  };
  return d;
}

Config::Config() : values_(defaults()) {}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
}

void Config::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
    try {
      set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void Config::apply_override(const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

std::string Config::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

void Config::dump_file(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config to " + path);
  f << dump();
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

int Config::geti(const std::string& key) const {
  try {
    return std::stoi(str(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: " + str(key));
  }
}

double Config::getf(const std::string& key) const {
  try {
    return std::stod(str(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + str(key));
  }
}

bool Config::getb(const std::string& key) const {
  std::string v = str(key);
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + str(key));
}

std::vector<double> Config::get_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(str(key));
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(trim(tok)));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has a non-numeric element: " + tok);
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " is an empty list");
  return out;
}

}  // namespace attr
