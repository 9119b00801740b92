#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "radiomap/experiment.hpp"

namespace radiomap {

/// Flat key=value configuration text with '#' comments and dotted sections,
/// e.g. `propagation.sigma_f=8.0`. Order-preserving.
class KeyValues {
 public:
  static KeyValues parse_string(const std::string& text) {
    KeyValues kv;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto strip = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = strip(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": expected key=value");
      }
      kv.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items_) {
      if (k == key) {
        v = value;
        return;
      }
    }
    items_.emplace_back(key, value);
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

namespace detail {

inline std::string fmt_config_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": bad number '" + value + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": bad integer '" + value + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": bad integer '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key " + key + ": bad boolean '" + value + "'");
}

inline std::vector<Method> parse_methods(const std::string& key, const std::string& value) {
  std::vector<Method> methods;
  std::stringstream ss(value);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    try {
      methods.push_back(parse_method(name));
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("config key " + key + ": unknown method '" + name + "'");
    }
  }
  if (methods.empty()) throw std::invalid_argument("config key " + key + ": empty method list");
  return methods;
}

}  // namespace detail

/// Applies flat key=value settings onto a base configuration. Unknown keys
/// are a configuration error naming the offending key.
inline ExperimentConfig config_from_kv(const KeyValues& kv, ExperimentConfig base = {}) {
  using namespace detail;
  for (const auto& [key, value] : kv.items()) {
    if (key == "exp.id") base.exp_id = value;
    else if (key == "exp.T") base.total_time = parse_double(key, value);
    else if (key == "exp.tau") base.tau = parse_double(key, value);
    else if (key == "exp.sensors") base.sensors = static_cast<int>(parse_int(key, value));
    else if (key == "exp.trials") base.trials = static_cast<int>(parse_int(key, value));
    else if (key == "exp.base_seed") base.base_seed = parse_u64(key, value);
    else if (key == "exp.methods") base.methods = parse_methods(key, value);
    else if (key == "propagation.p_tx_dbm") base.propagation.p_tx_dbm = parse_double(key, value);
    else if (key == "propagation.eta") base.propagation.eta = parse_double(key, value);
    else if (key == "propagation.tx_x") base.propagation.x_tx.x = parse_double(key, value);
    else if (key == "propagation.tx_y") base.propagation.x_tx.y = parse_double(key, value);
    else if (key == "propagation.sigma_f") base.propagation.sigma_f = parse_double(key, value);
    else if (key == "propagation.d_cor") base.propagation.d_cor = parse_double(key, value);
    else if (key == "propagation.sigma_n") base.propagation.sigma_n = parse_double(key, value);
    else if (key == "area.min_x") base.mobility.area_min.x = parse_double(key, value);
    else if (key == "area.min_y") base.mobility.area_min.y = parse_double(key, value);
    else if (key == "area.max_x") base.mobility.area_max.x = parse_double(key, value);
    else if (key == "area.max_y") base.mobility.area_max.y = parse_double(key, value);
    else if (key == "eval.min_x") base.eval_min.x = parse_double(key, value);
    else if (key == "eval.min_y") base.eval_min.y = parse_double(key, value);
    else if (key == "eval.max_x") base.eval_max.x = parse_double(key, value);
    else if (key == "eval.max_y") base.eval_max.y = parse_double(key, value);
    else if (key == "eval.grid_spacing") base.grid_spacing = parse_double(key, value);
    else if (key == "sensing.sigma_bias_x") base.sigma_bias.x = parse_double(key, value);
    else if (key == "sensing.sigma_bias_y") base.sigma_bias.y = parse_double(key, value);
    else if (key == "mobility.alpha") base.mobility.alpha = parse_double(key, value);
    else if (key == "mobility.beta") base.mobility.beta = parse_double(key, value);
    else if (key == "mobility.speed") base.mobility.speed_factor = parse_double(key, value);
    else if (key == "mobility.step_min") base.mobility.step_min = parse_double(key, value);
    else if (key == "mobility.step_max") base.mobility.step_max = parse_double(key, value);
    else if (key == "mobility.pause_min") base.mobility.pause_min = parse_double(key, value);
    else if (key == "mobility.pause_max") base.mobility.pause_max = parse_double(key, value);
    else if (key == "mle.restarts") base.mle_restarts = static_cast<int>(parse_int(key, value));
    else if (key == "mle.max_iters") base.mle_max_iters = static_cast<int>(parse_int(key, value));
    else if (key == "calib.max_iters") base.calib_max_iters = static_cast<int>(parse_int(key, value));
    else if (key == "calib.learning_rate") base.calib_learning_rate = parse_double(key, value);
    else if (key == "calib.penalty") base.calib_penalty = parse_bool(key, value);
    else if (key == "calib.gradient") {
      if (value == "analytic") base.calib_analytic_gradient = true;
      else if (value == "fd") base.calib_analytic_gradient = false;
      else throw std::invalid_argument("config key calib.gradient: expected 'analytic' or 'fd'");
    } else {
      throw std::invalid_argument("unknown config key: " + key);
    }
  }
  return base;
}

/// Canonical flat-text serialization; config_from_kv(parse(serialize(c)))
/// reproduces c exactly.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::fmt_config_double;
  std::ostringstream out;
  out << "exp.id=" << c.exp_id << '\n';
  out << "exp.T=" << fmt_config_double(c.total_time) << '\n';
  out << "exp.tau=" << fmt_config_double(c.tau) << '\n';
  out << "exp.sensors=" << c.sensors << '\n';
  out << "exp.trials=" << c.trials << '\n';
  out << "exp.base_seed=" << c.base_seed << '\n';
  out << "exp.methods=";
  for (std::size_t i = 0; i < c.methods.size(); ++i) {
    if (i) out << ',';
    out << method_name(c.methods[i]);
  }
  out << '\n';
  out << "propagation.p_tx_dbm=" << fmt_config_double(c.propagation.p_tx_dbm) << '\n';
  out << "propagation.eta=" << fmt_config_double(c.propagation.eta) << '\n';
  out << "propagation.tx_x=" << fmt_config_double(c.propagation.x_tx.x) << '\n';
  out << "propagation.tx_y=" << fmt_config_double(c.propagation.x_tx.y) << '\n';
  out << "propagation.sigma_f=" << fmt_config_double(c.propagation.sigma_f) << '\n';
  out << "propagation.d_cor=" << fmt_config_double(c.propagation.d_cor) << '\n';
  out << "propagation.sigma_n=" << fmt_config_double(c.propagation.sigma_n) << '\n';
  out << "area.min_x=" << fmt_config_double(c.mobility.area_min.x) << '\n';
  out << "area.min_y=" << fmt_config_double(c.mobility.area_min.y) << '\n';
  out << "area.max_x=" << fmt_config_double(c.mobility.area_max.x) << '\n';
  out << "area.max_y=" << fmt_config_double(c.mobility.area_max.y) << '\n';
  out << "eval.min_x=" << fmt_config_double(c.eval_min.x) << '\n';
  out << "eval.min_y=" << fmt_config_double(c.eval_min.y) << '\n';
  out << "eval.max_x=" << fmt_config_double(c.eval_max.x) << '\n';
  out << "eval.max_y=" << fmt_config_double(c.eval_max.y) << '\n';
  out << "eval.grid_spacing=" << fmt_config_double(c.grid_spacing) << '\n';
  out << "sensing.sigma_bias_x=" << fmt_config_double(c.sigma_bias.x) << '\n';
  out << "sensing.sigma_bias_y=" << fmt_config_double(c.sigma_bias.y) << '\n';
  out << "mobility.alpha=" << fmt_config_double(c.mobility.alpha) << '\n';
  out << "mobility.beta=" << fmt_config_double(c.mobility.beta) << '\n';
  out << "mobility.speed=" << fmt_config_double(c.mobility.speed_factor) << '\n';
  out << "mobility.step_min=" << fmt_config_double(c.mobility.step_min) << '\n';
  out << "mobility.step_max=" << fmt_config_double(c.mobility.step_max) << '\n';
  out << "mobility.pause_min=" << fmt_config_double(c.mobility.pause_min) << '\n';
  out << "mobility.pause_max=" << fmt_config_double(c.mobility.pause_max) << '\n';
  out << "mle.restarts=" << c.mle_restarts << '\n';
  out << "mle.max_iters=" << c.mle_max_iters << '\n';
  out << "calib.max_iters=" << c.calib_max_iters << '\n';
  out << "calib.learning_rate=" << fmt_config_double(c.calib_learning_rate) << '\n';
  out << "calib.penalty=" << (c.calib_penalty ? "true" : "false") << '\n';
  out << "calib.gradient=" << (c.calib_analytic_gradient ? "analytic" : "fd") << '\n';
  return out.str();
}

/// Compiled-in presets matching the four evaluation conditions; everything
/// besides exp_id, T and tau uses the shared defaults.
inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.exp_id = name;
  if (name == "exp1") {
    c.total_time = 3600.0;
    c.tau = 20.0;
  } else if (name == "exp2") {
    c.total_time = 7200.0;
    c.tau = 40.0;
  } else if (name == "exp3") {
    c.total_time = 1800.0;
    c.tau = 10.0;
  } else if (name == "exp4") {
    c.total_time = 900.0;
    c.tau = 5.0;
  } else {
    throw std::invalid_argument("unknown preset: " + name +
                                " (expected exp1, exp2, exp3 or exp4)");
  }
  return c;
}

}  // namespace radiomap
