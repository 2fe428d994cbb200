#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivmc/env/env.hpp"
#include "ivmc/policy/policy.hpp"
#include "ivmc/recovery/recovery.hpp"

namespace ivmc::harness {

// Flat key = value configuration. Every run writes the fully resolved form
// back next to its artifacts.
struct RunConfig {
  // task and data
  std::string task = "pushing";
  std::string obs_mode = "grid";
  std::size_t demos = 500;
  std::size_t horizon = 100;
  double demo_noise = 0.003;  // expert execution perturbation during collection

  // policy architecture and regularization
  std::size_t n_dropout_layers = 1;
  double lambda = 0.3;
  double dropout_init_p = 0.1;
  double dropout_temperature = 0.1;
  double length_scale = 0.01;

  // behavioural cloning
  std::size_t epochs = 150;
  std::size_t batch_episodes = 8;
  double learning_rate = 1e-3;
  double val_fraction = 0.1;

  // uncertainty and recovery
  std::size_t mc_samples = 50;
  std::size_t window = 20;
  std::uint64_t t_recovery_init = 40;
  std::size_t backtrack_depth = 20;
  std::size_t recovery_steps = 25;

  // campaign sizes
  std::size_t n_val = 200;
  std::size_t n_eval = 100;
  std::size_t n_binning = 400;
  std::size_t foresight_episodes = 200;
  // distillation targets average this many stochastic passes; more than the
  // control-time sample count so the regression target is less noisy
  std::size_t foresight_mc_samples = 400;
  std::size_t foresight_epochs = 300;
  std::size_t foresight_batch = 128;
  double foresight_lr = 1e-3;

  std::string modes = "vmc,none,rand,init,min_unc";

  // runtime (from global flags, not the config file)
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::string out = "run";

  env::Task task_enum() const { return env::task_from_name(task); }

  env::ObsMode obs_mode_enum() const {
    if (obs_mode == "grid") return env::ObsMode::GridImage;
    if (obs_mode == "oracle") return env::ObsMode::OracleState;
    throw std::invalid_argument("config: obs_mode must be grid or oracle");
  }

  std::size_t max_steps() const { return 2 * horizon; }

  policy::PolicyConfig policy_config() const {
    policy::PolicyConfig c;
    c.obs_mode = obs_mode_enum();
    c.n_dropout_layers = n_dropout_layers;
    c.lambda = lambda;
    c.dropout_init_p = dropout_init_p;
    c.dropout_temperature = dropout_temperature;
    c.length_scale = length_scale;
    c.validate();
    return c;
  }

  recovery::ControllerConfig controller_config(recovery::Mode mode,
                                               double threshold) const {
    recovery::ControllerConfig c;
    c.mc_samples = mc_samples;
    c.threshold = threshold;
    c.window = window;
    c.t_recovery_init = t_recovery_init;
    c.backtrack_depth = backtrack_depth;
    c.recovery_steps = recovery_steps;
    c.mode = mode;
    c.max_steps = max_steps();
    c.validate();
    return c;
  }

  std::vector<std::string> mode_list() const {
    std::vector<std::string> out_modes;
    std::stringstream ss(modes);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      if (item != "vmc") recovery::mode_from_name(item);  // validates
      out_modes.push_back(item);
    }
    if (out_modes.empty()) throw std::invalid_argument("config: modes list is empty");
    return out_modes;
  }

  void apply(const std::string& key, const std::string& value) {
    auto to_u = [&](const std::string& v) { return std::stoull(v); };
    auto to_d = [&](const std::string& v) { return std::stod(v); };
    if (key == "task") task = value;
    else if (key == "obs_mode") obs_mode = value;
    else if (key == "demos") demos = to_u(value);
    else if (key == "horizon") horizon = to_u(value);
    else if (key == "demo_noise") demo_noise = to_d(value);
    else if (key == "n_dropout_layers") n_dropout_layers = to_u(value);
    else if (key == "lambda") lambda = to_d(value);
    else if (key == "dropout_init_p") dropout_init_p = to_d(value);
    else if (key == "dropout_temperature") dropout_temperature = to_d(value);
    else if (key == "length_scale") length_scale = to_d(value);
    else if (key == "epochs") epochs = to_u(value);
    else if (key == "batch_episodes") batch_episodes = to_u(value);
    else if (key == "learning_rate") learning_rate = to_d(value);
    else if (key == "val_fraction") val_fraction = to_d(value);
    else if (key == "mc_samples") mc_samples = to_u(value);
    else if (key == "window") window = to_u(value);
    else if (key == "t_recovery_init") t_recovery_init = to_u(value);
    else if (key == "backtrack_depth") backtrack_depth = to_u(value);
    else if (key == "recovery_steps") recovery_steps = to_u(value);
    else if (key == "n_val") n_val = to_u(value);
    else if (key == "n_eval") n_eval = to_u(value);
    else if (key == "n_binning") n_binning = to_u(value);
    else if (key == "foresight_episodes") foresight_episodes = to_u(value);
    else if (key == "foresight_mc_samples") foresight_mc_samples = to_u(value);
    else if (key == "foresight_epochs") foresight_epochs = to_u(value);
    else if (key == "foresight_batch") foresight_batch = to_u(value);
    else if (key == "foresight_lr") foresight_lr = to_d(value);
    else if (key == "modes") modes = value;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "task = " << task << "\n"
       << "obs_mode = " << obs_mode << "\n"
       << "demos = " << demos << "\n"
       << "horizon = " << horizon << "\n"
       << "demo_noise = " << demo_noise << "\n"
       << "n_dropout_layers = " << n_dropout_layers << "\n"
       << "lambda = " << lambda << "\n"
       << "dropout_init_p = " << dropout_init_p << "\n"
       << "dropout_temperature = " << dropout_temperature << "\n"
       << "length_scale = " << length_scale << "\n"
       << "epochs = " << epochs << "\n"
       << "batch_episodes = " << batch_episodes << "\n"
       << "learning_rate = " << learning_rate << "\n"
       << "val_fraction = " << val_fraction << "\n"
       << "mc_samples = " << mc_samples << "\n"
       << "window = " << window << "\n"
       << "t_recovery_init = " << t_recovery_init << "\n"
       << "backtrack_depth = " << backtrack_depth << "\n"
       << "recovery_steps = " << recovery_steps << "\n"
       << "n_val = " << n_val << "\n"
       << "n_eval = " << n_eval << "\n"
       << "n_binning = " << n_binning << "\n"
       << "foresight_episodes = " << foresight_episodes << "\n"
       << "foresight_mc_samples = " << foresight_mc_samples << "\n"
       << "foresight_epochs = " << foresight_epochs << "\n"
       << "foresight_batch = " << foresight_batch << "\n"
       << "foresight_lr = " << foresight_lr << "\n"
       << "modes = " << modes << "\n";
    return os.str();
  }
};

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value'");
    cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace ivmc::harness
