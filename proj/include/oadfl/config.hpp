#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "oadfl/common.hpp"
#include "oadfl/tasks.hpp"
#include "oadfl/topology.hpp"
#include "oadfl/trainer.hpp"

namespace oadfl {

// Flat key-value configuration with [section] headers. Values can be
// overridden by environment variables named OADFL_<SECTION>_<KEY> and then by
// CLI flags; the post-merge state is what gets serialized into run manifests.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_stream(in, path);
  }

  static KeyValueConfig parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse_stream(in, "<string>");
  }

  static KeyValueConfig parse_stream(std::istream& in, const std::string& name) {
    KeyValueConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string s = strip(strip_comment(line));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw ConfigError(name + ":" + std::to_string(lineno) +
                            ": unterminated section header");
        section = lower(strip(s.substr(1, s.size() - 2)));
        if (section.empty())
          throw ConfigError(name + ":" + std::to_string(lineno) +
                            ": empty section name");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(name + ":" + std::to_string(lineno) +
                          ": expected key = value, got '" + s + "'");
      const std::string key = lower(strip(s.substr(0, eq)));
      if (key.empty())
        throw ConfigError(name + ":" + std::to_string(lineno) + ": empty key");
      if (section.empty())
        throw ConfigError(name + ":" + std::to_string(lineno) +
                          ": key '" + key + "' outside any [section]");
      cfg.values_[section + "." + key] = strip(s.substr(eq + 1));
    }
    return cfg;
  }

  void apply_env_overrides(const char* prefix = "OADFL_") {
    // Every known key is probed; unknown environment variables are ignored.
    for (auto& [full_key, value] : values_) {
      std::string env_name = prefix;
      for (char c : full_key)
        env_name += (c == '.') ? '_' : static_cast<char>(std::toupper(c));
      if (const char* env = std::getenv(env_name.c_str())) value = env;
    }
  }

  void set(const std::string& section, const std::string& key,
           const std::string& value) {
    values_[lower(section) + "." + lower(key)] = value;
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(lower(section) + "." + lower(key)) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback = "") const {
    auto it = values_.find(lower(section) + "." + lower(key));
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    const std::string v = get_string(section, key);
    if (v.empty()) return fallback;
    try {
      std::size_t pos;
      const double out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("field " + section + "." + key +
                        ": expected a number, got '" + v + "'");
    }
  }

  long get_int(const std::string& section, const std::string& key,
               long fallback) const {
    const std::string v = get_string(section, key);
    if (v.empty()) return fallback;
    try {
      std::size_t pos;
      const long out = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("field " + section + "." + key +
                        ": expected an integer, got '" + v + "'");
    }
  }

  std::vector<std::string> get_list(const std::string& section,
                                    const std::string& key) const {
    std::vector<std::string> out;
    std::string v = get_string(section, key);
    std::size_t pos = 0;
    while (pos <= v.size() && !v.empty()) {
      std::size_t next = v.find(',', pos);
      if (next == std::string::npos) next = v.size();
      const std::string item = strip(v.substr(pos, next - pos));
      if (!item.empty()) out.push_back(item);
      pos = next + 1;
    }
    return out;
  }

  // Canonical post-merge serialization, stable ordering.
  std::string canonical() const {
    std::string out;
    std::string open_section;
    for (const auto& [full_key, value] : values_) {
      const auto dot = full_key.find('.');
      const std::string section = full_key.substr(0, dot);
      if (section != open_section) {
        out += "[" + section + "]\n";
        open_section = section;
      }
      out += full_key.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
  }

 private:
  static std::string strip(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }
  static std::string strip_comment(const std::string& s) {
    const auto pos = s.find('#');
    return pos == std::string::npos ? s : s.substr(0, pos);
  }
  static std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
  }

  std::map<std::string, std::string> values_;
};

struct RunConfig {
  int devices = 10;
  TrainOptions train;

  std::string topo_kind = "random";  // complete|ring|line|star|random|file
  double sparsity = 0.3;
  std::string topo_file;

  std::string task_kind = "quadratic";
  QuadraticTaskConfig quad;
  LogisticTaskConfig logistic;
  MlpTaskConfig mlp;
  double omega_override = -1.0;  // <0: take the task's own smoothness

  std::string sweep_axis;
  std::vector<double> sweep_values;
  std::vector<std::uint64_t> sweep_seeds;
  std::vector<std::string> sweep_schemes;
};

inline RunConfig run_config_from_kv(const KeyValueConfig& kv) {
  RunConfig cfg;
  cfg.devices = static_cast<int>(kv.get_int("run", "devices", 10));
  auto& t = cfg.train;
  t.rounds = static_cast<int>(kv.get_int("run", "rounds", 100));
  t.lambda = kv.get_double("run", "learning_rate", 0.02);
  t.momentum = kv.get_double("run", "momentum", 0.0);
  t.optimize_every = static_cast<int>(kv.get_int("run", "optimize_every", 1));
  t.seed = static_cast<std::uint64_t>(kv.get_int("run", "seed", 1));
  t.n_tx = static_cast<int>(kv.get_int("run", "n_tx", 4));
  t.n_rx = static_cast<int>(kv.get_int("run", "n_rx", 4));
  t.channel.snr_db = kv.get_double("run", "snr_db", 20.0);
  t.channel.p0 = kv.get_double("run", "p0", 1.0);
  t.alpha_sq = kv.get_double("run", "alpha_sq", 0.0);
  t.beta_sq = kv.get_double("run", "beta_sq", 0.0);
  t.f_star = kv.get_double("run", "f_star", 0.0);
  t.init_scale = kv.get_double("run", "init_scale", 1.0);
  t.design.j_max = static_cast<int>(kv.get_int("run", "j_max", 3));
  t.design.i1_max = static_cast<int>(kv.get_int("run", "i1_max", 6));
  t.design.i2_max = static_cast<int>(kv.get_int("run", "i2_max", 2));
  t.zfb_sweeps = static_cast<int>(kv.get_int("run", "zfb_sweeps", 3));
  if (t.design.j_max < 1 || t.design.i1_max < 1 || t.design.i2_max < 1)
    throw ConfigError("iteration caps j_max/i1_max/i2_max must be >= 1");
  // omega is the user-supplied smoothness estimate fed to the design
  // objective; "auto" takes the task's own measured smoothness instead.
  const std::string omega_raw = kv.get_string("run", "omega", "0.1");
  if (omega_raw == "auto")
    cfg.omega_override = -1.0;
  else
    cfg.omega_override = kv.get_double("run", "omega", 0.1);

  const std::string wm = kv.get_string("run", "error_weights", "paper");
  if (wm == "paper")
    t.design.mode = ErrorWeightSpec::Mode::paper;
  else if (wm == "robust")
    t.design.mode = ErrorWeightSpec::Mode::robust;
  else
    throw ConfigError("run.error_weights must be 'paper' or 'robust'");

  const std::string sch = kv.get_string("run", "scheme", "proposed");
  if (auto parsed = parse_scheme(sch))
    t.scheme = *parsed;
  else
    throw ConfigError("unknown scheme '" + sch + "'");

  cfg.topo_kind = kv.get_string("topology", "kind", "random");
  cfg.sparsity = kv.get_double("topology", "sparsity", 0.3);
  cfg.topo_file = kv.get_string("topology", "file", "");

  const std::string mix = kv.get_string("mixing", "init", "metropolis");
  if (mix == "metropolis")
    t.mixing_init = MixingInit::metropolis;
  else if (mix == "min-delta")
    t.mixing_init = MixingInit::min_delta;
  else if (mix == "random")
    t.mixing_init = MixingInit::random_feasible;
  else if (mix == "delta-target")
    t.mixing_init = MixingInit::delta_target;
  else if (mix == "file")
    t.mixing_init = MixingInit::file;
  else
    throw ConfigError("unknown mixing.init '" + mix + "'");
  t.delta_target = kv.get_double("mixing", "delta_target", 0.0);
  t.mixing_file = kv.get_string("mixing", "file", "");

  cfg.task_kind = kv.get_string("task", "kind", "quadratic");
  cfg.quad.num_devices = cfg.logistic.num_devices = cfg.mlp.num_devices = cfg.devices;
  cfg.quad.dim = static_cast<int>(kv.get_int("task", "dim", 32));
  cfg.quad.samples_per_device =
      static_cast<int>(kv.get_int("task", "samples_per_device", 64));
  cfg.quad.batch_size = static_cast<int>(kv.get_int("task", "batch_size", 0));
  cfg.quad.heterogeneity = kv.get_double("task", "heterogeneity", 0.5);
  cfg.quad.curvature_spread = kv.get_double("task", "curvature_spread", 0.3);
  cfg.quad.label_noise = kv.get_double("task", "label_noise", 0.1);
  cfg.quad.target_smoothness = kv.get_double("task", "target_smoothness", 1.0);
  cfg.quad.seed = t.seed;
  cfg.logistic.dim = cfg.quad.dim;
  cfg.logistic.samples_per_device = cfg.quad.samples_per_device;
  cfg.logistic.batch_size = cfg.quad.batch_size;
  cfg.logistic.heterogeneity = kv.get_double("task", "heterogeneity", 0.8);
  cfg.logistic.cluster_distance = kv.get_double("task", "cluster_distance", 2.0);
  cfg.logistic.ridge = kv.get_double("task", "ridge", 1e-3);
  cfg.logistic.seed = t.seed;
  cfg.mlp.hidden = static_cast<int>(kv.get_int("task", "hidden", 16));
  cfg.mlp.batch_size = static_cast<int>(kv.get_int("task", "batch_size", 16));
  cfg.mlp.limit = static_cast<int>(kv.get_int("task", "mnist_limit", 2000));
  cfg.mlp.images_path = kv.get_string("task", "mnist_images", "");
  cfg.mlp.labels_path = kv.get_string("task", "mnist_labels", "");
  cfg.mlp.smoothness_estimate = kv.get_double("task", "smoothness_estimate", 1.0);
  cfg.mlp.seed = t.seed;

  cfg.sweep_axis = kv.get_string("sweep", "axis", "");
  for (const auto& v : kv.get_list("sweep", "values"))
    cfg.sweep_values.push_back(std::stod(v));
  for (const auto& v : kv.get_list("sweep", "seeds"))
    cfg.sweep_seeds.push_back(static_cast<std::uint64_t>(std::stoul(v)));
  for (const auto& v : kv.get_list("sweep", "schemes"))
    cfg.sweep_schemes.push_back(v);
  return cfg;
}

inline TopologyGraph build_topology(const RunConfig& cfg) {
  if (cfg.topo_kind == "complete")
    return generate_named(NamedTopology::complete, cfg.devices);
  if (cfg.topo_kind == "ring")
    return generate_named(NamedTopology::ring, cfg.devices);
  if (cfg.topo_kind == "line")
    return generate_named(NamedTopology::line, cfg.devices);
  if (cfg.topo_kind == "star")
    return generate_named(NamedTopology::star, cfg.devices);
  if (cfg.topo_kind == "random")
    return generate_random(cfg.devices, cfg.sparsity,
                           derive_seed(cfg.train.seed, "topology"));
  if (cfg.topo_kind == "file") return load_topology(cfg.topo_file);
  throw ConfigError("unknown topology kind '" + cfg.topo_kind + "'");
}

inline std::unique_ptr<Task> build_task(const RunConfig& cfg) {
  if (cfg.task_kind == "quadratic")
    return std::make_unique<QuadraticTask>(cfg.quad);
  if (cfg.task_kind == "logistic")
    return std::make_unique<LogisticTask>(cfg.logistic);
  if (cfg.task_kind == "mlp") {
    if (cfg.mlp.images_path.empty() || cfg.mlp.labels_path.empty())
      throw ConfigError(
          "mlp task needs task.mnist_images and task.mnist_labels (IDX files); "
          "the dataset is ingested, not bundled");
    return std::make_unique<MlpTask>(cfg.mlp);
  }
  throw ConfigError("unknown task kind '" + cfg.task_kind + "'");
}

// Resolve the smoothness estimate and check the learning-rate precondition
// before any work starts.
inline void finalize_options(RunConfig& cfg, const Task& task) {
  cfg.train.omega =
      cfg.omega_override > 0.0 ? cfg.omega_override : task.smoothness();
  if (cfg.train.lambda > 1.0 / cfg.train.omega)
    throw ConfigError(
        "learning_rate violates lambda <= 1/omega: lambda = " +
        std::to_string(cfg.train.lambda) +
        ", bound 1/omega = " + std::to_string(1.0 / cfg.train.omega));
}

}  // namespace oadfl
