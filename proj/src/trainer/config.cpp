#include "modbot/trainer/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace modbot::trainer {

void validate(const Hyperparams& hp) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw TrainerError(std::string("hyperparams: ") + what);
  };
  need(hp.iterations >= 1, "iterations must be >= 1");
  need(hp.horizon >= 2 && hp.horizon % 2 == 0, "horizon must be even and >= 2");
  need(hp.policy_steps >= 1, "policy_steps must be >= 1");
  need(hp.batch >= 2 && hp.batch % 2 == 0, "batch must be even and >= 2");
  need(hp.model_epochs >= 1, "model_epochs must be >= 1");
  need(hp.model_batch >= 1, "model_batch must be >= 1");
  need(hp.policy_lr > 0.0, "policy_lr must be positive");
  need(hp.model_lr > 0.0, "model_lr must be positive");
  need(hp.entropy_beta >= 0.0, "entropy_beta must be >= 0");
  need(hp.curriculum_threshold > 0.0, "curriculum_threshold must be positive");
  need(hp.max_level >= 0, "max_level must be >= 0");
  need(hp.random_trajectories >= 1, "random_trajectories must be >= 1");
  need(hp.random_steps >= 2, "random_steps must be >= 2");
  need(hp.curriculum_episodes >= 1, "curriculum_episodes must be >= 1");
  need(hp.onpolicy_noise >= 0.0, "onpolicy_noise must be >= 0");
}

namespace {

[[noreturn]] void fail(const std::string& source, int line, const std::string& why) {
  throw ConfigError(source + ":" + std::to_string(line) + ": " + why);
}

std::string strip(const std::string& raw) {
  std::string s = raw.substr(0, raw.find('#'));
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& source, int line, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    fail(source, line, "expected a number, got '" + value + "'");
  }
}

int parse_int(const std::string& source, int line, const std::string& value) {
  const double v = parse_number(source, line, value);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v) fail(source, line, "expected an integer, got '" + value + "'");
  return i;
}

const design::DesignGraph* find_builtin(const std::string& name) {
  for (const auto& d : design::builtin_train_designs())
    if (d.name == name) return &d;
  for (const auto& d : design::builtin_test_designs())
    if (d.name == name) return &d;
  return nullptr;
}

design::DesignGraph load_design_entry(const std::string& source, int line,
                                      const std::string& entry) {
  const bool path_like = entry.find('/') != std::string::npos ||
                         entry.find('.') != std::string::npos;
  if (!path_like) {
    if (const auto* d = find_builtin(entry)) return *d;
    if (!std::filesystem::exists(entry))
      fail(source, line, "unknown design '" + entry + "': no builtin by that name and no such file");
  }
  if (!std::filesystem::exists(entry))
    fail(source, line, "design file '" + entry + "' not found");
  std::ifstream in(entry, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return design::parse_design(buf.str(), std::filesystem::path(entry).stem().string());
  } catch (const design::DesignError& e) {
    fail(source, line, "design file '" + entry + "': " + e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = strip(raw);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(source, line, "unterminated section header");
      section = s.substr(1, s.size() - 2);
      if (section != "designs" && section != "environments" && section != "network" &&
          section != "train" && section != "seed")
        fail(source, line, "unknown section [" + section + "]");
      continue;
    }
    if (section.empty()) fail(source, line, "setting before any [section]");

    if (section == "designs") {
      auto d = load_design_entry(source, line, s);
      for (const auto& have : cfg.designs)
        if (have.name == d.name) fail(source, line, "duplicate design '" + d.name + "'");
      cfg.designs.push_back(std::move(d));
      continue;
    }

    std::istringstream fields(s);
    std::string key, value, extra;
    fields >> key >> value;
    if (value.empty()) fail(source, line, "expected '<key> <value>'");
    if (fields >> extra) fail(source, line, "unexpected trailing '" + extra + "'");

    if (section == "environments") {
      EnvSpec env;
      try {
        env.kind = sim::terrain_from_name(key);
      } catch (const std::exception&) {
        fail(source, line, "unknown terrain kind '" + key + "'");
      }
      env.max_level = parse_int(source, line, value);
      if (env.max_level < 0) fail(source, line, "max level must be >= 0");
      for (const auto& have : cfg.envs)
        if (have.kind == env.kind) fail(source, line, "duplicate environment '" + key + "'");
      cfg.envs.push_back(env);
    } else if (section == "network") {
      if (key == "hidden") cfg.net.hidden = parse_int(source, line, value);
      else if (key == "enc_hidden") cfg.net.enc_hidden = parse_int(source, line, value);
      else if (key == "rounds") cfg.net.rounds = parse_int(source, line, value);
      else fail(source, line, "unknown network key '" + key + "'");
    } else if (section == "train") {
      Hyperparams& hp = cfg.hp;
      if (key == "iterations") hp.iterations = parse_int(source, line, value);
      else if (key == "horizon") hp.horizon = parse_int(source, line, value);
      else if (key == "policy_steps") hp.policy_steps = parse_int(source, line, value);
      else if (key == "batch") hp.batch = parse_int(source, line, value);
      else if (key == "model_epochs") hp.model_epochs = parse_int(source, line, value);
      else if (key == "model_batch") hp.model_batch = parse_int(source, line, value);
      else if (key == "policy_lr") hp.policy_lr = parse_number(source, line, value);
      else if (key == "model_lr") hp.model_lr = parse_number(source, line, value);
      else if (key == "entropy_beta") hp.entropy_beta = parse_number(source, line, value);
      else if (key == "threshold") hp.curriculum_threshold = parse_number(source, line, value);
      else if (key == "max_level") hp.max_level = parse_int(source, line, value);
      else if (key == "per_design_curriculum") hp.per_design_curriculum = parse_int(source, line, value) != 0;
      else if (key == "random_trajectories") hp.random_trajectories = parse_int(source, line, value);
      else if (key == "random_steps") hp.random_steps = parse_int(source, line, value);
      else if (key == "curriculum_episodes") hp.curriculum_episodes = parse_int(source, line, value);
      else if (key == "onpolicy_noise") hp.onpolicy_noise = parse_number(source, line, value);
      else fail(source, line, "unknown train key '" + key + "'");
    } else {  // seed
      if (key != "seed") fail(source, line, "unknown seed key '" + key + "'");
      try {
        cfg.seed = std::stoull(value);
      } catch (const std::exception&) {
        fail(source, line, "expected an unsigned integer, got '" + value + "'");
      }
    }
  }

  if (cfg.designs.empty()) throw ConfigError(source + ": no designs configured");
  if (cfg.envs.empty()) throw ConfigError(source + ": no environments configured");
  if (cfg.net.hidden < 1 || cfg.net.enc_hidden < 1 || cfg.net.rounds < 1)
    throw ConfigError(source + ": network sizes must be positive");
  try {
    validate(cfg.hp);
  } catch (const TrainerError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config file '" + path + "' not found");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

}  // namespace modbot::trainer
