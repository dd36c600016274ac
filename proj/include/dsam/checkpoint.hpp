#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsam/config.hpp"
#include "dsam/dynamics.hpp"

namespace dsam {

inline constexpr const char* kVersionString = "dsam-0.1.0";

struct Checkpoint {
  std::string version = kVersionString;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  std::vector<std::pair<std::string, Tensor>> parameters;  // in model order
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::json j;
  j["version"] = ck.version;
  j["seed"] = ck.seed;
  j["config"] = serialize_config(ck.config);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, value] : ck.parameters) {
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = value.shape();
    p["data"] = value.vec_data();
    params.push_back(std::move(p));
  }
  j["parameters"] = std::move(params);
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  try {
    ck.version = j.at("version").get<std::string>();
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.config = parse_config(j.at("config").get<std::string>());
    for (const auto& p : j.at("parameters")) {
      Shape shape = p.at("shape").get<Shape>();
      std::vector<double> data = p.at("data").get<std::vector<double>>();
      ck.parameters.emplace_back(p.at("name").get<std::string>(),
                                 Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
  return ck;
}

inline Checkpoint snapshot_checkpoint(SamplerModel& M, const ExperimentConfig& cfg) {
  Checkpoint ck;
  ck.seed = cfg.seed;
  ck.config = cfg;
  for (Parameter* p : M.parameters()) ck.parameters.emplace_back(p->name, p->value);
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_json(ck).dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

/// Rebuilds the model described by a checkpoint and installs its parameters.
/// The mixture size is taken from the stored prior tensors, so checkpoints
/// written after refinement reload with the grown prior.
struct RestoredModel {
  std::unique_ptr<Target> target;
  std::unique_ptr<SamplerModel> model;
};

inline RestoredModel restore_model(const Checkpoint& ck) {
  RestoredModel out;
  out.target = make_target(ck.config.target);
  ExperimentConfig cfg = ck.config;
  for (const auto& [name, value] : ck.parameters)
    if (name.rfind("prior.", 0) == 0 && value.ndim() == 2) {
      cfg.model.K = value.dim(0);
      break;
    }
  RngPool pool(cfg.seed);
  Rng init_rng = pool.stream("prior-init");
  out.model = std::make_unique<SamplerModel>(
      [&] { return make_model(cfg, *out.target, init_rng); }());

  auto params = out.model->parameters();
  if (params.size() != ck.parameters.size())
    throw ConfigError("checkpoint parameter count does not match the configured model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, value] = ck.parameters[i];
    if (params[i]->name != name)
      throw ConfigError("checkpoint parameter '" + name + "' does not match model slot '" +
                        params[i]->name + "'");
    if (params[i]->value.shape() != value.shape())
      throw ConfigError("checkpoint parameter '" + name + "' has mismatched shape");
    params[i]->value = value;
    params[i]->grad = Tensor(value.shape(), 0.0);
  }
  return out;
}

}  // namespace dsam
