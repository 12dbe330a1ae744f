#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "jointppo/net.hpp"
#include "jointppo/params.hpp"

namespace jointppo {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json net_config_to_json(const NetConfig& c) {
  return nlohmann::json{{"n_agents", c.n_agents},
                        {"obs_dim", c.obs_dim},
                        {"n_actions", c.n_actions},
                        {"hidden_dim", c.hidden_dim},
                        {"n_heads", c.n_heads},
                        {"n_blocks", c.n_blocks},
                        {"n_hidden_layers", c.n_hidden_layers},
                        {"factorization", to_string(c.factorization)}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.n_agents = j.at("n_agents").get<int>();
  c.obs_dim = j.at("obs_dim").get<int>();
  c.n_actions = j.at("n_actions").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.n_hidden_layers = j.at("n_hidden_layers").get<int>();
  const std::string f = j.at("factorization").get<std::string>();
  if (f == "conditional") c.factorization = Factorization::kConditional;
  else if (f == "independent") c.factorization = Factorization::kIndependent;
  else throw ConfigError("unknown factorization '" + f + "'");
  c.validate();
  return c;
}

// Flat versioned JSON container: parameter name -> shape + float array.
// nlohmann serializes doubles with a round-trippable shortest representation,
// so save/load is value-exact and byte-stable across runs.
inline void save_checkpoint(const std::string& path, const PolicyNet& net) {
  nlohmann::json j;
  j["format"] = "jointppo-checkpoint";
  j["version"] = kCheckpointVersion;
  j["net_config"] = net_config_to_json(net.config());
  nlohmann::json params = nlohmann::json::object();
  const ParamStore& store = net.params();
  for (size_t i = 0; i < store.count(); ++i) {
    const Parameter& p = store[i];
    params[p.name] = {{"shape", {p.rows, p.cols}}, {"data", p.data}};
  }
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << j.dump(1) << "\n";
}

inline PolicyNet load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "jointppo-checkpoint")
    throw IoError("'" + path + "' is not a checkpoint file");
  if (j.value("version", -1) != kCheckpointVersion)
    throw IoError("checkpoint version " + std::to_string(j.value("version", -1)) +
                  " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  NetConfig cfg = net_config_from_json(j.at("net_config"));
  PolicyNet net(cfg, /*init_seed=*/0);
  ParamStore& store = net.params();
  const nlohmann::json& params = j.at("params");
  if (params.size() != store.count())
    throw IoError("checkpoint has " + std::to_string(params.size()) + " parameters, expected " +
                  std::to_string(store.count()));
  for (size_t i = 0; i < store.count(); ++i) {
    Parameter& p = store[i];
    if (!params.contains(p.name)) throw IoError("checkpoint missing parameter '" + p.name + "'");
    const nlohmann::json& pj = params.at(p.name);
    const auto shape = pj.at("shape").get<std::vector<int>>();
    if (shape.size() != 2 || shape[0] != p.rows || shape[1] != p.cols)
      throw IoError("checkpoint parameter '" + p.name + "' has wrong shape");
    const auto data = pj.at("data").get<std::vector<double>>();
    if (data.size() != p.size())
      throw IoError("checkpoint parameter '" + p.name + "' has wrong length");
    p.data = data;
  }
  return net;
}

}  // namespace jointppo
