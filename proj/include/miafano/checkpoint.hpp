#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "miafano/nn.hpp"

namespace miafano::nn {

inline constexpr std::string_view kCheckpointFormat = "miafano-mlp";

inline nlohmann::json to_json(const MlpModel& m) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = 1;
  j["layer_sizes"] = m.layer_sizes;
  j["activation"] = to_string(m.activation);
  j["seed"] = m.seed;
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    j["weights"].push_back(m.weights[l].data);
    j["biases"].push_back(m.biases[l]);
  }
  return j;
}

/// Parses and validates a checkpoint tree; weight arrays are row-major.
inline MlpModel model_from_json(const nlohmann::json& j) {
  try {
    require(j.value("format", "") == kCheckpointFormat, ErrorCode::parse, "not a model checkpoint");
    MlpModel m;
    m.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    m.activation = parse_activation(j.at("activation").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    require(m.layer_sizes.size() >= 2, ErrorCode::parse, "checkpoint needs at least two layers");
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    require(ws.size() == m.layer_sizes.size() - 1 && bs.size() == ws.size(), ErrorCode::parse,
            "checkpoint layer count does not match layer_sizes");
    for (std::size_t l = 0; l < ws.size(); ++l) {
      Matrix w;
      w.rows = m.layer_sizes[l + 1];
      w.cols = m.layer_sizes[l];
      w.data = ws[l].get<std::vector<double>>();
      require(w.data.size() == w.rows * w.cols, ErrorCode::parse,
              "checkpoint weight array " + std::to_string(l) + " has " + std::to_string(w.data.size()) +
                  " entries, expected " + std::to_string(w.rows * w.cols));
      m.weights.push_back(std::move(w));
      m.biases.push_back(bs[l].get<std::vector<double>>());
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("malformed checkpoint: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::parse, e.what());
  }
}

inline void save_checkpoint(const MlpModel& m, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write '" + path + "'");
  out << to_json(m).dump(1) << '\n';
}

inline MlpModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace miafano::nn
