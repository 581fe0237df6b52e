#pragma once

// Parameter checkpoint format:
//
//   line 1:  WOMBET-NN v1
//   line 2:  one-line JSON header {"networks":[{"name":..,"layers":[{"in":..,
//            "out":..,"activation":..,"layer_norm":..}, ...]}, ...],
//            "meta":{...}}
//   rest:    little-endian float32 stream; for every network in header
//            order and every layer: weight (column-major), bias, gain, shift.

#include "wombet/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace wombet {

struct NamedNetwork {
  std::string name;
  nn::Mlp<float> net;
};

struct ParameterFile {
  std::vector<NamedNetwork> networks;
  nlohmann::json meta = nlohmann::json::object();

  const nn::Mlp<float>& network(const std::string& name) const;
};

std::string encode_parameters(const ParameterFile& file);
ParameterFile decode_parameters(const std::string& bytes);

void save_parameters(const std::filesystem::path& path, const ParameterFile& file);
ParameterFile load_parameters(const std::filesystem::path& path);

}  // namespace wombet
