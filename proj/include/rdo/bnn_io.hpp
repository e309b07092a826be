#pragma once

// JSON state file for trained BNN surrogates.
//
//   {
//     "format": "rdo-bnn-state", "version": 1,
//     "architecture": {"input_dim": N, "hidden": [..], "activation": "tanh"},
//     "prior_std": s, "noise_rho": r, "constant_output": false,
//     "normalization": {"x_mean": [..], "x_std": [..], "y_mean": m, "y_std": s},
//     "layers": [{"in": i, "out": o, "weight_mu": [..], "weight_rho": [..],
//                 "bias_mu": [..], "bias_rho": [..]}, ...]
//   }
//
// Weight arrays are column-major (in x out). Doubles are written with
// round-trip precision, so load(save(s)) reproduces s bit for bit.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdo/bnn.hpp"

namespace rdo::bnn {

inline constexpr const char* kStateFormat = "rdo-bnn-state";
inline constexpr int kStateVersion = 1;

namespace detail {
inline std::vector<double> to_std(const double* p, Eigen::Index n) { return std::vector<double>(p, p + n); }

inline void read_into(const nlohmann::json& j, const char* key, double* out, Eigen::Index n) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != n)
    throw InvalidArgument(std::string("bnn state: field '") + key + "' has the wrong length");
  for (Eigen::Index i = 0; i < n; ++i) out[i] = arr[static_cast<std::size_t>(i)].get<double>();
}
}  // namespace detail

inline nlohmann::json state_to_json(const VariationalState& s) {
  nlohmann::json j;
  j["format"] = kStateFormat;
  j["version"] = kStateVersion;
  j["architecture"] = {{"input_dim", s.arch.input_dim},
                       {"hidden", s.arch.hidden},
                       {"activation", to_string(s.arch.activation)}};
  const ParamLayout layout = s.layout();
  j["prior_std"] = s.prior_std;
  j["noise_rho"] = s.params[layout.noise];
  j["constant_output"] = s.constant_output;
  j["normalization"] = {{"x_mean", rdo::bnn::detail::to_std(s.norm.x_mean.data(), s.norm.x_mean.size())},
                        {"x_std", rdo::bnn::detail::to_std(s.norm.x_std.data(), s.norm.x_std.size())},
                        {"y_mean", s.norm.y_mean},
                        {"y_std", s.norm.y_std}};
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : layout.layers) {
    const double* p = s.params.data();
    layers.push_back({{"in", l.in},
                      {"out", l.out},
                      {"weight_mu", rdo::bnn::detail::to_std(p + l.w_mu, l.in * l.out)},
                      {"weight_rho", rdo::bnn::detail::to_std(p + l.w_rho, l.in * l.out)},
                      {"bias_mu", rdo::bnn::detail::to_std(p + l.b_mu, l.out)},
                      {"bias_rho", rdo::bnn::detail::to_std(p + l.b_rho, l.out)}});
  }
  return j;
}

inline VariationalState state_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kStateFormat) throw InvalidArgument("bnn state: unknown format");
    if (j.at("version").get<int>() != kStateVersion)
      throw InvalidArgument("bnn state: unsupported version " + std::to_string(j.at("version").get<int>()));
    VariationalState s;
    const auto& a = j.at("architecture");
    s.arch.input_dim = a.at("input_dim").get<std::size_t>();
    s.arch.hidden = a.at("hidden").get<std::vector<std::size_t>>();
    s.arch.activation = activation_from_string(a.at("activation").get<std::string>());
    s.arch.validate();
    s.prior_std = j.at("prior_std").get<double>();
    s.constant_output = j.at("constant_output").get<bool>();
    const ParamLayout layout(s.arch);
    s.params = Vector::Zero(layout.total);
    s.params[layout.noise] = j.at("noise_rho").get<double>();
    const auto& norm = j.at("normalization");
    const auto n = static_cast<Eigen::Index>(s.arch.input_dim);
    s.norm.x_mean.resize(n);
    s.norm.x_std.resize(n);
    rdo::bnn::detail::read_into(norm, "x_mean", s.norm.x_mean.data(), n);
    rdo::bnn::detail::read_into(norm, "x_std", s.norm.x_std.data(), n);
    s.norm.y_mean = norm.at("y_mean").get<double>();
    s.norm.y_std = norm.at("y_std").get<double>();
    const auto& layers = j.at("layers");
    if (layers.size() != layout.layers.size()) throw InvalidArgument("bnn state: layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layout.layers[i];
      const auto& lj = layers[i];
      if (lj.at("in").get<Eigen::Index>() != l.in || lj.at("out").get<Eigen::Index>() != l.out)
        throw InvalidArgument("bnn state: layer " + std::to_string(i) + " shape mismatch");
      double* p = s.params.data();
      rdo::bnn::detail::read_into(lj, "weight_mu", p + l.w_mu, l.in * l.out);
      rdo::bnn::detail::read_into(lj, "weight_rho", p + l.w_rho, l.in * l.out);
      rdo::bnn::detail::read_into(lj, "bias_mu", p + l.b_mu, l.out);
      rdo::bnn::detail::read_into(lj, "bias_rho", p + l.b_rho, l.out);
    }
    if (!s.params.allFinite() || !s.norm.x_mean.allFinite() || !s.norm.x_std.allFinite())
      throw InvalidArgument("bnn state: non-finite values");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bnn state: malformed JSON: ") + e.what());
  }
}

inline void save_state(const VariationalState& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << state_to_json(s).dump(1) << '\n';
}

inline VariationalState load_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("bnn state: " + path + ": " + e.what());
  }
  return state_from_json(j);
}

}  // namespace rdo::bnn
