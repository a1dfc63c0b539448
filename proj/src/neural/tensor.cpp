#include <cmath>
#include <functional>
#include <numeric>

#include "opspam/error.hpp"
#include "opspam/neural.hpp"

namespace opspam {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("tensor shape holds " + std::to_string(element_count(shape_)) +
                         " values but " + std::to_string(data_.size()) + " were given");
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

nlohmann::json Tensor::to_json() const { return {{"shape", shape_}, {"data", data_}}; }

Tensor Tensor::from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(),
                j.at("data").get<std::vector<double>>());
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor(t.shape()));
  return out;
}

nlohmann::json params_to_json(const ParamSet& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : params) j[name] = t.to_json();
  return j;
}

ParamSet params_from_json(const nlohmann::json& j) {
  ParamSet out;
  for (const auto& [name, value] : j.items()) out.emplace(name, Tensor::from_json(value));
  return out;
}

}  // namespace opspam
