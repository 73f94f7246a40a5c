#include "cdet/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace cdet {

AdamW::AdamW(ParamRefs params) : AdamW(std::move(params), Options{}) {}

AdamW::AdamW(ParamRefs params, Options opts) : params_(std::move(params)), opts_(opts) {
  slots_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    size_t n = params_[i]->tensor.values().size();
    slots_[i].m.assign(n, 0.0);
    slots_[i].v.assign(n, 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.frozen) continue;
    const auto& g = p.tensor.grad();
    if (g.empty()) {
      throw std::runtime_error("AdamW: parameter '" + p.name +
                               "' has no gradient; run backward first");
    }
    auto& w = p.tensor.values_mut();
    auto& m = slots_[i].m;
    auto& v = slots_[i].v;
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      w[j] -= opts_.lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * w[j]);
    }
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->tensor.zero_grad();
}

}  // namespace cdet

// Rng::normal lives here so rng.hpp stays header-only light.
#include "cdet/rng.hpp"

namespace cdet {

double Rng::normal() {
  double u1 = 1.0 - uniform();  // (0,1], keeps log finite
  double u2 = uniform();
  constexpr double kTau = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTau * u2);
}

std::vector<double> Rng::normals(size_t n, double mean, double stddev) {
  std::vector<double> out(n);
  for (auto& x : out) x = normal(mean, stddev);
  return out;
}

}  // namespace cdet
