#include "metakey/metacore/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace metakey::metacore {

void adam_step(std::vector<at::Tensor>& params, const std::vector<at::Tensor>& grads,
               AdamState& opt, double lr) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("gradient count does not match the parameter count");
  }
  at::NoGradGuard no_grad;
  if (opt.first.empty()) {
    for (const auto& p : params) {
      opt.first.push_back(at::zeros_like(p));
      opt.second.push_back(at::zeros_like(p));
    }
  }
  if (opt.first.size() != params.size()) {
    throw std::logic_error("optimizer state does not match the parameter layout");
  }
  opt.steps += 1;
  const auto t = static_cast<double>(opt.steps);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t j = 0; j < params.size(); ++j) {
    at::Tensor& m = opt.first[j];
    at::Tensor& v = opt.second[j];
    m = m * opt.beta1 + grads[j] * (1.0 - opt.beta1);
    v = v * opt.beta2 + grads[j] * grads[j] * (1.0 - opt.beta2);
    params[j] = params[j] - (m / bc1) / ((v / bc2).sqrt() + opt.eps) * lr;
  }
}

}  // namespace metakey::metacore
