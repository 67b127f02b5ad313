#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cdis/tensor.hpp"

namespace cdis {

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued f at `point`.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  double eps = 1e-5);

struct ParamCheck {
  std::string name;
  double max_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_error = 0.0;
  std::string worst_param;
};

/// Checks d loss / d p for every named parameter. `loss_fn` must rebuild the
/// loss from the current parameter values on each call; the harness installs
/// its own tape for the analytic pass.
GradCheckReport grad_check_parameters(const std::function<Tensor()>& loss_fn,
                                      std::vector<NamedTensor> params, double eps = 1e-5);

}  // namespace cdis
