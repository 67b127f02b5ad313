#include "cdis/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cdis/error.hpp"

namespace cdis {
namespace {

double finite_scalar(const Tensor& t, const char* what) {
  const double v = t.item();
  if (!std::isfinite(v)) throw NumericError(std::string("grad_check: non-finite ") + what);
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  double eps) {
  Tensor x = Tensor::parameter(point.shape(), {point.data().begin(), point.data().end()});
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor loss = f(x);
    finite_scalar(loss, "loss");
    tape.backward(loss);
  }
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  double worst = 0.0;
  auto values = x.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + eps;
    const double up = finite_scalar(f(x), "evaluation");
    values[i] = orig - eps;
    const double down = finite_scalar(f(x), "evaluation");
    values[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

GradCheckReport grad_check_parameters(const std::function<Tensor()>& loss_fn,
                                      std::vector<NamedTensor> params, double eps) {
  for (auto& p : params) p.tensor.zero_grad();
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor loss = loss_fn();
    finite_scalar(loss, "loss");
    tape.backward(loss);
  }
  GradCheckReport report;
  for (auto& p : params) {
    std::vector<double> analytic(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) {
      std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());
    }
    ParamCheck check{p.name, 0.0, 0};
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double up = finite_scalar(loss_fn(), "evaluation");
      values[i] = orig - eps;
      const double down = finite_scalar(loss_fn(), "evaluation");
      values[i] = orig;
      const double err = relative_error(analytic[i], (up - down) / (2.0 * eps));
      if (err > check.max_error) {
        check.max_error = err;
        check.worst_index = i;
      }
    }
    if (check.max_error >= report.max_error) {
      report.max_error = check.max_error;
      report.worst_param = check.name;
    }
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace cdis
