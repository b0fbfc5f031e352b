#include "tgvunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tgvunet {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const LossBuilder& loss) {
  Tape t;
  const double v = t.value(loss(t)).item();
  if (!std::isfinite(v)) throw Error("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Param*>& params,
                           const GradCheckOptions& opt) {
  if (!(opt.step > 0)) throw ConfigError("grad_check: step must be > 0");

  for (Param* p : params) p->zero_grad();
  {
    Tape t;
    const Var root = loss(t);
    if (!std::isfinite(t.value(root).item())) throw Error("grad_check: loss is not finite");
    t.backward(root);
  }

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (Param* p : params) {
    const std::vector<double> analytic(p->grad.data().begin(), p->grad.data().end());
    ParamCheck pc;
    pc.name = p->name;
    pc.elements = p->size();
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + opt.step;
      const double up = evaluate(loss);
      p->value[i] = saved - opt.step;
      const double down = evaluate(loss);
      p->value[i] = saved;
      const double numeric = (up - down) / (2 * opt.step);
      const double err = relative_error(analytic[i], numeric);
      if (err > pc.max_rel_error || i == 0) {
        pc.max_rel_error = std::max(pc.max_rel_error, err);
        pc.worst_index = i;
        pc.worst_analytic = analytic[i];
        pc.worst_numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(std::move(pc));
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace tgvunet
