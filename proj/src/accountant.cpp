#include "dpfusion/accountant.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <charconv>
#include <cmath>

#include "json.hpp"

namespace dpfusion::privacy {

double gbar(const std::vector<double>& fusion_vector) {
  if (fusion_vector.empty()) {
    throw InvalidInputError("gbar: fusion vector must have at least one entry");
  }
  double g = 0.0;
  for (double v : fusion_vector) {
    if (!std::isfinite(v)) {
      throw InvalidInputError("gbar: non-finite fusion vector entry");
    }
    g = std::max(g, std::fabs(v));
  }
  return g;
}

double renyi_loss(double gbar_value, const MechanismShape& shape,
                  const RenyiOrder& order) {
  if (gbar_value < 0.0) {
    throw InvalidInputError("renyi_loss: gbar must be nonnegative");
  }
  return 0.5 * order.alpha * shape.d * gbar_value * gbar_value;
}

double clip_bound(double remaining, const MechanismShape& shape,
                  const RenyiOrder& order) {
  if (remaining < 0.0) {
    throw InvalidInputError("clip_bound: remaining budget is negative");
  }
  return std::sqrt(2.0 * remaining / (order.alpha * shape.d));
}

std::vector<double> clip_fusion_vector(const std::vector<double>& fusion_vector,
                                       double bound) {
  if (bound < 0.0) {
    throw InvalidInputError("clip_fusion_vector: bound must be nonnegative");
  }
  std::vector<double> out(fusion_vector.size());
  for (std::size_t i = 0; i < fusion_vector.size(); ++i) {
    out[i] = std::clamp(fusion_vector[i], -bound, bound);
  }
  return out;
}

PrivacyLedger::PrivacyLedger(RenyiOrder alpha, double global_budget,
                             MechanismShape shape)
    : alpha_(alpha), shape_(shape), global_budget_(global_budget),
      remaining_(global_budget) {
  if (!(global_budget >= 0.0) || !std::isfinite(global_budget)) {
    throw InvalidInputError("ledger: global budget must be finite and >= 0");
  }
}

void PrivacyLedger::charge(double gbar_post_clip) {
  double loss = renyi_loss(gbar_post_clip, shape_, alpha_);
  if (loss > remaining_ + kOverrunGuard) {
    throw BudgetOverrunError(
        "privacy budget overrun: step leakage " + std::to_string(loss) +
        " exceeds remaining " + std::to_string(remaining_));
  }
  history_.push_back(loss);
  remaining_ = std::max(0.0, remaining_ - loss);
}

double PrivacyLedger::clip_bound() const {
  return privacy::clip_bound(remaining_, shape_, alpha_);
}

double PrivacyLedger::spent() const {
  double s = 0.0;
  for (double l : history_) s += l;
  return s;
}

std::string PrivacyLedger::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha_.alpha;
  j["global_budget"] = global_budget_;
  j["remaining"] = remaining_;
  j["history"] = history_;
  j["d"] = shape_.d;
  j["m"] = shape_.m;
  return j.dump();
}

PrivacyLedger PrivacyLedger::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  PrivacyLedger ledger(RenyiOrder(j.at("alpha").get<double>()),
                       j.at("global_budget").get<double>(),
                       MechanismShape(j.at("d").get<int>(),
                                      j.at("m").get<int>()));
  for (double l : j.at("history")) {
    ledger.history_.push_back(l);
  }
  ledger.remaining_ = j.at("remaining").get<double>();
  return ledger;
}

double numeric_renyi_divergence_gaussian(const std::vector<double>& mean_shift,
                                         const RenyiOrder& order) {
  if (!all_finite(mean_shift)) {
    throw InvalidInputError("numeric renyi divergence: non-finite mean shift");
  }
  double delta_sq = 0.0;
  for (double v : mean_shift) delta_sq += v * v;
  const double delta = std::sqrt(delta_sq);
  if (delta == 0.0) return 0.0;

  // Components orthogonal to the shift cancel in the density ratio, so the
  // divergence reduces to the scalar pair N(0,1) vs N(delta,1).
  const double a = order.alpha;
  auto log_phi = [](double x) {
    return -0.5 * x * x - 0.5 * std::log(2.0 * M_PI);
  };
  auto integrand = [&](double x) {
    return std::exp(a * log_phi(x) + (1.0 - a) * log_phi(x - delta));
  };

  // The integrand is a scaled Gaussian of unit curvature centered here.
  const double center = (1.0 - a) * delta;
  const double half_width = 45.0;
  double err = 0.0;
  using gk = boost::math::quadrature::gauss_kronrod<double, 61>;
  double integral = gk::integrate(integrand, center - half_width,
                                  center + half_width, 15, 1e-13, &err);
  if (!(integral > 0.0) || !std::isfinite(integral) ||
      err > 1e-9 * std::max(1.0, integral)) {
    throw NumericalError(
        "renyi divergence quadrature did not converge: integral=" +
        std::to_string(integral) + " err=" + std::to_string(err) +
        " delta=" + std::to_string(delta) + " alpha=" + std::to_string(a));
  }
  return std::log(integral) / (a - 1.0);
}

}  // namespace dpfusion::privacy
