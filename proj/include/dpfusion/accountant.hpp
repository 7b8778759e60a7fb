#pragma once

#include <vector>

#include "dpfusion/common.hpp"

// Privacy mathematics for the structured Gaussian fusion mechanism: per-step
// Renyi loss, the gain clip bound that keeps it inside the remaining budget,
// and the append-only ledger enforcing the global budget under fully
// adaptive composition.

namespace dpfusion::privacy {

struct RenyiOrder {
  double alpha;

  explicit RenyiOrder(double a) : alpha(a) {
    if (!(a > 1.0)) {
      throw InvalidInputError("Renyi order must satisfy alpha > 1, got " +
                              std::to_string(a));
    }
  }
};

struct MechanismShape {
  int d;  // fusion output dimension
  int m;  // sensor count

  MechanismShape(int d_, int m_) : d(d_), m(m_) {
    if (d < 1 || m < 1) {
      throw InvalidInputError("mechanism shape requires d >= 1 and m >= 1");
    }
  }
};

// Largest absolute entry of the fusion vector; the only gain statistic the
// per-step leakage depends on.
double gbar(const std::vector<double>& fusion_vector);

// Per-step Renyi loss of the unit-noise Gaussian mechanism: alpha*d/2 * g^2.
double renyi_loss(double gbar_value, const MechanismShape& shape,
                  const RenyiOrder& order);

// Largest gain magnitude whose leakage still fits `remaining`:
// sqrt(2*remaining / (alpha*d)). Inverse of renyi_loss at fixed shape/order.
double clip_bound(double remaining, const MechanismShape& shape,
                  const RenyiOrder& order);

// Elementwise clamp of the fusion vector to [-bound, +bound].
std::vector<double> clip_fusion_vector(const std::vector<double>& fusion_vector,
                                       double bound);

// Hard-budget ledger. Single writer per rollout; every trajectory embeds its
// ledger so the privacy claim can be audited after the fact.
class PrivacyLedger {
 public:
  // Overshoot beyond this is a hard error; within it, remaining clamps to 0.
  static constexpr double kOverrunGuard = 1e-12;

  PrivacyLedger(RenyiOrder alpha, double global_budget, MechanismShape shape);

  // Appends the step leakage implied by the post-clip gain and decrements
  // the remaining budget. Throws BudgetOverrunError if the leakage exceeds
  // the remaining budget by more than the floating-point guard.
  void charge(double gbar_post_clip);

  double clip_bound() const;

  const RenyiOrder& order() const { return alpha_; }
  const MechanismShape& shape() const { return shape_; }
  double global_budget() const { return global_budget_; }
  double remaining() const { return remaining_; }
  const std::vector<double>& history() const { return history_; }
  double spent() const;

  std::string to_json() const;
  static PrivacyLedger from_json(const std::string& text);

 private:
  RenyiOrder alpha_;
  MechanismShape shape_;
  double global_budget_;
  double remaining_;
  std::vector<double> history_;
};

// Order-alpha Renyi divergence between N(mu1, I) and N(mu2, I) with
// mu1 - mu2 = mean_shift, computed by adaptive quadrature over the scalar
// sufficient direction. Independent numeric check of renyi_loss.
double numeric_renyi_divergence_gaussian(const std::vector<double>& mean_shift,
                                         const RenyiOrder& order);

}  // namespace dpfusion::privacy
