#pragma once

// Penalty and barrier auxiliary functions rho(omega; sigma) and the
// geometric parameter schedule that drives them toward zero.

#include "bvfsm/core.hpp"

#include <array>
#include <string>

namespace bvfsm {

/// A real number or +infinity. Barrier walls are carried as the tagged
/// infinite state so they never turn into NaN through arithmetic.
class ExtendedReal {
 public:
  ExtendedReal() = default;
  explicit ExtendedReal(double v);
  static ExtendedReal infinity();

  [[nodiscard]] bool is_infinite() const { return infinite_; }
  [[nodiscard]] bool is_finite() const { return !infinite_; }
  /// Throws BarrierWall when infinite.
  [[nodiscard]] double value() const;
  /// The finite value, or std::numeric_limits<double>::infinity().
  [[nodiscard]] double to_double() const;

  ExtendedReal& operator+=(const ExtendedReal& o);
  ExtendedReal& operator+=(double v);
  friend ExtendedReal operator+(ExtendedReal a, const ExtendedReal& b) { return a += b; }
  friend ExtendedReal operator+(ExtendedReal a, double b) { return a += b; }
  friend bool operator<(const ExtendedReal& a, const ExtendedReal& b);
  friend bool operator<=(const ExtendedReal& a, const ExtendedReal& b);

 private:
  double v_ = 0.0;
  bool infinite_ = false;
};

enum class AuxKind { QuadraticPenalty, PolynomialPenalty, InverseBarrier, TruncatedLogBarrier };

struct AuxiliaryFunction {
  AuxKind kind = AuxKind::TruncatedLogBarrier;
  int q = 2;           // PolynomialPenalty exponent
  double kappa = 1.0;  // TruncatedLogBarrier switch point
  std::array<double, 4> beta{};
  /// Shift the wall: rho(omega - sigma2; sigma1). Barrier kinds only.
  bool modified = false;

  static AuxiliaryFunction quadratic();
  static AuxiliaryFunction polynomial(int q);
  static AuxiliaryFunction inverse();
  static AuxiliaryFunction truncated_log(double kappa = 1.0);
  [[nodiscard]] AuxiliaryFunction as_modified() const;

  /// Accepts "quadratic", "polynomial:q", "inverse", "truncated-log:kappa",
  /// each barrier optionally prefixed by "modified-".
  static AuxiliaryFunction parse(const std::string& name);
  [[nodiscard]] std::string name() const;

  [[nodiscard]] bool is_barrier() const {
    return kind == AuxKind::InverseBarrier || kind == AuxKind::TruncatedLogBarrier;
  }
  [[nodiscard]] bool is_penalty() const { return !is_barrier(); }
};

/// (beta1, beta2, beta3, beta4) with beta1 = -3/2 - log(kappa), beta2 = 0,
/// beta3 = kappa^2 / 2, beta4 = 2 kappa. Value, slope and curvature of the
/// log and rational branches agree at -kappa, and the rational branch stays
/// nonnegative and decays to 0 as omega -> -inf.
std::array<double, 4> truncated_log_coeffs(double kappa);

/// Unshifted rho(omega; sigma).
ExtendedReal aux_value(const AuxiliaryFunction& aux, double omega, double sigma);
/// d rho / d omega. Throws BarrierWall where rho is infinite.
double aux_slope(const AuxiliaryFunction& aux, double omega, double sigma);

/// Rho with an explicit wall shift (ignored unless aux.modified).
ExtendedReal aux_value(const AuxiliaryFunction& aux, double omega, double sigma,
                       double shift);
double aux_slope(const AuxiliaryFunction& aux, double omega, double sigma,
                 double shift);

/// A positive parameter multiplied by `decay` on each schedule step.
struct Decaying {
  double value = 1.0;
  double decay = 1.0 / 1.01;
};

enum class Sigma2Rule { Static, DynamicOffset };

struct ScheduleState {
  int k = 0;
  Decaying mu;
  Decaying theta;
  Decaying sigma1;  // value-function penalty P_f
  Sigma2Rule sigma2_rule = Sigma2Rule::Static;
  Decaying sigma2{0.1, 1.0 / 1.01};  // modified-barrier shift for P_f
  Decaying sigma_B{1.0, 1.0 / 1.01};  // LL-constraint barrier inside f*
  Decaying sigma_H{1.0, 1.0 / 1.01};
  Decaying sigma_h{1.0, 1.0 / 1.01};
  Decaying shift_H{0.05, 1.0 / 1.01};  // modified shift for P_H
  Decaying shift_h{0.05, 1.0 / 1.01};  // modified shift for P_h

  /// Same decay for every parameter, starting from (mu, theta, sigma1).
  static ScheduleState geometric(double mu0, double theta0, double sigma0,
                                 double decay);
  /// Throws InvalidParameter unless every value > 0 and decay in (0, 1].
  void check() const;
};

ScheduleState schedule_step(const ScheduleState& s);

/// rho(omega; sigma1) for the value-function penalty, applying the shift
/// rule of `sched` when aux is modified. `context_shift` is used only under
/// Sigma2Rule::DynamicOffset.
ExtendedReal aux_eval(const AuxiliaryFunction& aux, double omega,
                      const ScheduleState& sched, double context_shift = 0.0);
double aux_deriv(const AuxiliaryFunction& aux, double omega,
                 const ScheduleState& sched, double context_shift = 0.0);

}  // namespace bvfsm
