#include "bvfsm/auxfun.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace bvfsm {

ExtendedReal::ExtendedReal(double v) : v_(v) {
  if (std::isnan(v)) throw NonFiniteEvaluation("ExtendedReal: NaN");
  if (std::isinf(v)) {
    if (v < 0) throw NonFiniteEvaluation("ExtendedReal: -inf");
    infinite_ = true;
    v_ = 0.0;
  }
}

ExtendedReal ExtendedReal::infinity() {
  ExtendedReal r;
  r.infinite_ = true;
  return r;
}

double ExtendedReal::value() const {
  if (infinite_) throw BarrierWall("barrier value is +inf");
  return v_;
}

double ExtendedReal::to_double() const {
  return infinite_ ? std::numeric_limits<double>::infinity() : v_;
}

ExtendedReal& ExtendedReal::operator+=(const ExtendedReal& o) {
  if (o.infinite_) infinite_ = true;
  if (!infinite_) v_ += o.v_;
  return *this;
}

ExtendedReal& ExtendedReal::operator+=(double v) { return *this += ExtendedReal(v); }

bool operator<(const ExtendedReal& a, const ExtendedReal& b) {
  if (a.infinite_) return false;
  if (b.infinite_) return true;
  return a.v_ < b.v_;
}

bool operator<=(const ExtendedReal& a, const ExtendedReal& b) { return !(b < a); }

AuxiliaryFunction AuxiliaryFunction::quadratic() {
  AuxiliaryFunction a;
  a.kind = AuxKind::QuadraticPenalty;
  return a;
}

AuxiliaryFunction AuxiliaryFunction::polynomial(int q) {
  if (q < 2) throw InvalidParameter("polynomial penalty needs q >= 2");
  AuxiliaryFunction a;
  a.kind = AuxKind::PolynomialPenalty;
  a.q = q;
  return a;
}

AuxiliaryFunction AuxiliaryFunction::inverse() {
  AuxiliaryFunction a;
  a.kind = AuxKind::InverseBarrier;
  return a;
}

AuxiliaryFunction AuxiliaryFunction::truncated_log(double kappa) {
  AuxiliaryFunction a;
  a.kind = AuxKind::TruncatedLogBarrier;
  a.kappa = kappa;
  a.beta = truncated_log_coeffs(kappa);
  return a;
}

AuxiliaryFunction AuxiliaryFunction::as_modified() const {
  if (!is_barrier()) throw InvalidParameter("only barriers take the modified wrapper");
  AuxiliaryFunction a = *this;
  a.modified = true;
  return a;
}

namespace {

double parse_number(const std::string& s, const std::string& whole) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidParameter("bad number in auxiliary function name: " + whole);
  }
}

}  // namespace

AuxiliaryFunction AuxiliaryFunction::parse(const std::string& name) {
  std::string rest = name;
  bool modified = false;
  const std::string prefix = "modified-";
  if (rest.rfind(prefix, 0) == 0) {
    modified = true;
    rest = rest.substr(prefix.size());
  }
  std::string head = rest, arg;
  if (const auto colon = rest.find(':'); colon != std::string::npos) {
    head = rest.substr(0, colon);
    arg = rest.substr(colon + 1);
  }
  AuxiliaryFunction a;
  if (head == "quadratic" && arg.empty()) {
    a = quadratic();
  } else if (head == "polynomial") {
    const double q = arg.empty() ? 2.0 : parse_number(arg, name);
    if (q != std::floor(q)) throw InvalidParameter("polynomial q must be an integer: " + name);
    a = polynomial(static_cast<int>(q));
  } else if (head == "inverse" && arg.empty()) {
    a = inverse();
  } else if (head == "truncated-log") {
    a = truncated_log(arg.empty() ? 1.0 : parse_number(arg, name));
  } else {
    throw InvalidParameter("unknown auxiliary function: " + name);
  }
  return modified ? a.as_modified() : a;
}

std::string AuxiliaryFunction::name() const {
  std::ostringstream os;
  if (modified) os << "modified-";
  switch (kind) {
    case AuxKind::QuadraticPenalty: os << "quadratic"; break;
    case AuxKind::PolynomialPenalty: os << "polynomial:" << q; break;
    case AuxKind::InverseBarrier: os << "inverse"; break;
    case AuxKind::TruncatedLogBarrier: os << "truncated-log:" << kappa; break;
  }
  return os.str();
}

std::array<double, 4> truncated_log_coeffs(double kappa) {
  if (!(kappa > 0.0 && kappa <= 1.0)) {
    throw InvalidParameter("truncated-log kappa must lie in (0, 1]");
  }
  return {-1.5 - std::log(kappa), 0.0, 0.5 * kappa * kappa, 2.0 * kappa};
}

ExtendedReal aux_value(const AuxiliaryFunction& aux, double omega, double sigma) {
  if (std::isnan(omega)) throw NonFiniteEvaluation("auxiliary function at NaN");
  switch (aux.kind) {
    case AuxKind::QuadraticPenalty: {
      const double p = std::max(omega, 0.0);
      return ExtendedReal(p * p / (2.0 * sigma));
    }
    case AuxKind::PolynomialPenalty: {
      const double p = std::max(omega, 0.0);
      return ExtendedReal(std::pow(p, aux.q) / (aux.q * sigma));
    }
    case AuxKind::InverseBarrier:
      if (omega >= 0.0) return ExtendedReal::infinity();
      return ExtendedReal(-sigma / omega);
    case AuxKind::TruncatedLogBarrier: {
      if (omega >= 0.0) return ExtendedReal::infinity();
      const auto& b = aux.beta;
      if (omega >= -aux.kappa) return ExtendedReal(-sigma * (std::log(-omega) + b[0]));
      return ExtendedReal(-sigma * (b[1] + b[2] / (omega * omega) + b[3] / omega));
    }
  }
  return ExtendedReal::infinity();
}

double aux_slope(const AuxiliaryFunction& aux, double omega, double sigma) {
  if (std::isnan(omega)) throw NonFiniteEvaluation("auxiliary slope at NaN");
  switch (aux.kind) {
    case AuxKind::QuadraticPenalty:
      return std::max(omega, 0.0) / sigma;
    case AuxKind::PolynomialPenalty:
      return std::pow(std::max(omega, 0.0), aux.q - 1) / sigma;
    case AuxKind::InverseBarrier:
      if (omega >= 0.0) throw BarrierWall("inverse barrier slope at the wall");
      return sigma / (omega * omega);
    case AuxKind::TruncatedLogBarrier: {
      if (omega >= 0.0) throw BarrierWall("truncated-log slope at the wall");
      const auto& b = aux.beta;
      if (omega >= -aux.kappa) return -sigma / omega;
      const double w2 = omega * omega;
      return sigma * (2.0 * b[2] / (w2 * omega) + b[3] / w2);
    }
  }
  return 0.0;
}

ExtendedReal aux_value(const AuxiliaryFunction& aux, double omega, double sigma,
                       double shift) {
  return aux_value(aux, aux.modified ? omega - shift : omega, sigma);
}

double aux_slope(const AuxiliaryFunction& aux, double omega, double sigma,
                 double shift) {
  return aux_slope(aux, aux.modified ? omega - shift : omega, sigma);
}

ScheduleState ScheduleState::geometric(double mu0, double theta0, double sigma0,
                                       double decay) {
  ScheduleState s;
  s.mu = {mu0, decay};
  s.theta = {theta0, decay};
  s.sigma1 = {sigma0, decay};
  for (Decaying* d : {&s.sigma2, &s.sigma_B, &s.sigma_H, &s.sigma_h, &s.shift_H, &s.shift_h}) {
    d->decay = decay;
  }
  s.check();
  return s;
}

void ScheduleState::check() const {
  const std::pair<const char*, const Decaying*> all[] = {
      {"mu", &mu},           {"theta", &theta},     {"sigma1", &sigma1},
      {"sigma2", &sigma2},   {"sigma_B", &sigma_B}, {"sigma_H", &sigma_H},
      {"sigma_h", &sigma_h}, {"shift_H", &shift_H}, {"shift_h", &shift_h}};
  for (const auto& [label, d] : all) {
    if (!(d->value > 0.0) || !std::isfinite(d->value)) {
      throw InvalidParameter(std::string("schedule: ") + label + " must be > 0");
    }
    if (!(d->decay > 0.0 && d->decay <= 1.0)) {
      throw InvalidParameter(std::string("schedule: ") + label + " decay must be in (0, 1]");
    }
  }
}

ScheduleState schedule_step(const ScheduleState& s) {
  ScheduleState n = s;
  ++n.k;
  for (Decaying* d : {&n.mu, &n.theta, &n.sigma1, &n.sigma2, &n.sigma_B, &n.sigma_H,
                      &n.sigma_h, &n.shift_H, &n.shift_h}) {
    d->value *= d->decay;
  }
  return n;
}

namespace {

double sched_shift(const ScheduleState& sched, double context_shift) {
  return sched.sigma2_rule == Sigma2Rule::Static ? sched.sigma2.value : context_shift;
}

}  // namespace

ExtendedReal aux_eval(const AuxiliaryFunction& aux, double omega,
                      const ScheduleState& sched, double context_shift) {
  return aux_value(aux, omega, sched.sigma1.value, sched_shift(sched, context_shift));
}

double aux_deriv(const AuxiliaryFunction& aux, double omega,
                 const ScheduleState& sched, double context_shift) {
  return aux_slope(aux, omega, sched.sigma1.value, sched_shift(sched, context_shift));
}

}  // namespace bvfsm
