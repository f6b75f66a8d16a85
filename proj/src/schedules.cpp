#include "fslab/schedules.hpp"

#include <cmath>
#include <string>

namespace fslab {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_step(const ScheduleSpec& spec, int step) {
  if (step < 0 || step > spec.total_steps) {
    throw ConfigError("schedule: step " + std::to_string(step) + " out of range [0," +
                      std::to_string(spec.total_steps) + "]");
  }
}

}  // namespace

void ScheduleSpec::validate() const {
  if (total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw ConfigError("schedule: warmup_steps must satisfy 0 <= warmup < total");
  }
  if (!(tau_start >= tau_end && tau_end > 0.0)) {
    throw ConfigError("schedule: temperatures must satisfy tau_start >= tau_end > 0");
  }
  if (lambda_start < 0.0 || lambda_end < 0.0) {
    throw ConfigError("schedule: lambda values must be >= 0");
  }
  if (lambda_warmup_fraction < 0.1 || lambda_warmup_fraction > 1.0) {
    throw ConfigError("schedule: lambda_warmup_fraction must be in [0.1, 1]");
  }
  if (lr_base < 0.0 || lr_final < 0.0) throw ConfigError("schedule: learning rates must be >= 0");
}

double lr_at(const ScheduleSpec& spec, int step) {
  check_step(spec, step);
  if (step < spec.warmup_steps) {
    return spec.lr_base * static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
  }
  if (step == spec.warmup_steps) return spec.lr_base;
  if (step == spec.total_steps) return spec.lr_final;
  const double progress = static_cast<double>(step - spec.warmup_steps) /
                          static_cast<double>(spec.total_steps - spec.warmup_steps);
  return spec.lr_final + 0.5 * (spec.lr_base - spec.lr_final) * (1.0 + std::cos(kPi * progress));
}

double tau_at(const ScheduleSpec& spec, int step) {
  check_step(spec, step);
  if (step == 0) return spec.tau_start;
  if (step == spec.total_steps) return spec.tau_end;
  const double progress = static_cast<double>(step) / static_cast<double>(spec.total_steps);
  return spec.tau_end + 0.5 * (spec.tau_start - spec.tau_end) * (1.0 + std::cos(kPi * progress));
}

double lambda_at(const ScheduleSpec& spec, int step) {
  check_step(spec, step);
  const double frac = static_cast<double>(step) / static_cast<double>(spec.total_steps);
  if (spec.lambda_shape == ScheduleSpec::LambdaShape::Triangular) {
    // rises to lambda_end at the warmup fraction, falls back by the end
    const double peak = spec.lambda_warmup_fraction;
    if (frac <= 0.0) return spec.lambda_start;
    if (frac >= 1.0) return spec.lambda_start;
    if (frac <= peak) {
      return spec.lambda_start + (spec.lambda_end - spec.lambda_start) * (frac / peak);
    }
    return spec.lambda_end + (spec.lambda_start - spec.lambda_end) * (frac - peak) / (1.0 - peak);
  }
  const double hold = 0.1;
  if (frac <= hold) return spec.lambda_start;
  if (frac >= spec.lambda_warmup_fraction) return spec.lambda_end;
  const double t = (frac - hold) / (spec.lambda_warmup_fraction - hold);
  return spec.lambda_start + (spec.lambda_end - spec.lambda_start) * t;
}

const char* lambda_shape_name(ScheduleSpec::LambdaShape shape) {
  return shape == ScheduleSpec::LambdaShape::Triangular ? "triangular" : "ramp";
}

}  // namespace fslab
