#pragma once

#include "fslab/errors.hpp"

namespace fslab {

// Synchronized training schedules: cosine LR with linear warmup, cosine
// temperature annealing, and a hold/ramp/hold contrastive-weight schedule.
// All three are pure functions of (spec, step) and clamp exactly to their
// endpoint values.
struct ScheduleSpec {
  int total_steps = 1;
  int warmup_steps = 0;
  double lr_base = 1e-3;
  double lr_final = 1e-6;
  double tau_start = 0.2;
  double tau_end = 0.07;
  double lambda_start = 0.05;
  double lambda_end = 0.3;
  // lambda holds at lambda_start for the first 10% of steps, then ramps
  // linearly, reaching lambda_end at lambda_warmup_fraction of total_steps.
  double lambda_warmup_fraction = 0.5;
  enum class LambdaShape { RampHold, Triangular } lambda_shape = LambdaShape::RampHold;

  void validate() const;
};

double lr_at(const ScheduleSpec& spec, int step);
double tau_at(const ScheduleSpec& spec, int step);
double lambda_at(const ScheduleSpec& spec, int step);

const char* lambda_shape_name(ScheduleSpec::LambdaShape shape);

}  // namespace fslab
