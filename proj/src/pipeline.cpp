#include "massub/pipeline.hpp"

#include "massub/rng.hpp"

#include <cmath>

namespace massub {

std::string_view to_string(MomentChoice choice) noexcept {
  switch (choice) {
    case MomentChoice::None: return "none";
    case MomentChoice::XY: return "xy";
    case MomentChoice::Optimal: return "opt";
  }
  return "?";
}

Design design_for(EstimatorKind kind) noexcept {
  return kind == EstimatorKind::UniformMle ? Design::Uniform : Design::ScoreNorm;
}

FitSession::FitSession(const RecordSource& source, std::shared_ptr<const ConditionalModel> model,
                       SessionConfig config)
    : source_(source), model_(std::move(model)), config_(config) {
  if (!model_) throw InputError("fit session needs a model");
  if (source_.covariate_dim() != model_->covariate_dim()) {
    throw InputError("data has " + std::to_string(source_.covariate_dim()) +
                     " covariates, model expects " + std::to_string(model_->covariate_dim()));
  }
  if (config_.threads == 0) config_.threads = 1;
}

void FitSession::ensure_pilot() {
  if (pilot_done_) return;
  if (config_.n0 == 0) {
    pilot_done_ = true;
    return;
  }
  split_.reset();
  split_.emplace(draw_pilot(source_, config_.n0, derive_seed(config_.seed, kPilotStream),
                            config_.threads));
  const SubsamplingPlan pilot_plan =
      make_plan(Design::Uniform, source_, static_cast<double>(config_.n0));
  const NewtonResult r = solve_plain(EstimatorKind::UniformMle, split_->pilot, *model_, pilot_plan,
                                     model_->default_initial());
  pilot_theta_ = r.theta;
  pilot_iterations_ = r.iterations;
  pilot_done_ = true;
}

const RecordSource& FitSession::main_source() {
  ensure_pilot();
  if (split_) return split_->remainder;
  return source_;
}

const std::optional<Parameter>& FitSession::pilot_estimate() {
  ensure_pilot();
  return pilot_theta_;
}

const SubsamplingPlan& FitSession::plan(Design design) {
  auto& slot_ref = plans_[slot(design)];
  if (!slot_ref) {
    const RecordSource& src = main_source();
    if (design == Design::ScoreNorm && !pilot_theta_) {
      throw InputError("score-norm subsampling needs a pilot subsample (pilot size > 0)");
    }
    slot_ref = make_plan(design, src, config_.n, model_, pilot_theta_, config_.threads);
  }
  return *slot_ref;
}

const Subsample& FitSession::subsample(Design design) {
  auto& slot_ref = draws_[slot(design)];
  if (!slot_ref) {
    const SubsamplingPlan& p = plan(design);
    slot_ref = draw_poisson(p, main_source(), derive_seed(config_.seed, kMainStream), config_.threads);
    if (slot_ref->empty()) {
      throw NumericalError(NumericalFailure::EmptySubsample, "main subsample is empty");
    }
  }
  return *slot_ref;
}

const NewtonResult& FitSession::plain_fit(EstimatorKind kind) {
  auto& slot_ref = plain_[slot(kind)];
  if (!slot_ref) {
    check_estimator(kind, *model_);
    const Design design = design_for(kind);
    const Subsample& s = subsample(design);
    const Parameter initial = pilot_estimate() ? *pilot_theta_ : model_->default_initial();
    slot_ref = solve_plain(kind, s, *model_, plan(design), initial);
  }
  return *slot_ref;
}

const MomentFunction& FitSession::moment_function(MomentChoice choice) {
  if (choice == MomentChoice::None) throw InputError("no moment function for moment 'none'");
  auto& slot_ref = moments_[slot(choice)];
  if (!slot_ref) {
    if (choice == MomentChoice::XY) {
      slot_ref = MomentFunction::xy(model_->covariate_dim());
    } else {
      if (!pilot_estimate()) {
        throw InputError("the optimal moment needs a pilot subsample (pilot size > 0)");
      }
      slot_ref = build_optimal_moment(model_, *pilot_theta_);
    }
  }
  return *slot_ref;
}

const Vector& FitSession::mu_hat(MomentChoice choice) {
  auto& slot_ref = mu_[slot(choice)];
  if (!slot_ref) {
    const MomentFunction& h = moment_function(choice);
    slot_ref = whole_data_moment(h, main_source(), config_.threads).mu_hat;
  }
  return *slot_ref;
}

FitResult FitSession::fit(EstimatorKind kind, MomentChoice moment, bool jitter) {
  check_estimator(kind, *model_);
  const Design design = design_for(kind);

  FitResult out;
  out.kind = kind;
  out.moment = moment;
  const NewtonResult& plain = plain_fit(kind);
  const Subsample& s = subsample(design);
  const SubsamplingPlan& p = plan(design);
  out.theta_tilde = plain.theta;
  out.pilot = pilot_theta_;

  FitDiagnostics& diag = out.diagnostics;
  diag.newton_iterations = plain.iterations;
  diag.pilot_iterations = pilot_iterations_;
  diag.realized_n = s.size();
  diag.expected_n = s.expected_n;
  diag.remainder_size = main_source().size();
  if (split_) {
    diag.pilot_size = split_->pilot.size();
    diag.pilot_seed = split_->seed_used;
  }
  diag.plan_fell_back_to_uniform = p.fell_back_to_uniform;
  diag.clamped_records = p.clamped_records;
  diag.rescale_rounds = p.rescale_rounds;
  if (p.fell_back_to_uniform) {
    diag.warnings.emplace_back("all pilot score norms were zero; the plan fell back to uniform");
  }
  if (split_ && split_->seed_used != derive_seed(config_.seed, kPilotStream)) {
    diag.warnings.emplace_back("pilot draw was empty and was redrawn");
  }

  if (moment == MomentChoice::None) {
    GmmAssembly a = assemble_gmm(kind, s, *model_, p, nullptr, nullptr, plain.theta);
    const MasStep step = mas_step(a);
    out.theta_mas = plain.theta;
    out.v_hat = step.v_hat;
    out.std_errors = step.std_errors;
    diag.condition_omega = step.condition_omega;
    return out;
  }

  const MomentFunction& h = moment_function(moment);
  const Vector& mu = mu_hat(moment);
  GmmAssembly a = assemble_gmm(kind, s, *model_, p, &h, &mu, plain.theta);
  if (jitter) {
    apply_jitter(a);
    diag.warnings.emplace_back("jitter added to Omega22");
  }
  const MasStep step = mas_step(a);
  out.theta_mas = step.theta_mas;
  out.v_hat = step.v_hat;
  out.std_errors = step.std_errors;
  diag.q = a.q;
  diag.jitter = a.jitter;
  diag.condition_omega = step.condition_omega;
  return out;
}

}  // namespace massub
