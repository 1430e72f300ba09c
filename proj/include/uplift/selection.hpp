#pragma once

// Experiment-pool filtering: recency window, control-size floor, and a
// relative-lift rule measured in multiples of the lift's standard error.
//
// Relative lift R = (mean_T - mean_C) / mean_C on the experiment's primary
// outcome. Its standard error comes from the delta method,
//   Var(R) ~= var_T / (n_T * mu_C^2) + mu_T^2 * var_C / (n_C * mu_C^4),
// with unbiased per-arm sample variances. An experiment is kept when
//   age_days <= max_recency_days
//   control size >= min_control_size
//   relative_lift > min_lift_multiples * standard_error   (strict; disabled
//                                                          when multiples <= 0)
// Every exclusion is audited with a machine-readable reason.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "uplift/common.hpp"
#include "uplift/data.hpp"

namespace uplift {

struct LiftEstimate {
  double relative_lift = 0.0;
  double standard_error = 0.0;
  std::int64_t n_treatment = 0;
  std::int64_t n_control = 0;
};

inline LiftEstimate estimate_relative_lift(const Experiment& exp,
                                           std::string_view metric) {
  std::vector<double> t, c;
  for (const auto& o : exp.observations) {
    (o.arm == Arm::treatment ? t : c).push_back(o.outcome(metric));
  }
  if (t.empty() || c.empty()) {
    throw DataError("experiment " + exp.experiment_id + " has an empty arm");
  }
  if (t.size() < 2 || c.size() < 2) {
    throw DataError("experiment " + exp.experiment_id +
                    ": variance undefined for a single-observation arm");
  }
  const double mu_t = mean_of(t);
  const double mu_c = mean_of(c);
  if (mu_c == 0.0) {
    throw DataError("experiment " + exp.experiment_id +
                    ": relative lift undefined, control mean is zero");
  }
  const double var_t = sample_variance(t);
  const double var_c = sample_variance(c);
  LiftEstimate est;
  est.n_treatment = static_cast<std::int64_t>(t.size());
  est.n_control = static_cast<std::int64_t>(c.size());
  est.relative_lift = (mu_t - mu_c) / mu_c;
  est.standard_error =
      std::sqrt(var_t / (est.n_treatment * mu_c * mu_c) +
                mu_t * mu_t * var_c / (est.n_control * mu_c * mu_c * mu_c * mu_c));
  if (!std::isfinite(est.standard_error)) {
    throw DataError("experiment " + exp.experiment_id +
                    ": non-finite lift standard error");
  }
  return est;
}

struct SelectionCriteria {
  int max_recency_days = 90;
  std::int64_t min_control_size = 10000;
  double min_lift_multiples = 0.0;  // <= 0 disables the lift rule
  Date as_of_date{2025, 7, 1};

  void validate() const {
    if (max_recency_days < 0) throw ConfigError("max_recency_days must be >= 0");
    if (min_control_size < 0) throw ConfigError("min_control_size must be >= 0");
  }
};

enum class SelectionDecision { selected, excluded };

struct SelectionAudit {
  std::string experiment_id;
  SelectionDecision decision = SelectionDecision::excluded;
  std::string reason;  // "+"-joined failures in order recency, control_size, lift
  std::optional<double> lift;
  std::optional<double> se;
  std::int64_t control_size = 0;
  long age_days = 0;
};

struct SelectionResult {
  std::vector<std::size_t> selected;  // indices into the input pool
  std::vector<SelectionAudit> audits;  // one row per pool experiment
};

inline SelectionResult select_experiments(const std::vector<Experiment>& pool,
                                          const SelectionCriteria& criteria) {
  criteria.validate();
  for (const auto& exp : pool) {
    if (!(exp.end_date <= criteria.as_of_date)) {
      throw ConfigError("as_of_date " + criteria.as_of_date.to_string() +
                        " precedes end_date of experiment " + exp.experiment_id);
    }
  }

  SelectionResult result;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Experiment& exp = pool[i];
    SelectionAudit audit;
    audit.experiment_id = exp.experiment_id;
    audit.age_days = criteria.as_of_date - exp.end_date;
    audit.control_size = static_cast<std::int64_t>(exp.arm_count(Arm::control));

    std::string reason;
    auto add_reason = [&](const char* r) {
      if (!reason.empty()) reason += "+";
      reason += r;
    };

    if (audit.age_days > criteria.max_recency_days) add_reason("recency");
    if (audit.control_size < criteria.min_control_size) add_reason("control_size");

    if (criteria.min_lift_multiples > 0.0) {
      try {
        const LiftEstimate est = estimate_relative_lift(exp, exp.primary_outcome);
        audit.lift = est.relative_lift;
        audit.se = est.standard_error;
        if (!(est.relative_lift >
              criteria.min_lift_multiples * est.standard_error)) {
          add_reason("lift");
        }
      } catch (const DataError&) {
        add_reason("lift_undefined");
      }
    }

    if (reason.empty()) {
      audit.decision = SelectionDecision::selected;
      result.selected.push_back(i);
    } else {
      audit.decision = SelectionDecision::excluded;
      audit.reason = std::move(reason);
    }
    result.audits.push_back(std::move(audit));
  }
  return result;
}

inline void write_audit_csv(const std::filesystem::path& path,
                            const std::vector<SelectionAudit>& audits) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write audit file " + path.string());
  out << "experiment_id,decision,reason,lift,se,control_size,age_days\n";
  for (const auto& a : audits) {
    out << a.experiment_id << ","
        << (a.decision == SelectionDecision::selected ? "selected" : "excluded")
        << "," << a.reason << "," << (a.lift ? dtos(*a.lift) : "") << ","
        << (a.se ? dtos(*a.se) : "") << "," << a.control_size << ","
        << a.age_days << "\n";
  }
}

}  // namespace uplift
