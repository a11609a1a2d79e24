#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmvf/dataio.hpp"
#include "cmvf/model.hpp"
#include "cmvf/objective.hpp"

namespace cmvf {

// Classification accuracy at threshold 0.5; a prediction of exactly 0.5
// counts as class 1.
double accuracy(std::span<const double> preds, std::span<const int> labels);

// Rank-based AUC with averaged tie ranks: the probability that a uniformly
// chosen positive outranks a uniformly chosen negative, ties at half credit.
// Throws ValidationError when only one class is present.
double auc(std::span<const double> preds, std::span<const int> labels);

// Relative AUC improvement over a base model, normalized by distance from
// chance: ((target - 0.5) / (base - 0.5) - 1) * 100.
double real_impr(double target_auc, double base_auc);

struct MetricsReport {
  std::string group;  // overall | frequent | infrequent
  double acc = 0.0;
  std::optional<double> auc;       // absent when the group is single-class
  std::optional<double> real_impr;  // percent, filled against a base AUC
  std::size_t n_records = 0;
};

// Groups prediction/label pairs by record ownership and reports overall,
// frequent and infrequent metrics.
std::vector<MetricsReport> grouped_metrics(std::span<const double> preds,
                                           std::span<const int> labels,
                                           std::span<const RecordRef> records,
                                           const StudentGroups& groups,
                                           std::optional<double> base_auc = std::nullopt);

// Zero-noise inference over the test split (histories include the training
// events), reported overall and per student-frequency group.
std::vector<MetricsReport> group_report(const ModelParams& params, const Dataset& train,
                                        const Dataset& test, const StudentGroups& groups,
                                        const ObjectiveConfig& config,
                                        std::optional<double> base_auc = std::nullopt);

// Rendering: fixed-width table plus `group.metric=value` key-value lines.
std::string format_report_table(std::span<const MetricsReport> reports);
std::string format_report_kv(std::span<const MetricsReport> reports);

}  // namespace cmvf
