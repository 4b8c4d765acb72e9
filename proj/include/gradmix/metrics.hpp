#pragma once

#include <vector>

#include "gradmix/tensor.hpp"

namespace gradmix {

/// Detection score plus ground truth; higher score = predicted in-set.
struct ScoredSample {
    double score = 0.0;
    bool is_positive = false;
};

enum class PositiveSide { In, Out };

/// Mann-Whitney AUROC: P(score+ > score-) + 0.5 P(tie), via rank sums.
double auroc(const std::vector<ScoredSample>& samples);

/// TNR at the largest threshold achieving TPR >= level (TPR = TP/(TP+FN)).
double tnr_at_tpr(const std::vector<ScoredSample>& samples, double level = 0.95);

/// Best detection accuracy over all thresholds.
double dtacc(const std::vector<ScoredSample>& samples);

/// Area under the precision-recall curve; Out negates scores first.
double aupr(const std::vector<ScoredSample>& samples, PositiveSide side);

/// Openness percentage: 100 * (1 - sqrt(k / (k + u))).
double openness(int known_classes, int unknown_classes);

struct CorruptionGrid {
    double clean_accuracy = 0.0;
    std::vector<std::vector<double>> accuracy;  // [type][severity], severities 1..5
};

struct CorruptionAggregates {
    std::vector<std::vector<double>> drop;  // D[c][s] = A_clean - A[c][s]
    std::vector<double> mean_drop_per_type;      // (1/5) sum_s D[c][s]
    std::vector<double> mean_drop_per_severity;  // (1/T) sum_c D[c][s]
    double overall_mean = 0.0;
};

CorruptionAggregates corruption_aggregates(const CorruptionGrid& grid);

}  // namespace gradmix
