#pragma once

#include <vector>

#include "gradmix/tensor.hpp"

namespace gradmix {

/// Per-class stores of L2-normalized training embeddings for the kNN
/// open-set scorer. Immutable after build.
class FeatureBank {
public:
    /// embeddings: N x D; every class must have at least k samples.
    FeatureBank(const Tensor& embeddings, const std::vector<int>& labels, int k);

    int class_count() const { return static_cast<int>(per_class_.size()); }
    int k() const { return k_; }
    int dim() const { return dim_; }
    const std::vector<std::vector<float>>& vectors(int cls) const { return per_class_[cls]; }

private:
    std::vector<std::vector<std::vector<float>>> per_class_;
    int k_ = 1;
    int dim_ = 0;
};

struct DetectionResult {
    double score = 0.0;               // max_c d_c / sum_c d_c, higher = more in-set
    int predicted = -1;               // argmax_c d_c
    std::vector<double> class_sums;   // d_c per class
    bool degenerate = false;          // sum_c d_c <= 0, score undefined
};

/// Top-k cosine-similarity sums per class; test embedding unit-normalized.
DetectionResult knn_osr_score(const FeatureBank& bank, const std::vector<float>& embedding);

/// Returns (max softmax probability, negated Shannon entropy); both scores
/// are higher for more in-set samples.
std::pair<double, double> msp_and_entropy_scores(const std::vector<float>& logits);

struct MahalanobisModel {
    std::vector<std::vector<double>> class_means;
    std::vector<double> chol;  // lower Cholesky factor of the pooled covariance, D x D
    int dim = 0;
};

/// Pooled within-class covariance with ridge regularization eps * I.
MahalanobisModel fit_mahalanobis(const Tensor& embeddings, const std::vector<int>& labels,
                                 double ridge = 1e-3);

/// Negated Mahalanobis distance to the nearest class mean.
double mahalanobis_score(const MahalanobisModel& model, const std::vector<float>& embedding);

struct TwoNNResult {
    double id_estimate = 0.0;
    int skipped_duplicates = 0;
};

/// Two-nearest-neighbor maximum-likelihood intrinsic-dimension estimate
/// with tail discard (points: N x D, N >= 50).
TwoNNResult twonn_id(const Tensor& points, double discard_fraction = 0.1);

}  // namespace gradmix
