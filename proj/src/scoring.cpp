#include "gradmix/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace gradmix {

FeatureBank::FeatureBank(const Tensor& embeddings, const std::vector<int>& labels, int k) : k_(k) {
    if (embeddings.ndim() != 2)
        throw Error("feature bank: embeddings must be N x D, got " + shape_str(embeddings.shape));
    const int n = embeddings.shape[0];
    dim_ = embeddings.shape[1];
    if (static_cast<int>(labels.size()) != n) throw Error("feature bank: label count mismatch");
    if (k < 1) throw Error("feature bank: k must be >= 1");

    int classes = 0;
    for (int l : labels) {
        if (l < 0) throw Error("feature bank: negative class id");
        classes = std::max(classes, l + 1);
    }
    if (classes < 2) throw Error("feature bank: needs at least 2 classes");
    per_class_.resize(classes);
    for (int i = 0; i < n; ++i) {
        std::vector<float> v(dim_);
        double norm = 0;
        for (int d = 0; d < dim_; ++d) {
            v[d] = embeddings.at2(i, d);
            norm += static_cast<double>(v[d]) * v[d];
        }
        norm = std::sqrt(norm);
        if (norm <= 0) throw Error("feature bank: zero embedding cannot be normalized");
        for (int d = 0; d < dim_; ++d) v[d] = static_cast<float>(v[d] / norm);
        per_class_[labels[i]].push_back(std::move(v));
    }
    for (int c = 0; c < classes; ++c)
        if (static_cast<int>(per_class_[c].size()) < k)
            throw Error("feature bank: class " + std::to_string(c) + " has " +
                        std::to_string(per_class_[c].size()) + " samples, fewer than k=" +
                        std::to_string(k));
}

DetectionResult knn_osr_score(const FeatureBank& bank, const std::vector<float>& embedding) {
    if (static_cast<int>(embedding.size()) != bank.dim())
        throw Error("knn score: embedding dimension mismatch");
    double qnorm = 0;
    for (float v : embedding) qnorm += static_cast<double>(v) * v;
    qnorm = std::sqrt(qnorm);
    if (qnorm <= 0) throw Error("knn score: zero embedding cannot be normalized");
    std::vector<double> q(embedding.size());
    for (std::size_t d = 0; d < embedding.size(); ++d) q[d] = embedding[d] / qnorm;
    DetectionResult r;
    const int C = bank.class_count();
    r.class_sums.resize(C);
    std::vector<double> sims;
    for (int c = 0; c < C; ++c) {
        const auto& vecs = bank.vectors(c);
        sims.clear();
        sims.reserve(vecs.size());
        for (const auto& v : vecs) {
            double s = 0;
            for (std::size_t d = 0; d < v.size(); ++d) s += static_cast<double>(v[d]) * q[d];
            sims.push_back(s);
        }
        std::partial_sort(sims.begin(), sims.begin() + bank.k(), sims.end(), std::greater<>());
        double sum = 0;
        for (int i = 0; i < bank.k(); ++i) sum += sims[i];
        r.class_sums[c] = sum;
    }
    r.predicted = 0;
    for (int c = 1; c < C; ++c)
        if (r.class_sums[c] > r.class_sums[r.predicted]) r.predicted = c;
    double total = 0;
    for (double d : r.class_sums) total += d;
    if (total <= 0) {
        r.degenerate = true;
        r.score = std::numeric_limits<double>::quiet_NaN();
    } else {
        r.score = r.class_sums[r.predicted] / total;
    }
    return r;
}

std::pair<double, double> msp_and_entropy_scores(const std::vector<float>& logits) {
    if (logits.empty()) throw Error("msp/entropy: empty logits");
    double mx = logits[0];
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double z = 0;
    for (float v : logits) z += std::exp(static_cast<double>(v) - mx);
    double msp = 0, entropy = 0;
    for (float v : logits) {
        double p = std::exp(static_cast<double>(v) - mx) / z;
        msp = std::max(msp, p);
        if (p > 0) entropy -= p * std::log(p);
    }
    return {msp, -entropy};
}

namespace {

/// In-place lower Cholesky factorization; throws on non-SPD input.
void cholesky(std::vector<double>& a, int n) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<std::size_t>(i) * n + j];
            for (int t = 0; t < j; ++t)
                s -= a[static_cast<std::size_t>(i) * n + t] * a[static_cast<std::size_t>(j) * n + t];
            if (i == j) {
                if (s <= 0) throw Error("mahalanobis: covariance not positive definite after ridge");
                a[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
            } else {
                a[static_cast<std::size_t>(i) * n + j] = s / a[static_cast<std::size_t>(j) * n + j];
            }
        }
        for (int j = i + 1; j < n; ++j) a[static_cast<std::size_t>(i) * n + j] = 0;
    }
}

}  // namespace

MahalanobisModel fit_mahalanobis(const Tensor& embeddings, const std::vector<int>& labels,
                                 double ridge) {
    if (embeddings.ndim() != 2)
        throw Error("mahalanobis: embeddings must be N x D, got " + shape_str(embeddings.shape));
    const int n = embeddings.shape[0], d = embeddings.shape[1];
    if (static_cast<int>(labels.size()) != n) throw Error("mahalanobis: label count mismatch");

    int classes = 0;
    for (int l : labels) classes = std::max(classes, l + 1);
    MahalanobisModel m;
    m.dim = d;
    m.class_means.assign(classes, std::vector<double>(d, 0.0));
    std::vector<int> counts(classes, 0);
    for (int i = 0; i < n; ++i) {
        ++counts[labels[i]];
        for (int j = 0; j < d; ++j) m.class_means[labels[i]][j] += embeddings.at2(i, j);
    }
    for (int c = 0; c < classes; ++c) {
        if (counts[c] == 0) throw Error("mahalanobis: class " + std::to_string(c) + " empty");
        for (int j = 0; j < d; ++j) m.class_means[c][j] /= counts[c];
    }

    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> diff(d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) diff[j] = embeddings.at2(i, j) - m.class_means[labels[i]][j];
        for (int a = 0; a < d; ++a)
            for (int b = 0; b <= a; ++b) cov[static_cast<std::size_t>(a) * d + b] += diff[a] * diff[b];
    }
    for (int a = 0; a < d; ++a)
        for (int b = 0; b <= a; ++b) {
            double v = cov[static_cast<std::size_t>(a) * d + b] / n;
            cov[static_cast<std::size_t>(a) * d + b] = v;
            cov[static_cast<std::size_t>(b) * d + a] = v;
        }
    for (int a = 0; a < d; ++a) cov[static_cast<std::size_t>(a) * d + a] += ridge;
    cholesky(cov, d);
    m.chol = std::move(cov);
    return m;
}

double mahalanobis_score(const MahalanobisModel& model, const std::vector<float>& embedding) {
    if (static_cast<int>(embedding.size()) != model.dim)
        throw Error("mahalanobis: embedding dimension mismatch");
    const int d = model.dim;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> y(d);
    for (const auto& mean : model.class_means) {
        // solve L y = (z - mu), distance^2 = |y|^2
        double acc = 0;
        for (int i = 0; i < d; ++i) {
            double s = embedding[i] - mean[i];
            for (int j = 0; j < i; ++j) s -= model.chol[static_cast<std::size_t>(i) * d + j] * y[j];
            y[i] = s / model.chol[static_cast<std::size_t>(i) * d + i];
            acc += y[i] * y[i];
        }
        best = std::min(best, acc);
    }
    return -std::sqrt(best);
}

TwoNNResult twonn_id(const Tensor& points, double discard_fraction) {
    if (points.ndim() != 2) throw Error("twonn: points must be N x D, got " + shape_str(points.shape));
    const int n = points.shape[0], d = points.shape[1];
    if (n < 50) throw Error("twonn: needs at least 50 points, got " + std::to_string(n));
    if (discard_fraction < 0 || discard_fraction >= 1) throw Error("twonn: discard fraction in [0,1)");

    TwoNNResult res;
    std::vector<double> mu;
    mu.reserve(n);
    for (int i = 0; i < n; ++i) {
        double r1 = std::numeric_limits<double>::infinity();
        double r2 = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double dist = 0;
            for (int t = 0; t < d; ++t) {
                double diff = static_cast<double>(points.at2(i, t)) - points.at2(j, t);
                dist += diff * diff;
            }
            if (dist < r1) {
                r2 = r1;
                r1 = dist;
            } else if (dist < r2) {
                r2 = dist;
            }
        }
        if (r1 <= 0) {
            ++res.skipped_duplicates;  // duplicate point, ratio undefined
            continue;
        }
        mu.push_back(std::sqrt(r2 / r1));
    }
    if (mu.empty()) throw Error("twonn: all points are duplicates");
    std::sort(mu.begin(), mu.end());
    std::size_t keep = mu.size() - static_cast<std::size_t>(discard_fraction * mu.size());
    if (keep == 0) throw Error("twonn: discard fraction leaves no points");
    // ln mu is exponential with rate d; the tail discard is type-II censoring,
    // so the MLE carries the censored mass at the largest kept ratio
    double log_sum = 0;
    for (std::size_t i = 0; i < keep; ++i) log_sum += std::log(mu[i]);
    log_sum += static_cast<double>(mu.size() - keep) * std::log(mu[keep - 1]);
    if (log_sum <= 0) throw Error("twonn: degenerate neighbor ratios");
    res.id_estimate = static_cast<double>(keep) / log_sum;
    return res;
}

}  // namespace gradmix
