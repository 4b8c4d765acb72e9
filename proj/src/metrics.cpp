#include "gradmix/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace gradmix {

namespace {

void check_two_classes(const std::vector<ScoredSample>& samples, const char* op) {
    int pos = 0, neg = 0;
    for (const auto& s : samples) {
        if (!std::isfinite(s.score)) throw Error(std::string(op) + ": non-finite score");
        (s.is_positive ? pos : neg)++;
    }
    if (pos == 0 || neg == 0)
        throw Error(std::string(op) + ": needs at least one positive and one negative sample");
}

}  // namespace

double auroc(const std::vector<ScoredSample>& samples) {
    check_two_classes(samples, "auroc");
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return samples[a].score < samples[b].score; });

    double rank_sum_pos = 0;
    std::size_t npos = 0, nneg = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && samples[order[j]].score == samples[order[i]].score) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
        for (std::size_t t = i; t < j; ++t)
            if (samples[order[t]].is_positive) rank_sum_pos += avg_rank;
        i = j;
    }
    for (const auto& s : samples) (s.is_positive ? npos : nneg)++;
    double u = rank_sum_pos - static_cast<double>(npos) * (npos + 1) / 2.0;
    return u / (static_cast<double>(npos) * nneg);
}

double tnr_at_tpr(const std::vector<ScoredSample>& samples, double level) {
    check_two_classes(samples, "tnr_at_tpr");
    std::vector<double> scores;
    for (const auto& s : samples) scores.push_back(s.score);
    std::sort(scores.begin(), scores.end(), std::greater<>());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

    std::size_t npos = 0, nneg = 0;
    for (const auto& s : samples) (s.is_positive ? npos : nneg)++;

    // decision rule: score >= threshold -> accepted as positive.
    // thresholds descend, so TPR is nondecreasing; stop at the first
    // (largest) threshold reaching the level.
    for (double t : scores) {
        std::size_t tp = 0, tn = 0;
        for (const auto& s : samples) {
            if (s.is_positive && s.score >= t) ++tp;
            if (!s.is_positive && s.score < t) ++tn;
        }
        double tpr = static_cast<double>(tp) / npos;
        if (tpr >= level) return static_cast<double>(tn) / nneg;
    }
    return 0.0;  // unreachable: the smallest score yields TPR = 1
}

double dtacc(const std::vector<ScoredSample>& samples) {
    check_two_classes(samples, "dtacc");
    std::vector<double> scores;
    for (const auto& s : samples) scores.push_back(s.score);
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

    std::vector<double> thresholds;
    thresholds.push_back(scores.front() - 1.0);  // accept everything
    for (std::size_t i = 0; i + 1 < scores.size(); ++i)
        thresholds.push_back(0.5 * (scores[i] + scores[i + 1]));
    thresholds.push_back(scores.back() + 1.0);   // reject everything

    double best = 0;
    for (double t : thresholds) {
        std::size_t correct = 0;
        for (const auto& s : samples)
            if ((s.score >= t) == s.is_positive) ++correct;
        best = std::max(best, static_cast<double>(correct) / samples.size());
    }
    return best;
}

double aupr(const std::vector<ScoredSample>& samples, PositiveSide side) {
    check_two_classes(samples, "aupr");
    std::vector<ScoredSample> work = samples;
    if (side == PositiveSide::Out)
        for (auto& s : work) {
            s.score = -s.score;
            s.is_positive = !s.is_positive;
        }
    std::sort(work.begin(), work.end(),
              [](const ScoredSample& a, const ScoredSample& b) { return a.score > b.score; });

    std::size_t total_pos = 0;
    for (const auto& s : work)
        if (s.is_positive) ++total_pos;

    // step-wise interpolation over descending-score tied groups
    double area = 0, prev_recall = 0;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < work.size()) {
        std::size_t j = i;
        while (j < work.size() && work[j].score == work[i].score) ++j;
        for (std::size_t t = i; t < j; ++t) (work[t].is_positive ? tp : fp)++;
        double recall = static_cast<double>(tp) / total_pos;
        double precision = static_cast<double>(tp) / (tp + fp);
        area += precision * (recall - prev_recall);
        prev_recall = recall;
        i = j;
    }
    return area;
}

double openness(int known_classes, int unknown_classes) {
    if (known_classes < 1) throw Error("openness: known class count must be >= 1");
    if (unknown_classes < 0) throw Error("openness: unknown class count must be >= 0");
    double k = known_classes, u = unknown_classes;
    return 100.0 * (1.0 - std::sqrt(k / (k + u)));
}

CorruptionAggregates corruption_aggregates(const CorruptionGrid& grid) {
    const std::size_t T = grid.accuracy.size();
    if (T == 0) throw Error("corruption: empty grid");
    std::string missing;
    for (std::size_t c = 0; c < T; ++c) {
        if (grid.accuracy[c].size() != 5) {
            missing += " type" + std::to_string(c) + " has " +
                       std::to_string(grid.accuracy[c].size()) + "/5 severities;";
            continue;
        }
        for (std::size_t s = 0; s < 5; ++s) {
            double a = grid.accuracy[c][s];
            if (a < 0 || a > 1)
                throw Error("corruption: accuracy out of [0,1] at type " + std::to_string(c) +
                            " severity " + std::to_string(s + 1));
        }
    }
    if (!missing.empty()) throw Error("corruption: incomplete grid:" + missing);
    if (grid.clean_accuracy < 0 || grid.clean_accuracy > 1)
        throw Error("corruption: clean accuracy out of [0,1]");

    CorruptionAggregates agg;
    agg.drop.assign(T, std::vector<double>(5, 0.0));
    agg.mean_drop_per_type.assign(T, 0.0);
    agg.mean_drop_per_severity.assign(5, 0.0);
    for (std::size_t c = 0; c < T; ++c)
        for (std::size_t s = 0; s < 5; ++s) {
            double d = grid.clean_accuracy - grid.accuracy[c][s];
            agg.drop[c][s] = d;
            agg.mean_drop_per_type[c] += d / 5.0;
            agg.mean_drop_per_severity[s] += d / static_cast<double>(T);
            agg.overall_mean += d / (5.0 * static_cast<double>(T));
        }
    return agg;
}

}  // namespace gradmix
