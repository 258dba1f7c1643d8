#include "uranet/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace uranet {

bool ScoredSet::both_classes_present() const {
    bool pos = false, neg = false;
    for (int l : labels) (l == 1 ? pos : neg) = true;
    return pos && neg;
}

double auroc(const ScoredSet& set) {
    set.validate();
    if (!set.both_classes_present())
        throw std::invalid_argument("auroc: undefined for single-class input");
    const size_t n = set.scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return set.scores[a] < set.scores[b]; });

    // average ranks across tie groups, 1-based
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && set.scores[order[j + 1]] == set.scores[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    size_t pos = 0;
    for (size_t k = 0; k < n; ++k)
        if (set.labels[k] == 1) {
            pos_rank_sum += rank[k];
            ++pos;
        }
    const size_t neg = n - pos;
    return (pos_rank_sum - 0.5 * static_cast<double>(pos) * (pos + 1)) /
           (static_cast<double>(pos) * static_cast<double>(neg));
}

namespace {

double f1_from_counts(size_t tp, size_t fp, size_t fn) {
    const size_t den = 2 * tp + fp + fn;
    return den == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(den);
}

}  // namespace

ThresholdF1 optimal_f1_threshold(const ScoredSet& set) {
    set.validate();
    if (!set.both_classes_present())
        throw std::invalid_argument("optimal_f1_threshold: undefined for single-class input");
    const size_t n = set.scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return set.scores[a] > set.scores[b]; });

    size_t total_pos = 0;
    for (int l : set.labels) total_pos += static_cast<size_t>(l);

    // sweep thresholds from high to low; at threshold = s, everything with
    // score >= s is predicted anomalous
    ThresholdF1 best{0.0, -1.0};
    size_t tp = 0, fp = 0, k = 0;
    while (k < n) {
        const double t = set.scores[order[k]];
        while (k < n && set.scores[order[k]] == t) {
            (set.labels[order[k]] == 1 ? tp : fp) += 1;
            ++k;
        }
        const double f1 = f1_from_counts(tp, fp, total_pos - tp);
        // >= keeps the lowest threshold among equal-F1 candidates
        if (f1 >= best.f1) best = {t, f1};
    }
    return best;
}

AccF1 acc_f1(const ScoredSet& set, double threshold) {
    set.validate();
    size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < set.scores.size(); ++i) {
        const bool pred = set.scores[i] >= threshold;
        const bool truth = set.labels[i] == 1;
        if (pred && truth)
            ++tp;
        else if (pred && !truth)
            ++fp;
        else if (!pred && truth)
            ++fn;
        else
            ++tn;
    }
    AccF1 out;
    out.acc = static_cast<double>(tp + tn) / static_cast<double>(set.scores.size());
    out.f1 = f1_from_counts(tp, fp, fn);
    return out;
}

}  // namespace uranet
