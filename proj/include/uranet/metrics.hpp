#pragma once

// Detection metrics over scored sample sets: AUROC (Mann-Whitney with tie
// credit), optimal-F1 threshold selection, and accuracy/F1 at a threshold.

#include <string>
#include <vector>

#include "uranet/common.hpp"

namespace uranet {

enum class Granularity { Image, Pixel };

struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;  // 1 = anomalous
    Granularity granularity = Granularity::Image;

    void validate() const {
        check(scores.size() == labels.size(), "ScoredSet: length mismatch");
        check(!scores.empty(), "ScoredSet: empty");
        for (int l : labels) check(l == 0 || l == 1, "ScoredSet: labels must be 0 or 1");
    }
    bool both_classes_present() const;
};

// P(score_pos > score_neg) + 0.5 * P(tie), computed via average ranks.
// Throws on single-class input.
double auroc(const ScoredSet& set);

struct ThresholdF1 {
    double threshold = 0.0;
    double f1 = 0.0;
};

// Scans every distinct score as a candidate threshold (score >= threshold
// predicts anomalous); ties in F1 resolve to the lowest threshold.
ThresholdF1 optimal_f1_threshold(const ScoredSet& set);

struct AccF1 {
    double acc = 0.0;
    double f1 = 0.0;
};

AccF1 acc_f1(const ScoredSet& set, double threshold);

}  // namespace uranet
