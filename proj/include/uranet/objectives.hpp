#pragma once

// Reconstruction objectives over feature matrices ((H_F*W_F) x C, one channel
// vector per row) and the test-time anomaly map / image score.

#include <utility>

#include "uranet/autograd.hpp"
#include "uranet/common.hpp"

namespace uranet {

// Mean over positions of the squared L2 distance between channel vectors.
ad::Var local_mse_loss(const ad::Var& f_target, const ad::Var& f_hat);

// Mean over positions of 1 - cos(target row, hat row); in [0, 2].
ad::Var local_cos_loss(const ad::Var& f_target, const ad::Var& f_hat);

// 1 - cosine of the flattened maps; in [0, 2].
ad::Var global_cos_loss(const ad::Var& f_target, const ad::Var& f_hat);

// Sum of the three terms above.
ad::Var reconstruction_loss(const ad::Var& f_target, const ad::Var& f_hat);

ad::Var joint_loss(const ad::Var& l_rec, const ad::Var& l_aux);

struct LossBreakdown {
    double l_local_mse = 0, l_local_cos = 0, l_global = 0, l_rec = 0;
    double l_dis = 0, l_kl = 0, l_aux = 0, l_final = 0;
};

struct AnomalyMap {
    Mat pixel_scores;          // out_h x out_w, nonnegative
    double image_score = 0.0;  // population std over all pixels
};

// Per-position squared-distance and cosine-disparity maps, multiplied and
// bilinearly upscaled to out_hw.
AnomalyMap anomaly_map(const FeatureMap& f_in, const FeatureMap& f_hat,
                       std::pair<int, int> out_hw);

}  // namespace uranet
