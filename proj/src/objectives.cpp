#include "uranet/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "uranet/backbone.hpp"

namespace uranet {

namespace {

// clamped below so zero-norm rows cannot divide by zero or break sqrt grads
constexpr double kNormSqFloor = 1e-16;
constexpr double kDenFloor = 1e-8;

ad::Var row_norms(const ad::Var& x) {
    return ad::sqrt_(ad::clamp_min(ad::row_sum(ad::square(x)), kNormSqFloor));
}

}  // namespace

ad::Var local_mse_loss(const ad::Var& f_target, const ad::Var& f_hat) {
    ad::detail::same_shape(f_target, f_hat, "local_mse_loss");
    return ad::mean(ad::row_sum(ad::square(ad::sub(f_hat, f_target))));
}

ad::Var local_cos_loss(const ad::Var& f_target, const ad::Var& f_hat) {
    ad::detail::same_shape(f_target, f_hat, "local_cos_loss");
    ad::Var dots = ad::row_sum(ad::mul(f_target, f_hat));
    ad::Var den = ad::clamp_min(ad::mul(row_norms(f_target), row_norms(f_hat)), kDenFloor);
    return ad::mean(ad::add_scalar(ad::neg(ad::div(dots, den)), 1.0));
}

ad::Var global_cos_loss(const ad::Var& f_target, const ad::Var& f_hat) {
    ad::detail::same_shape(f_target, f_hat, "global_cos_loss");
    ad::Var dot = ad::sum(ad::mul(f_target, f_hat));
    ad::Var nt = ad::sqrt_(ad::clamp_min(ad::sum(ad::square(f_target)), kNormSqFloor));
    ad::Var nh = ad::sqrt_(ad::clamp_min(ad::sum(ad::square(f_hat)), kNormSqFloor));
    ad::Var den = ad::clamp_min(ad::mul(nt, nh), kDenFloor);
    return ad::add_scalar(ad::neg(ad::div(dot, den)), 1.0);
}

ad::Var reconstruction_loss(const ad::Var& f_target, const ad::Var& f_hat) {
    return ad::add(ad::add(local_mse_loss(f_target, f_hat), local_cos_loss(f_target, f_hat)),
                   global_cos_loss(f_target, f_hat));
}

ad::Var joint_loss(const ad::Var& l_rec, const ad::Var& l_aux) { return ad::add(l_rec, l_aux); }

AnomalyMap anomaly_map(const FeatureMap& f_in, const FeatureMap& f_hat,
                       std::pair<int, int> out_hw) {
    f_in.validate();
    f_hat.validate();
    check(f_in.h == f_hat.h && f_in.w == f_hat.w && f_in.c == f_hat.c,
          "anomaly_map: shape mismatch");
    check(out_hw.first > 0 && out_hw.second > 0, "anomaly_map: nonpositive output size");

    FeatureMap score = FeatureMap::zeros(f_in.h, f_in.w, 1);
    for (Eigen::Index p = 0; p < f_in.data.rows(); ++p) {
        const auto a = f_in.data.row(p);
        const auto b = f_hat.data.row(p);
        const double as_mse = (a - b).squaredNorm();
        const double den = std::max(a.norm() * b.norm(), kDenFloor);
        // fp drift can push cos a hair past +-1; keep the disparity in [0,2]
        const double as_cos = std::clamp(1.0 - a.dot(b) / den, 0.0, 2.0);
        score.data(p, 0) = as_mse * as_cos;
    }
    FeatureMap up = bilinear_resize(score, out_hw.first, out_hw.second);

    AnomalyMap out;
    out.pixel_scores.resize(out_hw.first, out_hw.second);
    for (int r = 0; r < out_hw.first; ++r)
        for (int c = 0; c < out_hw.second; ++c)
            out.pixel_scores(r, c) = up.at(r, c, 0);
    const double mean = out.pixel_scores.mean();
    out.image_score = std::sqrt((out.pixel_scores.array() - mean).square().mean());
    return out;
}

}  // namespace uranet
