#include "uranet/optimizer.hpp"

#include <cmath>

namespace uranet {

AdamW::AdamW(std::vector<ad::Var> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    check(cfg_.lr > 0 && cfg_.eps > 0, "AdamW: nonpositive lr or eps");
    check(cfg_.beta1 >= 0 && cfg_.beta1 < 1 && cfg_.beta2 >= 0 && cfg_.beta2 < 1,
          "AdamW: betas outside [0,1)");
    for (const auto& p : params_) {
        check(p.requires_grad(), "AdamW: parameter without requires_grad");
        m_.push_back(Mat::Zero(p.rows(), p.cols()));
        v_.push_back(Mat::Zero(p.rows(), p.cols()));
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto node = params_[i].node();
        Mat g = node->grad.size() == 0 ? Mat::Zero(node->value.rows(), node->value.cols())
                                       : node->grad;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        Mat m_hat = m_[i] / bc1;
        Mat v_hat = v_[i] / bc2;
        node->value -=
            cfg_.lr * (m_hat.array() / (v_hat.array().sqrt() + cfg_.eps) +
                       cfg_.weight_decay * node->value.array())
                          .matrix();
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.node()->grad.resize(0, 0);
}

void AdamW::restore_state(int64_t t, std::vector<Mat> m, std::vector<Mat> v) {
    check(m.size() == params_.size() && v.size() == params_.size(),
          "AdamW: state size mismatch");
    for (size_t i = 0; i < params_.size(); ++i)
        check(m[i].rows() == params_[i].rows() && m[i].cols() == params_[i].cols() &&
                  v[i].rows() == params_[i].rows() && v[i].cols() == params_[i].cols(),
              "AdamW: state shape mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace uranet
