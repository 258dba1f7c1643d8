#pragma once

// Decoupled-weight-decay Adam over a fixed parameter list.

#include <cstdint>
#include <vector>

#include "uranet/autograd.hpp"

namespace uranet {

struct AdamWConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    AdamW(std::vector<ad::Var> params, AdamWConfig cfg);

    // Applies one update from the gradients currently on the parameters.
    // Parameters that received no gradient this step are still decayed.
    void step();
    void zero_grad();

    int64_t steps_taken() const { return t_; }
    const std::vector<Mat>& first_moments() const { return m_; }
    const std::vector<Mat>& second_moments() const { return v_; }
    void restore_state(int64_t t, std::vector<Mat> m, std::vector<Mat> v);

private:
    std::vector<ad::Var> params_;
    AdamWConfig cfg_;
    std::vector<Mat> m_, v_;
    int64_t t_ = 0;
};

}  // namespace uranet
