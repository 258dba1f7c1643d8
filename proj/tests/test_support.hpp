#pragma once

// Shared helpers for the test suite: finite-difference gradient checking and
// deterministic random matrices.

#include <functional>
#include <random>
#include <vector>

#include <doctest.h>

#include "uranet/autograd.hpp"

namespace testsup {

using uranet::Mat;
using uranet::ad::Var;
using uranet::ad::backward;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline Mat random_mat(int rows, int cols, uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

// Builds the scalar loss from fresh parameter Vars holding `values`.
using LossBuilder = std::function<Var(const std::vector<Var>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Mat>& values) {
    std::vector<Var> params;
    params.reserve(values.size());
    for (const auto& v : values) params.push_back(Var::param(v));
    return build(params).item();
}

// Central-difference check of every parameter entry against backward().
inline void check_gradients(const LossBuilder& build, std::vector<Mat> values,
                            double tol = 1e-4, double h = 1e-5) {
    std::vector<Var> params;
    params.reserve(values.size());
    for (const auto& v : values) params.push_back(Var::param(v));
    Var loss = build(params);
    backward(loss);

    for (size_t k = 0; k < values.size(); ++k) {
        Mat analytic = params[k].grad();
        if (analytic.size() == 0) analytic = Mat::Zero(values[k].rows(), values[k].cols());
        for (int i = 0; i < values[k].rows(); ++i)
            for (int j = 0; j < values[k].cols(); ++j) {
                const double keep = values[k](i, j);
                values[k](i, j) = keep + h;
                const double up = eval_loss(build, values);
                values[k](i, j) = keep - h;
                const double dn = eval_loss(build, values);
                values[k](i, j) = keep;
                const double fd = (up - dn) / (2.0 * h);
                INFO("param " << k << " entry (" << i << "," << j << ") analytic "
                              << analytic(i, j) << " fd " << fd);
                CHECK(rel_err(analytic(i, j), fd) < tol);
            }
    }
}

}  // namespace testsup
