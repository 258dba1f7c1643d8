#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "uranet/backbone.hpp"
#include "uranet/objectives.hpp"

using namespace uranet;
using testsup::random_mat;

namespace {

FeatureMap random_features(int h, int w, int c, uint64_t seed) {
    FeatureMap f = FeatureMap::zeros(h, w, c);
    f.data = random_mat(h * w, c, seed);
    return f;
}

ad::Var as_var(const FeatureMap& f) { return ad::Var::constant(f.data); }

}  // namespace

TEST_CASE("squared-distance loss on a single two-channel position") {
    FeatureMap a = FeatureMap::zeros(1, 1, 2);
    FeatureMap b = FeatureMap::zeros(1, 1, 2);
    b.data << 3.0, 4.0;
    CHECK(local_mse_loss(as_var(a), as_var(b)).item() == doctest::Approx(25.0));
}

TEST_CASE("squared-distance loss matches a triple-loop reference") {
    FeatureMap a = random_features(3, 4, 5, 1);
    FeatureMap b = random_features(3, 4, 5, 2);
    double ref = 0.0;
    for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 4; ++col)
            for (int ch = 0; ch < 5; ++ch) {
                const double d = a.at(r, col, ch) - b.at(r, col, ch);
                ref += d * d;
            }
    ref /= 12.0;  // mean over positions only
    CHECK(local_mse_loss(as_var(a), as_var(b)).item() == doctest::Approx(ref));
}

TEST_CASE("cosine disparity hits its extremes") {
    FeatureMap a = FeatureMap::zeros(1, 1, 3);
    a.data << 1.0, 2.0, 3.0;
    FeatureMap flipped = a;
    flipped.data = -a.data;
    CHECK(local_cos_loss(as_var(a), as_var(flipped)).item() == doctest::Approx(2.0));
    CHECK(local_cos_loss(as_var(a), as_var(a)).item() == doctest::Approx(0.0));

    FeatureMap ortho = FeatureMap::zeros(1, 1, 3);
    ortho.data << -2.0, 1.0, 0.0;
    CHECK(local_cos_loss(as_var(a), as_var(ortho)).item() == doctest::Approx(1.0));
}

TEST_CASE("cosine disparity matches a per-position loop") {
    FeatureMap a = random_features(4, 4, 6, 3);
    FeatureMap b = random_features(4, 4, 6, 4);
    double ref = 0.0;
    for (Eigen::Index p = 0; p < a.data.rows(); ++p) {
        const double den =
            std::max(a.data.row(p).norm() * b.data.row(p).norm(), 1e-8);
        ref += 1.0 - a.data.row(p).dot(b.data.row(p)) / den;
    }
    ref /= static_cast<double>(a.data.rows());
    CHECK(local_cos_loss(as_var(a), as_var(b)).item() == doctest::Approx(ref));
}

TEST_CASE("global and local cosine agree on a single position") {
    FeatureMap a = random_features(1, 1, 8, 5);
    FeatureMap b = random_features(1, 1, 8, 6);
    CHECK(global_cos_loss(as_var(a), as_var(b)).item() ==
          doctest::Approx(local_cos_loss(as_var(a), as_var(b)).item()));
}

TEST_CASE("global cosine flattens the whole map into one vector") {
    FeatureMap a = random_features(3, 2, 4, 7);
    FeatureMap b = random_features(3, 2, 4, 8);
    Eigen::Map<const Eigen::VectorXd> va(a.data.data(), a.data.size());
    Eigen::Map<const Eigen::VectorXd> vb(b.data.data(), b.data.size());
    const double ref = 1.0 - va.dot(vb) / std::max(va.norm() * vb.norm(), 1e-8);
    CHECK(global_cos_loss(as_var(a), as_var(b)).item() == doctest::Approx(ref));
}

TEST_CASE("reconstruction loss is the sum of its three parts") {
    FeatureMap a = random_features(2, 3, 4, 9);
    FeatureMap b = random_features(2, 3, 4, 10);
    const double parts = local_mse_loss(as_var(a), as_var(b)).item() +
                         local_cos_loss(as_var(a), as_var(b)).item() +
                         global_cos_loss(as_var(a), as_var(b)).item();
    CHECK(reconstruction_loss(as_var(a), as_var(b)).item() == doctest::Approx(parts));
    CHECK(reconstruction_loss(as_var(a), as_var(a)).item() == doctest::Approx(0.0));
}

TEST_CASE("reconstruction loss gradients pass finite differences") {
    Mat target = random_mat(2, 4, 11);
    testsup::check_gradients(
        [&](const std::vector<ad::Var>& p) {
            return reconstruction_loss(ad::Var::constant(target), p[0]);
        },
        {random_mat(2, 4, 12)}, 1e-4, 1e-6);
}

TEST_CASE("anomaly map multiplies distance and disparity per position") {
    FeatureMap a = random_features(3, 3, 4, 13);
    FeatureMap b = random_features(3, 3, 4, 14);
    AnomalyMap m = anomaly_map(a, b, {3, 3});  // same size: no resampling
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            const Eigen::Index p = r * 3 + c;
            const double mse = (a.data.row(p) - b.data.row(p)).squaredNorm();
            const double den =
                std::max(a.data.row(p).norm() * b.data.row(p).norm(), 1e-8);
            const double cos = 1.0 - a.data.row(p).dot(b.data.row(p)) / den;
            CHECK(m.pixel_scores(r, c) ==
                  doctest::Approx(mse * std::clamp(cos, 0.0, 2.0)).epsilon(1e-10));
        }
}

TEST_CASE("anomaly map upsamples and stays nonnegative") {
    FeatureMap a = random_features(4, 4, 3, 15);
    FeatureMap b = random_features(4, 4, 3, 16);
    AnomalyMap m = anomaly_map(a, b, {16, 16});
    CHECK(m.pixel_scores.rows() == 16);
    CHECK(m.pixel_scores.cols() == 16);
    CHECK(m.pixel_scores.minCoeff() >= 0.0);
    CHECK(m.image_score >= 0.0);
}

TEST_CASE("perfect reconstruction gives a flat zero map and zero image score") {
    FeatureMap a = random_features(4, 4, 3, 17);
    AnomalyMap m = anomaly_map(a, a, {8, 8});
    CHECK(m.pixel_scores.maxCoeff() == doctest::Approx(0.0));
    CHECK(m.image_score == doctest::Approx(0.0));
}

TEST_CASE("a localized defect raises the map only near the defect") {
    FeatureMap a = random_features(8, 8, 4, 18);
    FeatureMap b = a;
    // corrupt one cell: flip and rescale its feature vector
    const Eigen::Index p = 2 * 8 + 5;
    b.data.row(p) = -3.0 * a.data.row(p);
    AnomalyMap m = anomaly_map(a, b, {8, 8});
    double at_defect = m.pixel_scores(2, 5);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            if (r != 2 || c != 5) CHECK(m.pixel_scores(r, c) < at_defect);
    // the image score reacts to the defect
    CHECK(m.image_score > anomaly_map(a, a, {8, 8}).image_score);
}

TEST_CASE("image score grows with defect strength") {
    FeatureMap a = random_features(6, 6, 4, 19);
    const Eigen::Index p = 21;

    // a pure rescale keeps the direction, so the product map must ignore it
    FeatureMap scaled = a;
    scaled.data.row(p) *= 2.0;
    CHECK(anomaly_map(a, scaled, {6, 6}).image_score == doctest::Approx(0.0));

    // at maximal angular disparity the score tracks the distance factor
    FeatureMap mild = a, strong = a;
    mild.data.row(p) = -a.data.row(p);
    strong.data.row(p) = -8.0 * a.data.row(p);
    double s_mild = anomaly_map(a, mild, {6, 6}).image_score;
    double s_strong = anomaly_map(a, strong, {6, 6}).image_score;
    CHECK(s_mild > 0.0);
    CHECK(s_strong > s_mild);
}

TEST_CASE("joint loss adds reconstruction and auxiliary terms") {
    ad::Var l_rec = ad::Var::scalar(1.25);
    ad::Var l_aux = ad::Var::scalar(0.5);
    CHECK(joint_loss(l_rec, l_aux).item() == doctest::Approx(1.75));
}
