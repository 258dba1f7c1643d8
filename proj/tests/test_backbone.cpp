#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "uranet/backbone.hpp"

using namespace uranet;
using testsup::random_mat;

namespace {

FeatureMap random_features(int h, int w, int c, uint64_t seed) {
    FeatureMap f = FeatureMap::zeros(h, w, c);
    f.data = random_mat(h * w, c, seed);
    return f;
}

Image gradient_image(int size) {
    Image img = Image::zeros(size, size);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < size; ++r)
            for (int col = 0; col < size; ++col)
                img.ch[c](r, col) = (r + col + c) / (2.0 * size + 2.0);
    return img;
}

}  // namespace

TEST_CASE("resizing to the same shape is exact") {
    FeatureMap f = random_features(5, 7, 3, 1);
    FeatureMap out = bilinear_resize(f, 5, 7);
    CHECK((out.data - f.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("resizing a constant map keeps the constant") {
    FeatureMap f = FeatureMap::zeros(4, 4, 2);
    f.data.setConstant(0.37);
    FeatureMap up = bilinear_resize(f, 11, 9);
    CHECK((up.data.array() - 0.37).abs().maxCoeff() < 1e-12);
    FeatureMap down = bilinear_resize(f, 2, 3);
    CHECK((down.data.array() - 0.37).abs().maxCoeff() < 1e-12);
}

TEST_CASE("exact doubling interpolates midpoints linearly") {
    // 1D profile along x, one channel: interior target cells sit exactly
    // halfway between source cells under the half-pixel mapping
    FeatureMap f = FeatureMap::zeros(1, 4, 1);
    f.data.col(0) << 0.0, 1.0, 4.0, 9.0;
    FeatureMap up = bilinear_resize(f, 1, 8);
    // x_src = (x_dst + 0.5)/2 - 0.5: dst 1 -> 0.25, dst 2 -> 0.75
    CHECK(up.at(0, 1, 0) == doctest::Approx(0.25));
    CHECK(up.at(0, 2, 0) == doctest::Approx(0.75));
    CHECK(up.at(0, 3, 0) == doctest::Approx(1.75));
    CHECK(up.at(0, 4, 0) == doctest::Approx(3.25));
    // edges clamp to the border cells
    CHECK(up.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(up.at(0, 7, 0) == doctest::Approx(9.0));
}

TEST_CASE("bilinear weights match the direct formula at arbitrary scale") {
    FeatureMap f = random_features(3, 5, 2, 2);
    const int oh = 7, ow = 4;
    FeatureMap out = bilinear_resize(f, oh, ow);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c)
            for (int ch = 0; ch < 2; ++ch) {
                const double sy = std::max(0.0, (r + 0.5) * 3.0 / oh - 0.5);
                const double sx = std::max(0.0, (c + 0.5) * 5.0 / ow - 0.5);
                const int y0 = std::min(static_cast<int>(sy), 2);
                const int x0 = std::min(static_cast<int>(sx), 4);
                const int y1 = std::min(y0 + 1, 2), x1 = std::min(x0 + 1, 4);
                const double fy = sy - y0, fx = sx - x0;
                const double ref =
                    (1 - fy) * ((1 - fx) * f.at(y0, x0, ch) + fx * f.at(y0, x1, ch)) +
                    fy * ((1 - fx) * f.at(y1, x0, ch) + fx * f.at(y1, x1, ch));
                CHECK(out.at(r, c, ch) == doctest::Approx(ref).epsilon(1e-12));
            }
}

TEST_CASE("convolution matches a direct loop with zero padding") {
    FeatureMap in = random_features(4, 4, 2, 3);
    const int kh = 3, kw = 3, cout = 2;
    Mat w = random_mat(kh * kw * 2, cout, 4);
    Vec b(2);
    b << 0.1, -0.2;
    FeatureMap out = conv2d(in, w, b, kh, kw, 1, 1);
    REQUIRE(out.h == 4);
    REQUIRE(out.w == 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            for (int oc = 0; oc < cout; ++oc) {
                double ref = b(oc);
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j) {
                        const int y = r + i - 1, x = c + j - 1;
                        if (y < 0 || y >= 4 || x < 0 || x >= 4) continue;
                        for (int ic = 0; ic < 2; ++ic)
                            ref += in.at(y, x, ic) * w((i * kw + j) * 2 + ic, oc);
                    }
                CHECK(out.at(r, c, oc) == doctest::Approx(ref).epsilon(1e-10));
            }
}

TEST_CASE("strided convolution halves the grid") {
    FeatureMap in = random_features(8, 8, 1, 5);
    Mat w = random_mat(9, 3, 6);
    FeatureMap out = conv2d(in, w, Vec::Zero(3), 3, 3, 2, 1);
    CHECK(out.h == 4);
    CHECK(out.w == 4);
    CHECK(out.c == 3);
}

TEST_CASE("input normalization applies per-channel statistics") {
    Image img = Image::zeros(2, 2);
    for (auto& plane : img.ch) plane.setConstant(0.5);
    img.ch[1].setConstant(0.8);
    FeatureMap f = image_to_featuremap(img, {0.5, 0.5, 0.5}, {0.25, 0.5, 1.0});
    CHECK(f.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(f.at(0, 0, 1) == doctest::Approx(0.6));
    CHECK(f.at(0, 0, 2) == doctest::Approx(0.0));
    CHECK(f.c == 3);
}

TEST_CASE("level fusion concatenates channels in request order") {
    FeatureMap a = random_features(2, 2, 2, 7);
    FeatureMap b = FeatureMap::zeros(1, 1, 1);
    b.data.setConstant(5.0);
    FeatureMap fused = fuse_levels({a, b}, {2, 2});
    REQUIRE(fused.c == 3);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            CHECK(fused.at(r, c, 0) == a.at(r, c, 0));
            CHECK(fused.at(r, c, 1) == a.at(r, c, 1));
            CHECK(fused.at(r, c, 2) == doctest::Approx(5.0));  // upsampled constant
        }
}

TEST_CASE("toy backbone is deterministic and stage channels are 8, 16, 32") {
    BackboneSpec spec;
    spec.name = "toy";
    spec.seed = 7;
    auto bb = make_backbone(spec);
    REQUIRE(bb->num_levels() == 3);
    CHECK(bb->level_channels(0) == 8);
    CHECK(bb->level_channels(1) == 16);
    CHECK(bb->level_channels(2) == 32);

    Image img = gradient_image(32);
    FeatureMap f1 = extract_fused(img, *bb, spec, {8, 8});
    FeatureMap f2 = extract_fused(img, *make_backbone(spec), spec, {8, 8});
    CHECK(f1.c == 56);
    CHECK((f1.data - f2.data).cwiseAbs().maxCoeff() == 0.0);

    BackboneSpec other = spec;
    other.seed = 8;
    FeatureMap f3 = extract_fused(img, *make_backbone(other), other, {8, 8});
    CHECK((f1.data - f3.data).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("toy backbone halves the grid at every stage") {
    BackboneSpec spec;
    spec.name = "toy";
    auto bb = make_backbone(spec);
    std::vector<FeatureMap> levels = extract_multilevel(gradient_image(32), *bb, spec);
    REQUIRE(levels.size() == 3);
    CHECK(levels[0].h == 16);
    CHECK(levels[1].h == 8);
    CHECK(levels[2].h == 4);
}

TEST_CASE("wide residual backbone exposes 1792 fused channels") {
    BackboneSpec spec;
    spec.name = "wide_resnet50_2";
    spec.levels = {0, 1, 2};
    auto bb = make_backbone(spec);
    REQUIRE(bb->num_levels() == 4);
    int total = 0;
    for (int l : spec.levels) total += bb->level_channels(l);
    CHECK(total == 1792);
    CHECK(bb->level_channels(3) == 2048);
}

TEST_CASE("wide residual forward pass produces the documented grids") {
    BackboneSpec spec;
    spec.name = "wide_resnet50_2";
    spec.levels = {0, 1, 2};
    auto bb = make_backbone(spec);
    std::vector<FeatureMap> levels = extract_multilevel(gradient_image(32), *bb, spec);
    REQUIRE(levels.size() == 3);
    CHECK(levels[0].h == 8);   // stem /2, pool /2
    CHECK(levels[1].h == 4);
    CHECK(levels[2].h == 2);
    CHECK(levels[0].c == 256);
    CHECK(levels[1].c == 512);
    CHECK(levels[2].c == 1024);
    for (const auto& f : levels) CHECK(f.data.allFinite());
}

TEST_CASE("unknown backbone names are rejected") {
    BackboneSpec spec;
    spec.name = "resnet18";
    CHECK_THROWS_AS(make_backbone(spec), std::invalid_argument);
}

TEST_CASE("image resize matches feature-map resize per channel") {
    Image img = gradient_image(8);
    Image out = resize_image(img, 12, 6);
    CHECK(out.height() == 12);
    CHECK(out.width() == 6);
    // identity case short-circuits
    Image same = resize_image(img, 8, 8);
    for (int c = 0; c < 3; ++c)
        CHECK((same.ch[c] - img.ch[c]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fused extraction output is laid out row-major by cell") {
    BackboneSpec spec;
    spec.name = "toy";
    Image img = gradient_image(16);
    auto bb = make_backbone(spec);
    FeatureMap f = extract_fused(img, *bb, spec, {4, 4});
    REQUIRE(f.h == 4);
    REQUIRE(f.w == 4);
    REQUIRE(f.c == 56);
    // at(r, c, ch) must address row r*w + c
    CHECK(f.at(2, 3, 0) == f.data(2 * 4 + 3, 0));
}
