#pragma once

// Multi-level feature extraction: frozen backbones turn an image into a set
// of per-stage activation maps which are resized and concatenated along
// channels into the reconstruction target.

#include "uranet/common.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace uranet {

struct BackboneSpec {
    std::string name = "toy";
    std::vector<int> levels = {0, 1, 2};
    bool frozen = true;  // backbones are never trained
    uint64_t seed = 7;   // weight init for the deterministic toy backbone / random-init fallback
    std::string weights_path;  // pretrained weight file; empty = seeded random init
    std::array<double, 3> norm_mean = {0.0, 0.0, 0.0};
    std::array<double, 3> norm_std = {1.0, 1.0, 1.0};

    void validate() const {
        check(!levels.empty(), "BackboneSpec: levels must be nonempty");
        for (double s : norm_std) check(s > 0.0, "BackboneSpec: norm_std must be positive");
    }
};

class Backbone {
public:
    virtual ~Backbone() = default;
    virtual int num_levels() const = 0;
    virtual int level_channels(int level) const = 0;
    // One FeatureMap per requested level, in request order.
    virtual std::vector<FeatureMap> extract(const FeatureMap& input,
                                            const std::vector<int>& levels) const = 0;
};

// Registry keyed by spec.name ("toy", "wide_resnet50_2"). Unknown names throw.
std::shared_ptr<const Backbone> make_backbone(const BackboneSpec& spec);

std::vector<FeatureMap> extract_multilevel(const Image& image, const BackboneSpec& spec);
std::vector<FeatureMap> extract_multilevel(const Image& image, const Backbone& backbone,
                                           const BackboneSpec& spec);

FeatureMap bilinear_resize(const FeatureMap& in, int out_h, int out_w);
FeatureMap fuse_levels(const std::vector<FeatureMap>& features,
                       std::pair<int, int> target_hw);

// extract_multilevel + fuse_levels in one call.
FeatureMap extract_fused(const Image& image, const Backbone& backbone,
                         const BackboneSpec& spec, std::pair<int, int> target_hw);

Image resize_image(const Image& img, int out_h, int out_w);

// im2col convolution; weight is (kh*kw*cin) x cout with row index
// ((r*kw + c)*cin + ci). Shared by the backbones and reused in tests.
FeatureMap conv2d(const FeatureMap& in, const Mat& weight, const Vec& bias, int kh,
                  int kw, int stride, int pad);

FeatureMap image_to_featuremap(const Image& image, const std::array<double, 3>& mean,
                               const std::array<double, 3>& std);

}  // namespace uranet
