#include "uranet/backbone.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <random>

namespace uranet {

FeatureMap image_to_featuremap(const Image& image, const std::array<double, 3>& mean,
                               const std::array<double, 3>& std) {
    image.validate();
    const int h = image.height(), w = image.width();
    FeatureMap f = FeatureMap::zeros(h, w, 3);
    for (int c = 0; c < 3; ++c) {
        const Mat& plane = image.ch[c];
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col)
                f.at(r, col, c) = (plane(r, col) - mean[c]) / std[c];
    }
    return f;
}

FeatureMap conv2d(const FeatureMap& in, const Mat& weight, const Vec& bias, int kh,
                  int kw, int stride, int pad) {
    check(weight.rows() == static_cast<Eigen::Index>(kh) * kw * in.c,
          "conv2d: weight rows do not match kernel/channels");
    const int cout = static_cast<int>(weight.cols());
    check(bias.size() == cout, "conv2d: bias size mismatch");
    const int oh = (in.h + 2 * pad - kh) / stride + 1;
    const int ow = (in.w + 2 * pad - kw) / stride + 1;
    check(oh >= 1 && ow >= 1, "conv2d: output collapses to zero size");

    Mat patches(static_cast<Eigen::Index>(oh) * ow, weight.rows());
    patches.setZero();
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const Eigen::Index row = static_cast<Eigen::Index>(oy) * ow + ox;
            for (int r = 0; r < kh; ++r) {
                const int iy = oy * stride - pad + r;
                if (iy < 0 || iy >= in.h) continue;
                for (int c = 0; c < kw; ++c) {
                    const int ix = ox * stride - pad + c;
                    if (ix < 0 || ix >= in.w) continue;
                    patches.block(row, (static_cast<Eigen::Index>(r) * kw + c) * in.c, 1, in.c) =
                        in.data.row(static_cast<Eigen::Index>(iy) * in.w + ix);
                }
            }
        }
    }
    FeatureMap out;
    out.h = oh;
    out.w = ow;
    out.c = cout;
    out.data = patches * weight;
    out.data.rowwise() += bias.transpose();
    return out;
}

FeatureMap bilinear_resize(const FeatureMap& in, int out_h, int out_w) {
    check(out_h > 0 && out_w > 0, "bilinear_resize: target must be positive");
    if (out_h == in.h && out_w == in.w) return in;
    FeatureMap out = FeatureMap::zeros(out_h, out_w, in.c);
    const double sy = static_cast<double>(in.h) / out_h;
    const double sx = static_cast<double>(in.w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        // align_corners disabled: sample at pixel centers
        double fy = std::max(0.0, (oy + 0.5) * sy - 0.5);
        int y0 = std::min(static_cast<int>(fy), in.h - 1);
        int y1 = std::min(y0 + 1, in.h - 1);
        double ty = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = std::max(0.0, (ox + 0.5) * sx - 0.5);
            int x0 = std::min(static_cast<int>(fx), in.w - 1);
            int x1 = std::min(x0 + 1, in.w - 1);
            double tx = fx - x0;
            out.data.row(static_cast<Eigen::Index>(oy) * out_w + ox) =
                (1 - ty) * (1 - tx) * in.data.row(static_cast<Eigen::Index>(y0) * in.w + x0) +
                (1 - ty) * tx * in.data.row(static_cast<Eigen::Index>(y0) * in.w + x1) +
                ty * (1 - tx) * in.data.row(static_cast<Eigen::Index>(y1) * in.w + x0) +
                ty * tx * in.data.row(static_cast<Eigen::Index>(y1) * in.w + x1);
        }
    }
    return out;
}

FeatureMap fuse_levels(const std::vector<FeatureMap>& features,
                       std::pair<int, int> target_hw) {
    check(!features.empty(), "fuse_levels: empty feature list");
    const auto [th, tw] = target_hw;
    check(th > 0 && tw > 0, "fuse_levels: target size must be positive");
    int total_c = 0;
    for (const auto& f : features) total_c += f.c;
    FeatureMap out = FeatureMap::zeros(th, tw, total_c);
    int at = 0;
    for (const auto& f : features) {
        FeatureMap r = bilinear_resize(f, th, tw);
        out.data.middleCols(at, f.c) = r.data;
        at += f.c;
    }
    return out;
}

namespace {

Mat random_conv_weight(int kh, int kw, int cin, int cout, std::mt19937_64& rng) {
    // He-style scaling keeps activations bounded through the stack
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (kh * kw * cin)));
    Mat w(static_cast<Eigen::Index>(kh) * kw * cin, cout);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
    return w;
}

// --------------------------------------------------------------------------
// Toy backbone: three strided conv stages with fixed seeded weights and tanh
// activations. Never trained; exists so the full pipeline runs without any
// pretrained weight file.
class ToyBackbone final : public Backbone {
public:
    static constexpr std::array<int, 3> kChannels = {8, 16, 32};

    explicit ToyBackbone(uint64_t seed) {
        int cin = 3;
        for (size_t s = 0; s < kChannels.size(); ++s) {
            std::mt19937_64 rng(derive_seed(seed, "toy-stage", s));
            weights_.push_back(random_conv_weight(3, 3, cin, kChannels[s], rng));
            biases_.push_back(Vec::Zero(kChannels[s]));
            cin = kChannels[s];
        }
    }

    int num_levels() const override { return static_cast<int>(kChannels.size()); }
    int level_channels(int level) const override {
        check(level >= 0 && level < num_levels(), "toy backbone: level out of range");
        return kChannels[level];
    }

    std::vector<FeatureMap> extract(const FeatureMap& input,
                                    const std::vector<int>& levels) const override {
        int max_level = 0;
        for (int l : levels) {
            check(l >= 0 && l < num_levels(), "toy backbone: level out of range");
            max_level = std::max(max_level, l);
        }
        std::vector<FeatureMap> stages;
        FeatureMap x = input;
        for (int s = 0; s <= max_level; ++s) {
            x = conv2d(x, weights_[s], biases_[s], 3, 3, /*stride=*/2, /*pad=*/1);
            x.data = x.data.array().tanh().matrix();
            stages.push_back(x);
        }
        std::vector<FeatureMap> out;
        for (int l : levels) out.push_back(stages[l]);
        return out;
    }

private:
    std::vector<Mat> weights_;
    std::vector<Vec> biases_;
};

// --------------------------------------------------------------------------
// Wide residual 50-layer backbone (width factor 2), inference only. Batch
// norm is folded into the preceding convolution at load time. Stage outputs
// (levels 0..3) carry 256/512/1024/2048 channels; the default level set
// {0,1,2} fuses to 1792 channels.

struct ConvLayer {
    Mat w;
    Vec b;
    int kh = 1, kw = 1, stride = 1, pad = 0;

    FeatureMap apply(const FeatureMap& x) const { return conv2d(x, w, b, kh, kw, stride, pad); }
};

struct TensorFile {
    std::map<std::string, std::pair<std::vector<uint64_t>, std::vector<double>>> tensors;

    static TensorFile load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        check(in.good(), "backbone weights: cannot open " + path);
        char magic[8];
        in.read(magic, 8);
        check(in.good() && std::memcmp(magic, "URNETBW1", 8) == 0,
              "backbone weights: bad magic in " + path);
        uint64_t n = 0;
        in.read(reinterpret_cast<char*>(&n), sizeof(n));
        TensorFile tf;
        for (uint64_t i = 0; i < n; ++i) {
            uint32_t name_len = 0;
            in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            uint32_t ndim = 0;
            in.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
            std::vector<uint64_t> dims(ndim);
            uint64_t count = 1;
            for (auto& d : dims) {
                in.read(reinterpret_cast<char*>(&d), sizeof(d));
                count *= d;
            }
            std::vector<double> data(count);
            in.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(count * sizeof(double)));
            check(in.good(), "backbone weights: truncated file " + path);
            tf.tensors.emplace(std::move(name), std::make_pair(std::move(dims), std::move(data)));
        }
        return tf;
    }

    const std::pair<std::vector<uint64_t>, std::vector<double>>& get(const std::string& name) const {
        auto it = tensors.find(name);
        check(it != tensors.end(), "backbone weights: missing tensor " + name);
        return it->second;
    }
};

class WideResnetBackbone final : public Backbone {
public:
    WideResnetBackbone(const std::string& weights_path, uint64_t seed) {
        if (weights_path.empty())
            init_random(seed);
        else
            init_from_file(weights_path);
    }

    int num_levels() const override { return 4; }
    int level_channels(int level) const override {
        check(level >= 0 && level < 4, "wide_resnet50_2: level out of range");
        return kStageOut[level];
    }

    std::vector<FeatureMap> extract(const FeatureMap& input,
                                    const std::vector<int>& levels) const override {
        int max_level = 0;
        for (int l : levels) {
            check(l >= 0 && l < 4, "wide_resnet50_2: level out of range");
            max_level = std::max(max_level, l);
        }
        FeatureMap x = stem_.apply(input);
        relu_inplace(x);
        x = maxpool3x3s2(x);
        std::vector<FeatureMap> stages;
        for (int s = 0; s <= max_level; ++s) {
            for (const auto& block : stages_[s]) x = block.apply(x);
            stages.push_back(x);
        }
        std::vector<FeatureMap> out;
        for (int l : levels) out.push_back(stages[l]);
        return out;
    }

private:
    static constexpr std::array<int, 4> kStageOut = {256, 512, 1024, 2048};
    static constexpr std::array<int, 4> kStageWidth = {128, 256, 512, 1024};
    static constexpr std::array<int, 4> kStageBlocks = {3, 4, 6, 3};

    struct Bottleneck {
        ConvLayer c1, c2, c3;
        ConvLayer down;
        bool has_down = false;

        FeatureMap apply(const FeatureMap& x) const {
            FeatureMap identity = has_down ? down.apply(x) : x;
            FeatureMap y = c1.apply(x);
            relu_inplace(y);
            y = c2.apply(y);
            relu_inplace(y);
            y = c3.apply(y);
            y.data += identity.data;
            relu_inplace(y);
            return y;
        }
    };

    static void relu_inplace(FeatureMap& f) { f.data = f.data.cwiseMax(0.0); }

    static FeatureMap maxpool3x3s2(const FeatureMap& in) {
        const int oh = (in.h + 2 - 3) / 2 + 1, ow = (in.w + 2 - 3) / 2 + 1;
        FeatureMap out = FeatureMap::zeros(oh, ow, in.c);
        constexpr double neg_inf = -std::numeric_limits<double>::infinity();
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                Eigen::RowVectorXd best = Eigen::RowVectorXd::Constant(in.c, neg_inf);
                for (int r = 0; r < 3; ++r) {
                    int iy = oy * 2 - 1 + r;
                    if (iy < 0 || iy >= in.h) continue;
                    for (int c = 0; c < 3; ++c) {
                        int ix = ox * 2 - 1 + c;
                        if (ix < 0 || ix >= in.w) continue;
                        best = best.cwiseMax(in.data.row(static_cast<Eigen::Index>(iy) * in.w + ix));
                    }
                }
                out.data.row(static_cast<Eigen::Index>(oy) * ow + ox) = best;
            }
        return out;
    }

    void init_random(uint64_t seed) {
        int layer_idx = 0;
        auto make_conv = [&](int kh, int kw, int cin, int cout, int stride, int pad) {
            std::mt19937_64 rng(derive_seed(seed, "wrn-layer", layer_idx++));
            ConvLayer l;
            l.w = random_conv_weight(kh, kw, cin, cout, rng);
            l.b = Vec::Zero(cout);
            l.kh = kh;
            l.kw = kw;
            l.stride = stride;
            l.pad = pad;
            return l;
        };
        stem_ = make_conv(7, 7, 3, 64, 2, 3);
        int cin = 64;
        for (int s = 0; s < 4; ++s) {
            std::vector<Bottleneck> blocks;
            for (int b = 0; b < kStageBlocks[s]; ++b) {
                const int stride = (s > 0 && b == 0) ? 2 : 1;
                Bottleneck bl;
                bl.c1 = make_conv(1, 1, cin, kStageWidth[s], 1, 0);
                bl.c2 = make_conv(3, 3, kStageWidth[s], kStageWidth[s], stride, 1);
                bl.c3 = make_conv(1, 1, kStageWidth[s], kStageOut[s], 1, 0);
                if (b == 0) {
                    bl.down = make_conv(1, 1, cin, kStageOut[s], stride, 0);
                    bl.has_down = true;
                }
                blocks.push_back(std::move(bl));
                cin = kStageOut[s];
            }
            stages_.push_back(std::move(blocks));
        }
    }

    // Loads a torchvision-layout state dict ([cout, cin, kh, kw] conv weights
    // plus batch-norm parameters) and folds each BN into its convolution.
    void init_from_file(const std::string& path) {
        TensorFile tf = TensorFile::load(path);
        auto folded = [&](const std::string& conv, const std::string& bn, int stride, int pad) {
            const auto& [wd, wv] = tf.get(conv + ".weight");
            check(wd.size() == 4, "backbone weights: conv tensor must be 4-d: " + conv);
            const int cout = static_cast<int>(wd[0]), cin = static_cast<int>(wd[1]);
            const int kh = static_cast<int>(wd[2]), kw = static_cast<int>(wd[3]);
            const auto& gamma = tf.get(bn + ".weight").second;
            const auto& beta = tf.get(bn + ".bias").second;
            const auto& mean = tf.get(bn + ".running_mean").second;
            const auto& var = tf.get(bn + ".running_var").second;
            constexpr double eps = 1e-5;
            ConvLayer l;
            l.kh = kh;
            l.kw = kw;
            l.stride = stride;
            l.pad = pad;
            l.w.resize(static_cast<Eigen::Index>(kh) * kw * cin, cout);
            l.b.resize(cout);
            for (int o = 0; o < cout; ++o) {
                const double scale = gamma[o] / std::sqrt(var[o] + eps);
                l.b(o) = beta[o] - scale * mean[o];
                for (int i = 0; i < cin; ++i)
                    for (int r = 0; r < kh; ++r)
                        for (int c = 0; c < kw; ++c)
                            l.w((static_cast<Eigen::Index>(r) * kw + c) * cin + i, o) =
                                scale * wv[((static_cast<size_t>(o) * cin + i) * kh + r) * kw + c];
            }
            return l;
        };
        stem_ = folded("conv1", "bn1", 2, 3);
        for (int s = 0; s < 4; ++s) {
            std::vector<Bottleneck> blocks;
            for (int b = 0; b < kStageBlocks[s]; ++b) {
                const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
                const int stride = (s > 0 && b == 0) ? 2 : 1;
                Bottleneck bl;
                bl.c1 = folded(p + ".conv1", p + ".bn1", 1, 0);
                bl.c2 = folded(p + ".conv2", p + ".bn2", stride, 1);
                bl.c3 = folded(p + ".conv3", p + ".bn3", 1, 0);
                if (tf.tensors.count(p + ".downsample.0.weight")) {
                    bl.down = folded(p + ".downsample.0", p + ".downsample.1", stride, 0);
                    bl.has_down = true;
                }
                blocks.push_back(std::move(bl));
            }
            stages_.push_back(std::move(blocks));
        }
    }

    ConvLayer stem_;
    std::vector<std::vector<Bottleneck>> stages_;
};

}  // namespace

FeatureMap extract_fused(const Image& image, const Backbone& backbone,
                         const BackboneSpec& spec, std::pair<int, int> target_hw) {
    return fuse_levels(extract_multilevel(image, backbone, spec), target_hw);
}

Image resize_image(const Image& img, int out_h, int out_w) {
    img.validate();
    if (out_h == img.height() && out_w == img.width()) return img;
    FeatureMap f = FeatureMap::zeros(img.height(), img.width(), 3);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < img.height(); ++r)
            for (int col = 0; col < img.width(); ++col) f.at(r, col, c) = img.ch[c](r, col);
    FeatureMap g = bilinear_resize(f, out_h, out_w);
    Image out = Image::zeros(out_h, out_w);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < out_h; ++r)
            for (int col = 0; col < out_w; ++col) out.ch[c](r, col) = g.at(r, col, c);
    return out;
}

std::shared_ptr<const Backbone> make_backbone(const BackboneSpec& spec) {
    spec.validate();
    if (spec.name == "toy") return std::make_shared<ToyBackbone>(spec.seed);
    if (spec.name == "wide_resnet50_2")
        return std::make_shared<WideResnetBackbone>(spec.weights_path, spec.seed);
    throw std::invalid_argument("unknown backbone name: " + spec.name);
}

std::vector<FeatureMap> extract_multilevel(const Image& image, const Backbone& backbone,
                                           const BackboneSpec& spec) {
    spec.validate();
    FeatureMap input = image_to_featuremap(image, spec.norm_mean, spec.norm_std);
    return backbone.extract(input, spec.levels);
}

std::vector<FeatureMap> extract_multilevel(const Image& image, const BackboneSpec& spec) {
    auto backbone = make_backbone(spec);
    return extract_multilevel(image, *backbone, spec);
}

}  // namespace uranet
