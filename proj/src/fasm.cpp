#include "uranet/fasm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

namespace uranet {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

Mat rotate90(const Mat& m, int quarter_turns) {
    switch (quarter_turns & 3) {
        case 0:
            return m;
        case 1:
            return m.transpose().rowwise().reverse();
        case 2:
            return m.reverse();
        default:
            return m.transpose().colwise().reverse();
    }
}

}  // namespace

void PerlinParams::validate() const {
    check(height > 0 && width > 0, "PerlinParams: nonpositive size");
    check(threshold > 0.0 && threshold < 1.0, "PerlinParams: threshold outside (0,1)");
    check(scale_range.first <= scale_range.second, "PerlinParams: inverted scale range");
    check(is_pow2(scale_range.first) && is_pow2(scale_range.second),
          "PerlinParams: scales must be powers of two");
    check(fallback_block > 0, "PerlinParams: nonpositive fallback block");
}

Mat perlin_noise_field(int h, int w, int period_y, int period_x, uint64_t seed) {
    check(h > 0 && w > 0, "perlin_noise_field: nonpositive size");
    check(period_y > 0 && period_x > 0, "perlin_noise_field: nonpositive period");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    Mat gx(period_y + 1, period_x + 1), gy(period_y + 1, period_x + 1);
    for (int i = 0; i <= period_y; ++i)
        for (int j = 0; j <= period_x; ++j) {
            double a = angle(rng);
            gx(i, j) = std::cos(a);
            gy(i, j) = std::sin(a);
        }

    Mat field(h, w);
    for (int y = 0; y < h; ++y) {
        const double u = static_cast<double>(y) * period_y / h;
        const int i0 = std::min(static_cast<int>(u), period_y - 1);
        const double du = u - i0;
        const double wu = fade(du);
        for (int x = 0; x < w; ++x) {
            const double v = static_cast<double>(x) * period_x / w;
            const int j0 = std::min(static_cast<int>(v), period_x - 1);
            const double dv = v - j0;
            const double wv = fade(dv);
            const double n00 = gy(i0, j0) * du + gx(i0, j0) * dv;
            const double n01 = gy(i0, j0 + 1) * du + gx(i0, j0 + 1) * (dv - 1.0);
            const double n10 = gy(i0 + 1, j0) * (du - 1.0) + gx(i0 + 1, j0) * dv;
            const double n11 = gy(i0 + 1, j0 + 1) * (du - 1.0) + gx(i0 + 1, j0 + 1) * (dv - 1.0);
            const double nx0 = n00 + wv * (n01 - n00);
            const double nx1 = n10 + wv * (n11 - n10);
            field(y, x) = nx0 + wu * (nx1 - nx0);
        }
    }
    const double lo = field.minCoeff(), hi = field.maxCoeff();
    if (hi - lo < 1e-12) return Mat::Zero(h, w);
    return (field.array() - lo) / (hi - lo);
}

AnomalyMask binarize_field(const Mat& field, double threshold) {
    AnomalyMask m;
    m.values = (field.array() >= threshold).cast<double>();
    return m;
}

AnomalyMask perlin_mask(const PerlinParams& params) {
    params.validate();
    const int lo_exp = static_cast<int>(std::lround(std::log2(params.scale_range.first)));
    const int hi_exp = static_cast<int>(std::lround(std::log2(params.scale_range.second)));
    for (int attempt = 0; attempt < 8; ++attempt) {
        const uint64_t s = derive_seed(params.seed, "perlin-attempt", attempt);
        std::mt19937_64 rng(s);
        std::uniform_int_distribution<int> exp_dist(lo_exp, hi_exp);
        const int period_y = 1 << exp_dist(rng);
        const int period_x = 1 << exp_dist(rng);
        std::uniform_int_distribution<int> rot_dist(0, 3);
        const int rot = rot_dist(rng);
        // odd quarter turns swap the axes, so generate at the transposed size
        const bool swap = (rot & 1) != 0;
        Mat field = perlin_noise_field(swap ? params.width : params.height,
                                       swap ? params.height : params.width,
                                       swap ? period_x : period_y,
                                       swap ? period_y : period_x,
                                       derive_seed(s, "perlin-field"));
        field = rotate90(field, rot);
        AnomalyMask mask = binarize_field(field, params.threshold);
        if (mask.values.sum() > 0.0) return mask;
    }
    // every resample came back empty: plant one block so training still sees
    // an anomalous region
    std::mt19937_64 rng(derive_seed(params.seed, "perlin-fallback"));
    const int bh = std::min(params.fallback_block, params.height);
    const int bw = std::min(params.fallback_block, params.width);
    std::uniform_int_distribution<int> ry(0, params.height - bh), rx(0, params.width - bw);
    AnomalyMask mask;
    mask.values = Mat::Zero(params.height, params.width);
    mask.values.block(ry(rng), rx(rng), bh, bw).setOnes();
    return mask;
}

// ---------------------------------------------------------------------------

const char* aug_op_name(AugOp op) {
    switch (op) {
        case AugOp::Posterize: return "posterize";
        case AugOp::Sharpness: return "sharpness";
        case AugOp::Solarize: return "solarize";
        case AugOp::Equalize: return "equalize";
        case AugOp::Brightness: return "brightness";
        case AugOp::Color: return "color";
        case AugOp::Contrast: return "contrast";
    }
    return "?";
}

AugmentationPolicy AugmentationPolicy::source(uint64_t seed) {
    AugmentationPolicy p;
    p.kind = PolicyKind::Source;
    p.ops = {AugOp::Posterize, AugOp::Sharpness, AugOp::Solarize, AugOp::Equalize,
             AugOp::Brightness, AugOp::Color,    AugOp::Contrast};
    p.seed = seed;
    return p;
}

AugmentationPolicy AugmentationPolicy::normal(uint64_t seed) {
    AugmentationPolicy p;
    p.kind = PolicyKind::Normal;
    p.ops = {AugOp::Brightness, AugOp::Contrast};
    p.seed = seed;
    return p;
}

void AugmentationPolicy::validate() const {
    check(max_ops >= 0, "AugmentationPolicy: negative max_ops");
    for (AugOp op : ops) {
        if (kind == PolicyKind::Normal)
            check(op == AugOp::Brightness || op == AugOp::Contrast,
                  "AugmentationPolicy: op outside the normal-image set");
    }
    for (auto r : {posterize, sharpness, solarize, brightness, color, contrast})
        check(r.lo <= r.hi, "AugmentationPolicy: inverted parameter range");
}

namespace {

Image clamp01(Image img) {
    for (auto& c : img.ch) c = c.cwiseMax(0.0).cwiseMin(1.0);
    return img;
}

Mat luma(const Image& img) {
    return 0.299 * img.ch[0] + 0.587 * img.ch[1] + 0.114 * img.ch[2];
}

Image op_posterize(const Image& img, int levels) {
    check(levels >= 2, "posterize: needs at least 2 levels");
    Image out = img;
    for (auto& c : out.ch)
        c = c.unaryExpr([levels](double v) {
            int q = std::min(levels - 1, static_cast<int>(v * levels));
            return static_cast<double>(q) / (levels - 1);
        });
    return out;
}

Image op_sharpness(const Image& img, double factor) {
    // 3x3 smoothing kernel; edge pixels stay unblurred
    const int h = img.height(), w = img.width();
    Image out = img;
    for (int c = 0; c < 3; ++c) {
        const Mat& src = img.ch[c];
        Mat blur = src;
        for (int y = 1; y + 1 < h; ++y)
            for (int x = 1; x + 1 < w; ++x) {
                double s = 5.0 * src(y, x);
                s += src(y - 1, x - 1) + src(y - 1, x) + src(y - 1, x + 1);
                s += src(y, x - 1) + src(y, x + 1);
                s += src(y + 1, x - 1) + src(y + 1, x) + src(y + 1, x + 1);
                blur(y, x) = s / 13.0;
            }
        out.ch[c] = blur + factor * (src - blur);
    }
    return clamp01(std::move(out));
}

Image op_solarize(const Image& img, double threshold) {
    Image out = img;
    for (auto& c : out.ch)
        c = c.unaryExpr([threshold](double v) { return v >= threshold ? 1.0 - v : v; });
    return out;
}

Image op_equalize(const Image& img) {
    constexpr int kBins = 256;
    const int h = img.height(), w = img.width();
    Image out = img;
    for (int c = 0; c < 3; ++c) {
        std::array<int, kBins> hist{};
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int b = std::min(kBins - 1, static_cast<int>(img.ch[c](y, x) * kBins));
                ++hist[b];
            }
        std::array<double, kBins> lut{};
        int cdf = 0, cdf_min = -1;
        const int total = h * w;
        std::array<int, kBins> cum{};
        for (int b = 0; b < kBins; ++b) {
            cdf += hist[b];
            cum[b] = cdf;
            if (cdf_min < 0 && hist[b] > 0) cdf_min = cdf;
        }
        if (cdf_min < 0 || total == cdf_min) continue;  // constant channel
        for (int b = 0; b < kBins; ++b)
            lut[b] = static_cast<double>(cum[b] - cdf_min) / (total - cdf_min);
        out.ch[c] = img.ch[c].unaryExpr([&lut](double v) {
            return lut[std::min(kBins - 1, static_cast<int>(v * kBins))];
        });
    }
    return out;
}

Image op_blend_toward(const Image& img, const Mat& base_r, const Mat& base_g,
                      const Mat& base_b, double factor) {
    // factor 1 reproduces the input; 0 collapses onto the base
    Image out;
    out.ch[0] = base_r + factor * (img.ch[0] - base_r);
    out.ch[1] = base_g + factor * (img.ch[1] - base_g);
    out.ch[2] = base_b + factor * (img.ch[2] - base_b);
    return clamp01(std::move(out));
}

}  // namespace

Image apply_aug_op(const Image& image, AugOp op, double param) {
    image.validate();
    switch (op) {
        case AugOp::Posterize:
            return op_posterize(image, static_cast<int>(std::lround(param)));
        case AugOp::Sharpness:
            return op_sharpness(image, param);
        case AugOp::Solarize:
            return op_solarize(image, param);
        case AugOp::Equalize:
            return op_equalize(image);
        case AugOp::Brightness: {
            Mat zero = Mat::Zero(image.height(), image.width());
            return op_blend_toward(image, zero, zero, zero, param);
        }
        case AugOp::Color: {
            Mat g = luma(image);
            return op_blend_toward(image, g, g, g, param);
        }
        case AugOp::Contrast: {
            Mat mean = Mat::Constant(image.height(), image.width(), luma(image).mean());
            return op_blend_toward(image, mean, mean, mean, param);
        }
    }
    throw std::invalid_argument("apply_aug_op: unknown op");
}

Image augment(const Image& image, const AugmentationPolicy& policy) {
    image.validate();
    policy.validate();
    std::mt19937_64 rng(policy.seed);
    std::vector<AugOp> pool = policy.ops;
    std::shuffle(pool.begin(), pool.end(), rng);
    const size_t n = std::min<size_t>(policy.max_ops, pool.size());
    Image out = image;
    for (size_t i = 0; i < n; ++i) {
        const AugOp op = pool[i];
        AugRange r;
        switch (op) {
            case AugOp::Posterize: r = policy.posterize; break;
            case AugOp::Sharpness: r = policy.sharpness; break;
            case AugOp::Solarize: r = policy.solarize; break;
            case AugOp::Equalize: r = AugRange{0, 0}; break;
            case AugOp::Brightness: r = policy.brightness; break;
            case AugOp::Color: r = policy.color; break;
            case AugOp::Contrast: r = policy.contrast; break;
        }
        std::uniform_real_distribution<double> dist(r.lo, r.hi);
        out = apply_aug_op(out, op, dist(rng));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {
std::atomic<uint64_t> g_synthesize_calls{0};
}

FeatureMap synthesize_features(const FeatureMap& f_normal, const FeatureMap& f_source,
                               const AnomalyMask& mask) {
    f_normal.validate();
    f_source.validate();
    mask.validate();
    check(f_normal.h == f_source.h && f_normal.w == f_source.w && f_normal.c == f_source.c,
          "synthesize_features: feature shapes differ");
    check(mask.h() == f_normal.h && mask.w() == f_normal.w,
          "synthesize_features: mask shape differs from features");
    g_synthesize_calls.fetch_add(1, std::memory_order_relaxed);
    FeatureMap out = f_normal;
    for (int r = 0; r < mask.h(); ++r)
        for (int col = 0; col < mask.w(); ++col)
            if (mask.values(r, col) == 1.0)
                out.data.row(static_cast<Eigen::Index>(r) * out.w + col) =
                    f_source.data.row(static_cast<Eigen::Index>(r) * out.w + col);
    return out;
}

uint64_t synthesize_call_count() { return g_synthesize_calls.load(std::memory_order_relaxed); }

void reset_synthesize_call_count() { g_synthesize_calls.store(0, std::memory_order_relaxed); }

Vec token_ground_truth(const AnomalyMask& mask, int patch) {
    mask.validate();
    check(patch > 0, "token_ground_truth: nonpositive patch");
    check(mask.h() % patch == 0 && mask.w() % patch == 0,
          "token_ground_truth: mask dims not divisible by patch");
    const int th = mask.h() / patch, tw = mask.w() / patch;
    Vec labels = Vec::Zero(static_cast<Eigen::Index>(th) * tw);
    for (int ty = 0; ty < th; ++ty)
        for (int tx = 0; tx < tw; ++tx) {
            const double m =
                mask.values.block(ty * patch, tx * patch, patch, patch).maxCoeff();
            labels(static_cast<Eigen::Index>(ty) * tw + tx) = m;
        }
    return labels;
}

}  // namespace uranet
