#pragma once

// Feature-level anomaly synthesis: Perlin-noise binary masks, photometric
// augmentation of normal and anomaly-source images, masked feature blending,
// and per-token ground-truth labels.

#include <cstdint>
#include <utility>
#include <vector>

#include "uranet/common.hpp"

namespace uranet {

// ---------------------------------------------------------------------------
// Masks

struct PerlinParams {
    int height = 64;          // mask rows, feature resolution
    int width = 64;           // mask cols
    std::pair<int, int> scale_range{2, 8};  // lattice period bounds, powers of two
    double threshold = 0.5;   // cut applied to min-max-normalized noise
    uint64_t seed = 0;
    int fallback_block = 4;   // block edge used when resampling keeps coming up empty

    void validate() const;
};

// Binary spatial map. Meaning of 1 depends on use: anomalous region for
// synthesis masks, kept token for reconstructor keep-masks.
struct AnomalyMask {
    Mat values;

    int h() const { return static_cast<int>(values.rows()); }
    int w() const { return static_cast<int>(values.cols()); }
    void validate() const {
        check(values.size() > 0, "AnomalyMask: empty");
        check(((values.array() == 0.0) || (values.array() == 1.0)).all(),
              "AnomalyMask: values must be exactly 0 or 1");
    }
};

// Gradient lattice noise with period_y x period_x cells, min-max normalized
// to [0,1]. A degenerate constant field comes back as all zeros.
Mat perlin_noise_field(int h, int w, int period_y, int period_x, uint64_t seed);

// 1 where field >= threshold.
AnomalyMask binarize_field(const Mat& field, double threshold);

// Random-period, randomly rotated, thresholded noise field. Deterministic in
// params.seed. An all-zero result is resampled up to 8 times, then replaced
// by one random fallback_block^2 block of ones.
AnomalyMask perlin_mask(const PerlinParams& params);

// ---------------------------------------------------------------------------
// Augmentation

enum class AugOp { Posterize, Sharpness, Solarize, Equalize, Brightness, Color, Contrast };

const char* aug_op_name(AugOp op);

enum class PolicyKind { Source, Normal };

struct AugRange {
    double lo = 0.0;
    double hi = 1.0;
};

struct AugmentationPolicy {
    PolicyKind kind = PolicyKind::Source;
    std::vector<AugOp> ops;   // candidate set; must stay inside the kind's permitted set
    int max_ops = 3;          // sampled without replacement per image
    uint64_t seed = 0;

    AugRange posterize{2, 6};     // level count, rounded to int
    AugRange sharpness{0.5, 2.0};
    AugRange solarize{0.3, 0.7};  // inversion threshold
    AugRange brightness{0.6, 1.4};
    AugRange color{0.5, 1.5};
    AugRange contrast{0.6, 1.4};

    static AugmentationPolicy source(uint64_t seed);
    static AugmentationPolicy normal(uint64_t seed);
    void validate() const;
};

// Applies one op with an explicit parameter (ignored by Equalize).
Image apply_aug_op(const Image& image, AugOp op, double param);

// Samples min(max_ops, |ops|) distinct ops and their parameters from the
// policy seed and applies them in sampled order.
Image augment(const Image& image, const AugmentationPolicy& policy);

// ---------------------------------------------------------------------------
// Feature blending and labels

// Cellwise select: mask 1 takes f_source, mask 0 keeps f_normal, broadcast
// across channels. Bumps the global call counter.
FeatureMap synthesize_features(const FeatureMap& f_normal, const FeatureMap& f_source,
                               const AnomalyMask& mask);

// Process-wide instrumentation so eval paths can assert synthesis never ran.
uint64_t synthesize_call_count();
void reset_synthesize_call_count();

// Max-pool the mask over non-overlapping patch x patch windows and flatten
// row-major: label(t) = 1 iff any covered cell is 1.
Vec token_ground_truth(const AnomalyMask& mask, int patch);

}  // namespace uranet
