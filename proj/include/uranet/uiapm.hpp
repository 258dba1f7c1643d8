#pragma once

// Anomaly perception head: patch embedding, per-token Gaussian score
// distribution, discriminative + KL losses, and the sampled mean/uncertainty
// masks that gate the reconstructor.

#include <cstdint>
#include <optional>
#include <utility>

#include "uranet/autograd.hpp"
#include "uranet/common.hpp"

namespace uranet {

// ---------------------------------------------------------------------------
// Patch embedding

struct PatchEmbed {
    int patch = 4;    // K
    int channels = 0; // fused feature channels C_F
    int dim = 0;      // token width D
    ad::Var weight;   // (K*K*C_F) x D
    ad::Var bias;     // 1 x D

    static PatchEmbed init(int patch, int channels, int dim, uint64_t seed);
    void validate() const;
};

// Rows are flattened K x K x C patches in row-major patch order; row layout
// matches the conv2d weight layout ((r*K + c)*C + ch).
Mat patch_matrix(const FeatureMap& f, int patch);

// Token t = flattened patch t times weight plus bias; L = (H_F/K)*(W_F/K).
ad::Var embed_tokens(const FeatureMap& f, const PatchEmbed& embed);

// ---------------------------------------------------------------------------
// Score distribution

struct PerceptionHead {
    ad::Var wu, bu;  // mean head, D x 1 and 1 x 1
    ad::Var ws, bs;  // pre-softplus std head

    static PerceptionHead init(int dim, uint64_t seed);
    void validate(int dim) const;
};

// Graph-connected (training) form.
struct ScoreNodes {
    ad::Var u;      // L x 1
    ad::Var sigma;  // L x 1, positive by construction
};

// Detached (inference) form.
struct ScoreDistribution {
    Vec u;
    Vec sigma;
    std::optional<Mat> samples;  // m x L when drawn
};

ScoreNodes predict_distribution(const ad::Var& tokens, const PerceptionHead& head);
ScoreDistribution predict_distribution_plain(const Mat& tokens, const PerceptionHead& head);

// z = u + eps (.) sigma; eps enters as a constant.
ad::Var sample_scores(const ScoreNodes& dist, const Vec& eps);
Vec sample_scores_plain(const ScoreDistribution& dist, const Vec& eps);

// ---------------------------------------------------------------------------
// Losses

// Logit-form BCE, mean over tokens, summed over the two branches.
ad::Var discriminative_loss(const ad::Var& z_sa, const Vec& g_sa, const ad::Var& z_n,
                            const Vec& g_n);
double discriminative_loss_plain(const Vec& z_sa, const Vec& g_sa, const Vec& z_n,
                                 const Vec& g_n);

// Mean over tokens of KL(N(u, sigma^2) || N(0, 1)).
ad::Var kl_loss(const ScoreNodes& dist);
double kl_loss_plain(const Vec& u, const Vec& sigma);

ad::Var auxiliary_loss(const ad::Var& l_dis, const ad::Var& l_kl, double lambda);
double auxiliary_loss_plain(double l_dis, double l_kl, double lambda);

// ---------------------------------------------------------------------------
// Mask fusion

// Per-column mean and population std of an m x L sample matrix.
std::pair<Vec, Vec> mean_std_from_samples(const Mat& samples);

// Draws m reparameterized score sequences and reduces them to a mean
// sequence U and an uncertainty sequence V (population std). Fills
// dist.samples when collect_samples is set.
std::pair<Vec, Vec> estimate_mean_uncertainty(ScoreDistribution& dist, int m, uint64_t seed,
                                              bool collect_samples = false);

enum class BinarizeDirection { KeepLow, KeepHigh };

// Threshold = mean(seq) + gamma * population-std(seq). KeepLow marks 1 where
// value <= threshold, KeepHigh where value > threshold.
Vec binarize(const Vec& seq, double gamma, BinarizeDirection direction);

// Elementwise AND of keep-masks: a token survives only if both masks keep it.
Vec fuse_masks(const Vec& m_u, const Vec& m_v);

struct MaskFusionResult {
    Vec U, V;
    Vec m_u, m_v, m_final;  // 1 = keep
};

// Test-time path: sampled moments, then binarize + fuse.
MaskFusionResult compute_mask(ScoreDistribution& dist, int m, double gamma, uint64_t seed);

// Training-time path: analytic moments U := u, V := sigma, no sampling. The
// result is a constant w.r.t. gradients.
MaskFusionResult compute_mask_analytic(const Vec& u, const Vec& sigma, double gamma);

}  // namespace uranet
