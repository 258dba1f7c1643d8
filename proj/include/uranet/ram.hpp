#pragma once

// Restoration-attention reconstructor blocks: masked ReLU attention with the
// first residual removed, vanilla pre-norm refine blocks, and the token-to-
// feature-map unembedding.

#include <cstdint>
#include <vector>

#include "uranet/autograd.hpp"
#include "uranet/common.hpp"

namespace uranet {

struct ReconstructorConfig {
    int n_restoration_blocks = 2;  // N1
    int n_refine_blocks = 2;       // N2
    int heads = 12;
    int dim = 768;                 // D
    int mlp_ratio = 4;             // hidden = mlp_ratio * dim
    bool use_positional = false;   // learned positional embeddings, off by default

    void validate() const {
        check(n_restoration_blocks > 0 && n_refine_blocks > 0, "ReconstructorConfig: block counts");
        check(heads > 0 && dim > 0 && mlp_ratio > 0, "ReconstructorConfig: nonpositive field");
        check(dim % heads == 0, "ReconstructorConfig: dim not divisible by heads");
    }
};

// Projections carry no biases; beta scales the ReLU attention scores.
struct AttentionParams {
    int heads = 1;
    ad::Var wq, wk, wv, wo;  // D x D each
    ad::Var beta;            // 1 x 1

    static AttentionParams init(int dim, int heads, uint64_t seed);
    void validate(int dim) const;
};

struct LayerNormParams {
    ad::Var gain, bias;  // 1 x D

    static LayerNormParams init(int dim);
};

struct MlpParams {
    ad::Var w1, b1;  // D x H, 1 x H
    ad::Var w2, b2;  // H x D, 1 x D

    static MlpParams init(int dim, int hidden, uint64_t seed);
};

struct RestorationBlockParams {
    AttentionParams attn;
    LayerNormParams ln;
    MlpParams mlp;

    static RestorationBlockParams init(const ReconstructorConfig& cfg, uint64_t seed);
};

struct RefineBlockParams {
    LayerNormParams ln1;
    AttentionParams attn;
    LayerNormParams ln2;
    MlpParams mlp;

    static RefineBlockParams init(const ReconstructorConfig& cfg, uint64_t seed);
};

ad::Var mlp_forward(const ad::Var& x, const MlpParams& w);

// Z = beta * ReLU(Q K_masked^T) V_masked per head, concatenated and output-
// projected. Rows of K and V at mask 0 are zeroed, so masked tokens neither
// receive attention weight nor contribute values.
ad::Var restoration_attention(const ad::Var& e_prev, const Vec& m_final,
                              const AttentionParams& w);

// Conventional scaled-dot-product self-attention over all tokens.
ad::Var softmax_attention(const ad::Var& x, const AttentionParams& w);

// E = S + MLP(LN(S)) with S = Z (first residual removed) or S = e_prev + Z
// when keep_first_residual is set (ablation variant).
ad::Var restoration_block(const ad::Var& e_prev, const Vec& m_final,
                          const RestorationBlockParams& w, bool keep_first_residual = false);

// Pre-norm block: x + attn(LN(x)), then + MLP(LN(.)).
ad::Var refine_block(const ad::Var& x, const RefineBlockParams& w);

// ---------------------------------------------------------------------------
// Token -> feature map

struct Unembed {
    int patch = 4;
    int channels = 0;
    int dim = 0;
    ad::Var weight;  // D x (K*K*C)
    ad::Var bias;    // 1 x (K*K*C)

    static Unembed init(int patch, int channels, int dim, uint64_t seed);
    void validate() const;
};

// Entry permutation inverse to patch_matrix: row t, slot (r*K + c)*C + ch of
// x lands at feature cell (ty*K + r, tx*K + c), channel ch.
ad::Var depth_to_space(const ad::Var& x, int patch, int channels, int token_h, int token_w);

// Linear D -> K*K*C then depth-to-space; output is an (H_F*W_F) x C matrix.
ad::Var unembed_tokens(const ad::Var& tokens, const Unembed& u, int token_h, int token_w);

}  // namespace uranet
