#pragma once

// Trainable model: patch embedding, perception head, restoration/refine
// stack, and unembedding, with stable parameter naming for the optimizer and
// checkpoints.

#include <string>
#include <utility>
#include <vector>

#include "uranet/ram.hpp"
#include "uranet/uiapm.hpp"

namespace uranet {

struct ModelConfig {
    int patch = 4;      // K
    int channels = 0;   // fused feature channels C_F
    int feature_h = 64; // H_F
    int feature_w = 64; // W_F
    ReconstructorConfig rec;
    bool use_ram = true;            // false: restoration stage becomes vanilla blocks
    bool remove_first_skip = true;  // false: keep the residual around masked attention

    int token_h() const { return feature_h / patch; }
    int token_w() const { return feature_w / patch; }
    int tokens() const { return token_h() * token_w(); }
    void validate() const {
        rec.validate();
        check(patch > 0 && channels > 0, "ModelConfig: nonpositive patch/channels");
        check(feature_h % patch == 0 && feature_w % patch == 0,
              "ModelConfig: feature dims not divisible by patch");
    }
};

struct UraNetModel {
    ModelConfig cfg;
    PatchEmbed embed;
    PerceptionHead head;
    std::vector<RestorationBlockParams> restoration;  // masked path (use_ram)
    std::vector<RefineBlockParams> encoder_vanilla;   // unmasked path (!use_ram)
    std::vector<RefineBlockParams> refine;
    Unembed unembed;
    ad::Var pos_embed;  // L x D, present only with cfg.rec.use_positional

    static UraNetModel init(const ModelConfig& cfg, uint64_t seed);

    // Stable name -> parameter pairs, ordering fixed across runs.
    std::vector<std::pair<std::string, ad::Var>> named_params() const;

    // Feature map -> tokens (adds positional embedding when enabled).
    ad::Var encode(const FeatureMap& f_in) const;

    // Tokens -> restored feature matrix ((H_F*W_F) x C). m_final gates the
    // restoration stage only when use_ram is set.
    ad::Var restore_tokens(const ad::Var& tokens, const Vec& m_final) const;

    // Full path: encode + restore + unembed.
    ad::Var reconstruct(const FeatureMap& f_in, const Vec& m_final) const;

    FeatureMap reconstruct_plain(const FeatureMap& f_in, const Vec& m_final) const;
};

}  // namespace uranet
