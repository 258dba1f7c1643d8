#include "uranet/model.hpp"

#include <random>

namespace uranet {

UraNetModel UraNetModel::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    UraNetModel m;
    m.cfg = cfg;
    m.embed = PatchEmbed::init(cfg.patch, cfg.channels, cfg.rec.dim, derive_seed(seed, "embed"));
    m.head = PerceptionHead::init(cfg.rec.dim, derive_seed(seed, "head"));
    for (int i = 0; i < cfg.rec.n_restoration_blocks; ++i) {
        if (cfg.use_ram)
            m.restoration.push_back(
                RestorationBlockParams::init(cfg.rec, derive_seed(seed, "rest", i)));
        else
            m.encoder_vanilla.push_back(
                RefineBlockParams::init(cfg.rec, derive_seed(seed, "enc", i)));
    }
    for (int i = 0; i < cfg.rec.n_refine_blocks; ++i)
        m.refine.push_back(RefineBlockParams::init(cfg.rec, derive_seed(seed, "refine", i)));
    m.unembed =
        Unembed::init(cfg.patch, cfg.channels, cfg.rec.dim, derive_seed(seed, "unembed"));
    if (cfg.rec.use_positional) {
        std::mt19937_64 rng(derive_seed(seed, "pos"));
        std::normal_distribution<double> dist(0.0, 0.02);
        Mat p(cfg.tokens(), cfg.rec.dim);
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = dist(rng);
        m.pos_embed = ad::Var::param(std::move(p));
    }
    return m;
}

namespace {

void push_attention(const std::string& prefix, const AttentionParams& a,
                    std::vector<std::pair<std::string, ad::Var>>& out) {
    out.emplace_back(prefix + ".wq", a.wq);
    out.emplace_back(prefix + ".wk", a.wk);
    out.emplace_back(prefix + ".wv", a.wv);
    out.emplace_back(prefix + ".wo", a.wo);
    out.emplace_back(prefix + ".beta", a.beta);
}

// softmax attention runs at a fixed temperature, so its unused scale
// parameter stays out of the trainable set
void push_attention_fixed_scale(const std::string& prefix, const AttentionParams& a,
                                std::vector<std::pair<std::string, ad::Var>>& out) {
    out.emplace_back(prefix + ".wq", a.wq);
    out.emplace_back(prefix + ".wk", a.wk);
    out.emplace_back(prefix + ".wv", a.wv);
    out.emplace_back(prefix + ".wo", a.wo);
}

void push_mlp(const std::string& prefix, const MlpParams& m,
              std::vector<std::pair<std::string, ad::Var>>& out) {
    out.emplace_back(prefix + ".w1", m.w1);
    out.emplace_back(prefix + ".b1", m.b1);
    out.emplace_back(prefix + ".w2", m.w2);
    out.emplace_back(prefix + ".b2", m.b2);
}

void push_ln(const std::string& prefix, const LayerNormParams& l,
             std::vector<std::pair<std::string, ad::Var>>& out) {
    out.emplace_back(prefix + ".gain", l.gain);
    out.emplace_back(prefix + ".bias", l.bias);
}

void push_refine(const std::string& prefix, const RefineBlockParams& b,
                 std::vector<std::pair<std::string, ad::Var>>& out) {
    push_ln(prefix + ".ln1", b.ln1, out);
    push_attention_fixed_scale(prefix + ".attn", b.attn, out);
    push_ln(prefix + ".ln2", b.ln2, out);
    push_mlp(prefix + ".mlp", b.mlp, out);
}

}  // namespace

std::vector<std::pair<std::string, ad::Var>> UraNetModel::named_params() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    out.emplace_back("embed.weight", embed.weight);
    out.emplace_back("embed.bias", embed.bias);
    out.emplace_back("head.wu", head.wu);
    out.emplace_back("head.bu", head.bu);
    out.emplace_back("head.ws", head.ws);
    out.emplace_back("head.bs", head.bs);
    for (size_t i = 0; i < restoration.size(); ++i) {
        const std::string p = "rest." + std::to_string(i);
        push_attention(p + ".attn", restoration[i].attn, out);
        push_ln(p + ".ln", restoration[i].ln, out);
        push_mlp(p + ".mlp", restoration[i].mlp, out);
    }
    for (size_t i = 0; i < encoder_vanilla.size(); ++i)
        push_refine("enc." + std::to_string(i), encoder_vanilla[i], out);
    for (size_t i = 0; i < refine.size(); ++i)
        push_refine("refine." + std::to_string(i), refine[i], out);
    out.emplace_back("unembed.weight", unembed.weight);
    out.emplace_back("unembed.bias", unembed.bias);
    if (cfg.rec.use_positional) out.emplace_back("pos_embed", pos_embed);
    return out;
}

ad::Var UraNetModel::encode(const FeatureMap& f_in) const {
    check(f_in.h == cfg.feature_h && f_in.w == cfg.feature_w && f_in.c == cfg.channels,
          "UraNetModel::encode: feature shape mismatch");
    ad::Var tokens = embed_tokens(f_in, embed);
    if (cfg.rec.use_positional) tokens = ad::add(tokens, pos_embed);
    return tokens;
}

ad::Var UraNetModel::restore_tokens(const ad::Var& tokens, const Vec& m_final) const {
    ad::Var x = tokens;
    if (cfg.use_ram) {
        for (const auto& block : restoration)
            x = restoration_block(x, m_final, block, /*keep_first_residual=*/!cfg.remove_first_skip);
    } else {
        for (const auto& block : encoder_vanilla) x = refine_block(x, block);
    }
    for (const auto& block : refine) x = refine_block(x, block);
    return unembed_tokens(x, unembed, cfg.token_h(), cfg.token_w());
}

ad::Var UraNetModel::reconstruct(const FeatureMap& f_in, const Vec& m_final) const {
    return restore_tokens(encode(f_in), m_final);
}

FeatureMap UraNetModel::reconstruct_plain(const FeatureMap& f_in, const Vec& m_final) const {
    Mat value = reconstruct(f_in, m_final).value();
    FeatureMap out;
    out.h = f_in.h;
    out.w = f_in.w;
    out.c = cfg.channels;
    out.data = std::move(value);
    return out;
}

}  // namespace uranet
