#include "uranet/ram.hpp"

#include <cmath>
#include <random>

namespace uranet {

namespace {

Mat gaussian_mat(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

// x * s with a learnable 1x1 scalar
ad::Var scale_by(const ad::Var& x, const ad::Var& s) {
    check(s.rows() == 1 && s.cols() == 1, "scale_by: scalar expected");
    auto px = x.node(), ps = s.node();
    return ad::detail::make(x.value() * s.value()(0, 0), {px, ps}, [px, ps](ad::Node& n) {
        px->accumulate(n.grad * ps->value(0, 0));
        ps->accumulate(Mat::Constant(1, 1, n.grad.cwiseProduct(px->value).sum()));
    });
}

void check_binary_mask(const Vec& m, Eigen::Index rows) {
    check(m.size() == rows, "attention mask: length mismatch");
    check(((m.array() == 0.0) || (m.array() == 1.0)).all(), "attention mask: must be binary");
}

}  // namespace

AttentionParams AttentionParams::init(int dim, int heads, uint64_t seed) {
    check(dim > 0 && heads > 0 && dim % heads == 0, "AttentionParams: bad dims");
    std::mt19937_64 rng(derive_seed(seed, "attention"));
    const double s = 1.0 / std::sqrt(double(dim));
    AttentionParams p;
    p.heads = heads;
    p.wq = ad::Var::param(gaussian_mat(dim, dim, s, rng));
    p.wk = ad::Var::param(gaussian_mat(dim, dim, s, rng));
    p.wv = ad::Var::param(gaussian_mat(dim, dim, s, rng));
    // small output projection keeps the block near-silent at init; rectified
    // scores otherwise start large enough that the fastest descent direction
    // is driving them all negative, which has no gradient to recover from
    p.wo = ad::Var::param(gaussian_mat(dim, dim, 0.1 * s, rng));
    // the usual attention temperature as the starting scale
    p.beta = ad::Var::param(Mat::Constant(1, 1, 1.0 / std::sqrt(double(dim / heads))));
    return p;
}

void AttentionParams::validate(int dim) const {
    check(heads > 0 && dim % heads == 0, "AttentionParams: bad head count");
    for (const auto* w : {&wq, &wk, &wv, &wo})
        check(w->rows() == dim && w->cols() == dim, "AttentionParams: projection shape");
    check(beta.rows() == 1 && beta.cols() == 1, "AttentionParams: beta shape");
}

LayerNormParams LayerNormParams::init(int dim) {
    LayerNormParams p;
    p.gain = ad::Var::param(Mat::Ones(1, dim));
    p.bias = ad::Var::param(Mat::Zero(1, dim));
    return p;
}

MlpParams MlpParams::init(int dim, int hidden, uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "mlp"));
    MlpParams p;
    p.w1 = ad::Var::param(gaussian_mat(dim, hidden, 1.0 / std::sqrt(double(dim)), rng));
    p.b1 = ad::Var::param(Mat::Zero(1, hidden));
    p.w2 = ad::Var::param(gaussian_mat(hidden, dim, 1.0 / std::sqrt(double(hidden)), rng));
    p.b2 = ad::Var::param(Mat::Zero(1, dim));
    return p;
}

RestorationBlockParams RestorationBlockParams::init(const ReconstructorConfig& cfg,
                                                    uint64_t seed) {
    RestorationBlockParams p;
    p.attn = AttentionParams::init(cfg.dim, cfg.heads, derive_seed(seed, "rest-attn"));
    p.ln = LayerNormParams::init(cfg.dim);
    p.mlp = MlpParams::init(cfg.dim, cfg.mlp_ratio * cfg.dim, derive_seed(seed, "rest-mlp"));
    return p;
}

RefineBlockParams RefineBlockParams::init(const ReconstructorConfig& cfg, uint64_t seed) {
    RefineBlockParams p;
    p.ln1 = LayerNormParams::init(cfg.dim);
    p.attn = AttentionParams::init(cfg.dim, cfg.heads, derive_seed(seed, "refine-attn"));
    p.ln2 = LayerNormParams::init(cfg.dim);
    p.mlp = MlpParams::init(cfg.dim, cfg.mlp_ratio * cfg.dim, derive_seed(seed, "refine-mlp"));
    return p;
}

ad::Var mlp_forward(const ad::Var& x, const MlpParams& w) {
    ad::Var h = ad::gelu(ad::add_rowvec(ad::matmul(x, w.w1), w.b1));
    return ad::add_rowvec(ad::matmul(h, w.w2), w.b2);
}

ad::Var restoration_attention(const ad::Var& e_prev, const Vec& m_final,
                              const AttentionParams& w) {
    const int dim = static_cast<int>(e_prev.cols());
    w.validate(dim);
    check_binary_mask(m_final, e_prev.rows());
    ad::Var mask = ad::Var::constant(m_final);
    ad::Var q = ad::matmul(e_prev, w.wq);
    ad::Var k_m = ad::mul_colvec(ad::matmul(e_prev, w.wk), mask);
    ad::Var v_m = ad::mul_colvec(ad::matmul(e_prev, w.wv), mask);
    const int dh = dim / w.heads;
    std::vector<ad::Var> heads_out;
    for (int h = 0; h < w.heads; ++h) {
        ad::Var qh = ad::slice_cols(q, static_cast<Eigen::Index>(h) * dh, dh);
        ad::Var kh = ad::slice_cols(k_m, static_cast<Eigen::Index>(h) * dh, dh);
        ad::Var vh = ad::slice_cols(v_m, static_cast<Eigen::Index>(h) * dh, dh);
        ad::Var a = scale_by(ad::relu(ad::matmul(qh, ad::transpose(kh))), w.beta);
        heads_out.push_back(ad::matmul(a, vh));
    }
    return ad::matmul(ad::concat_cols(heads_out), w.wo);
}

ad::Var softmax_attention(const ad::Var& x, const AttentionParams& w) {
    const int dim = static_cast<int>(x.cols());
    w.validate(dim);
    ad::Var q = ad::matmul(x, w.wq);
    ad::Var k = ad::matmul(x, w.wk);
    ad::Var v = ad::matmul(x, w.wv);
    const int dh = dim / w.heads;
    const double temp = 1.0 / std::sqrt(double(dh));
    std::vector<ad::Var> heads_out;
    for (int h = 0; h < w.heads; ++h) {
        ad::Var qh = ad::slice_cols(q, static_cast<Eigen::Index>(h) * dh, dh);
        ad::Var kh = ad::slice_cols(k, static_cast<Eigen::Index>(h) * dh, dh);
        ad::Var vh = ad::slice_cols(v, static_cast<Eigen::Index>(h) * dh, dh);
        ad::Var a = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), temp));
        heads_out.push_back(ad::matmul(a, vh));
    }
    return ad::matmul(ad::concat_cols(heads_out), w.wo);
}

ad::Var restoration_block(const ad::Var& e_prev, const Vec& m_final,
                          const RestorationBlockParams& w, bool keep_first_residual) {
    ad::Var z = restoration_attention(e_prev, m_final, w.attn);
    ad::Var s = keep_first_residual ? ad::add(e_prev, z) : z;
    return ad::add(s, mlp_forward(ad::layer_norm_rows(s, w.ln.gain, w.ln.bias), w.mlp));
}

ad::Var refine_block(const ad::Var& x, const RefineBlockParams& w) {
    ad::Var x1 = ad::add(x, softmax_attention(ad::layer_norm_rows(x, w.ln1.gain, w.ln1.bias),
                                              w.attn));
    return ad::add(x1, mlp_forward(ad::layer_norm_rows(x1, w.ln2.gain, w.ln2.bias), w.mlp));
}

// ---------------------------------------------------------------------------

Unembed Unembed::init(int patch, int channels, int dim, uint64_t seed) {
    check(patch > 0 && channels > 0 && dim > 0, "Unembed: nonpositive dims");
    std::mt19937_64 rng(derive_seed(seed, "unembed"));
    Unembed u;
    u.patch = patch;
    u.channels = channels;
    u.dim = dim;
    const Eigen::Index out = static_cast<Eigen::Index>(patch) * patch * channels;
    u.weight = ad::Var::param(gaussian_mat(dim, out, 1.0 / std::sqrt(double(dim)), rng));
    u.bias = ad::Var::param(Mat::Zero(1, out));
    return u;
}

void Unembed::validate() const {
    check(patch > 0 && channels > 0 && dim > 0, "Unembed: nonpositive dims");
    const Eigen::Index out = static_cast<Eigen::Index>(patch) * patch * channels;
    check(weight.rows() == dim && weight.cols() == out, "Unembed: weight shape");
    check(bias.rows() == 1 && bias.cols() == out, "Unembed: bias shape");
}

ad::Var depth_to_space(const ad::Var& x, int patch, int channels, int token_h, int token_w) {
    check(patch > 0 && channels > 0 && token_h > 0 && token_w > 0,
          "depth_to_space: nonpositive dims");
    check(x.rows() == static_cast<Eigen::Index>(token_h) * token_w,
          "depth_to_space: token count mismatch");
    check(x.cols() == static_cast<Eigen::Index>(patch) * patch * channels,
          "depth_to_space: slot count mismatch");
    const int fw = token_w * patch;
    Mat out(static_cast<Eigen::Index>(token_h) * patch * fw, channels);
    for (int ty = 0; ty < token_h; ++ty)
        for (int tx = 0; tx < token_w; ++tx) {
            const Eigen::Index t = static_cast<Eigen::Index>(ty) * token_w + tx;
            for (int r = 0; r < patch; ++r)
                for (int c = 0; c < patch; ++c)
                    out.row(static_cast<Eigen::Index>(ty * patch + r) * fw + (tx * patch + c)) =
                        x.value().block(t, (static_cast<Eigen::Index>(r) * patch + c) * channels,
                                        1, channels);
        }
    auto px = x.node();
    return ad::detail::make(
        std::move(out), {px}, [px, patch, channels, token_h, token_w](ad::Node& n) {
            const int fw = token_w * patch;
            Mat g = Mat::Zero(px->value.rows(), px->value.cols());
            for (int ty = 0; ty < token_h; ++ty)
                for (int tx = 0; tx < token_w; ++tx) {
                    const Eigen::Index t = static_cast<Eigen::Index>(ty) * token_w + tx;
                    for (int r = 0; r < patch; ++r)
                        for (int c = 0; c < patch; ++c)
                            g.block(t, (static_cast<Eigen::Index>(r) * patch + c) * channels, 1,
                                    channels) =
                                n.grad.row(static_cast<Eigen::Index>(ty * patch + r) * fw +
                                           (tx * patch + c));
                }
            px->accumulate(g);
        });
}

ad::Var unembed_tokens(const ad::Var& tokens, const Unembed& u, int token_h, int token_w) {
    u.validate();
    check(tokens.cols() == u.dim, "unembed_tokens: dim mismatch");
    check(tokens.rows() == static_cast<Eigen::Index>(token_h) * token_w,
          "unembed_tokens: token count mismatch");
    ad::Var proj = ad::add_rowvec(ad::matmul(tokens, u.weight), u.bias);
    return depth_to_space(proj, u.patch, u.channels, token_h, token_w);
}

}  // namespace uranet
