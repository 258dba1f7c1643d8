#include "uranet/uiapm.hpp"

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

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

// ---------------------------------------------------------------------------

PatchEmbed PatchEmbed::init(int patch, int channels, int dim, uint64_t seed) {
    check(patch > 0 && channels > 0 && dim > 0, "PatchEmbed: nonpositive dims");
    std::mt19937_64 rng(derive_seed(seed, "patch-embed"));
    PatchEmbed e;
    e.patch = patch;
    e.channels = channels;
    e.dim = dim;
    const Eigen::Index fan_in = static_cast<Eigen::Index>(patch) * patch * channels;
    e.weight = ad::Var::param(gaussian_mat(fan_in, dim, 1.0 / std::sqrt(double(fan_in)), rng));
    e.bias = ad::Var::param(Mat::Zero(1, dim));
    return e;
}

void PatchEmbed::validate() const {
    check(patch > 0 && channels > 0 && dim > 0, "PatchEmbed: nonpositive dims");
    check(weight.rows() == static_cast<Eigen::Index>(patch) * patch * channels &&
              weight.cols() == dim,
          "PatchEmbed: weight shape mismatch");
    check(bias.rows() == 1 && bias.cols() == dim, "PatchEmbed: bias shape mismatch");
}

Mat patch_matrix(const FeatureMap& f, int patch) {
    f.validate();
    check(patch > 0, "patch_matrix: nonpositive patch");
    check(f.h % patch == 0 && f.w % patch == 0, "patch_matrix: dims not divisible by patch");
    const int th = f.h / patch, tw = f.w / patch;
    Mat p(static_cast<Eigen::Index>(th) * tw, static_cast<Eigen::Index>(patch) * patch * f.c);
    for (int ty = 0; ty < th; ++ty)
        for (int tx = 0; tx < tw; ++tx) {
            const Eigen::Index row = static_cast<Eigen::Index>(ty) * tw + tx;
            for (int r = 0; r < patch; ++r)
                for (int c = 0; c < patch; ++c)
                    p.block(row, (static_cast<Eigen::Index>(r) * patch + c) * f.c, 1, f.c) =
                        f.data.row(static_cast<Eigen::Index>(ty * patch + r) * f.w +
                                   (tx * patch + c));
        }
    return p;
}

ad::Var embed_tokens(const FeatureMap& f, const PatchEmbed& embed) {
    embed.validate();
    check(f.c == embed.channels, "embed_tokens: channel mismatch");
    Mat p = patch_matrix(f, embed.patch);
    return ad::add_rowvec(ad::matmul(ad::Var::constant(p), embed.weight), embed.bias);
}

// ---------------------------------------------------------------------------

PerceptionHead PerceptionHead::init(int dim, uint64_t seed) {
    check(dim > 0, "PerceptionHead: nonpositive dim");
    std::mt19937_64 rng(derive_seed(seed, "perception-head"));
    const double s = 1.0 / std::sqrt(double(dim));
    PerceptionHead h;
    h.wu = ad::Var::param(gaussian_mat(dim, 1, s, rng));
    h.bu = ad::Var::param(Mat::Zero(1, 1));
    h.ws = ad::Var::param(gaussian_mat(dim, 1, s, rng));
    h.bs = ad::Var::param(Mat::Zero(1, 1));
    return h;
}

void PerceptionHead::validate(int dim) const {
    check(wu.rows() == dim && wu.cols() == 1 && ws.rows() == dim && ws.cols() == 1,
          "PerceptionHead: weight shape mismatch");
    check(bu.rows() == 1 && bu.cols() == 1 && bs.rows() == 1 && bs.cols() == 1,
          "PerceptionHead: bias shape mismatch");
}

ScoreNodes predict_distribution(const ad::Var& tokens, const PerceptionHead& head) {
    head.validate(static_cast<int>(tokens.cols()));
    ScoreNodes out;
    out.u = ad::add_rowvec(ad::matmul(tokens, head.wu), head.bu);
    out.sigma = ad::softplus(ad::add_rowvec(ad::matmul(tokens, head.ws), head.bs));
    return out;
}

ScoreDistribution predict_distribution_plain(const Mat& tokens, const PerceptionHead& head) {
    head.validate(static_cast<int>(tokens.cols()));
    ScoreDistribution out;
    out.u = (tokens * head.wu.value()).col(0).array() + head.bu.value()(0, 0);
    Vec pre = (tokens * head.ws.value()).col(0).array() + head.bs.value()(0, 0);
    out.sigma = pre.unaryExpr([](double v) { return softplus_scalar(v); });
    return out;
}

ad::Var sample_scores(const ScoreNodes& dist, const Vec& eps) {
    check(eps.size() == dist.u.rows(), "sample_scores: eps length mismatch");
    return ad::add(dist.u, ad::mul(ad::Var::constant(eps), dist.sigma));
}

Vec sample_scores_plain(const ScoreDistribution& dist, const Vec& eps) {
    check(eps.size() == dist.u.size(), "sample_scores: eps length mismatch");
    return dist.u.array() + eps.array() * dist.sigma.array();
}

// ---------------------------------------------------------------------------

namespace {
void check_labels(const Vec& g) {
    check(((g.array() == 0.0) || (g.array() == 1.0)).all(),
          "discriminative_loss: labels must be 0 or 1");
}
}  // namespace

ad::Var discriminative_loss(const ad::Var& z_sa, const Vec& g_sa, const ad::Var& z_n,
                            const Vec& g_n) {
    check(z_sa.rows() == g_sa.size() && z_n.rows() == g_n.size(),
          "discriminative_loss: shape mismatch");
    check_labels(g_sa);
    check_labels(g_n);
    // logit-form BCE: softplus(z) - z*g, numerically stable for any z
    auto branch = [](const ad::Var& z, const Vec& g) {
        return ad::mean(ad::sub(ad::softplus(z), ad::mul(ad::Var::constant(g), z)));
    };
    return ad::add(branch(z_sa, g_sa), branch(z_n, g_n));
}

double discriminative_loss_plain(const Vec& z_sa, const Vec& g_sa, const Vec& z_n,
                                 const Vec& g_n) {
    check(z_sa.size() == g_sa.size() && z_n.size() == g_n.size(),
          "discriminative_loss: shape mismatch");
    check_labels(g_sa);
    check_labels(g_n);
    auto branch = [](const Vec& z, const Vec& g) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i)
            total += softplus_scalar(z(i)) - z(i) * g(i);
        return total / static_cast<double>(z.size());
    };
    return branch(z_sa, g_sa) + branch(z_n, g_n);
}

ad::Var kl_loss(const ScoreNodes& dist) {
    // KL(N(u, s^2) || N(0,1)) = (u^2 + s^2 - 1 - log s^2) / 2
    ad::Var s2 = ad::square(dist.sigma);
    ad::Var per_token =
        ad::add_scalar(ad::sub(ad::add(ad::square(dist.u), s2), ad::log_(s2)), -1.0);
    return ad::scale(ad::mean(per_token), 0.5);
}

double kl_loss_plain(const Vec& u, const Vec& sigma) {
    check(u.size() == sigma.size(), "kl_loss: shape mismatch");
    check((sigma.array() > 0.0).all(), "kl_loss: sigma must be positive");
    double total = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double s2 = sigma(i) * sigma(i);
        total += 0.5 * (u(i) * u(i) + s2 - 1.0 - std::log(s2));
    }
    return total / static_cast<double>(u.size());
}

ad::Var auxiliary_loss(const ad::Var& l_dis, const ad::Var& l_kl, double lambda) {
    check(lambda >= 0.0, "auxiliary_loss: negative lambda");
    return ad::add(l_dis, ad::scale(l_kl, lambda));
}

double auxiliary_loss_plain(double l_dis, double l_kl, double lambda) {
    check(lambda >= 0.0, "auxiliary_loss: negative lambda");
    return l_dis + lambda * l_kl;
}

// ---------------------------------------------------------------------------

std::pair<Vec, Vec> mean_std_from_samples(const Mat& samples) {
    check(samples.rows() >= 1 && samples.cols() >= 1, "mean_std_from_samples: empty");
    Vec mean = samples.colwise().mean();
    Mat centered = samples.rowwise() - mean.transpose();
    Vec var = centered.array().square().colwise().mean();
    return {mean, var.array().sqrt()};
}

std::pair<Vec, Vec> estimate_mean_uncertainty(ScoreDistribution& dist, int m, uint64_t seed,
                                              bool collect_samples) {
    check(m >= 2, "estimate_mean_uncertainty: m must be at least 2");
    const Eigen::Index L = dist.u.size();
    check(dist.sigma.size() == L, "estimate_mean_uncertainty: shape mismatch");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat eps(m, L);
    for (int j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < L; ++i) eps(j, i) = gauss(rng);
    auto [eps_mean, eps_std] = mean_std_from_samples(eps);
    // moments of z = u + eps*sigma factor through the moments of eps, which
    // keeps U and V exact when sigma hits 0
    Vec U = dist.u.array() + dist.sigma.array() * eps_mean.array();
    Vec V = dist.sigma.array() * eps_std.array();
    if (collect_samples) {
        Mat z = eps;
        for (int j = 0; j < m; ++j)
            z.row(j) = dist.u.transpose().array() + z.row(j).array() * dist.sigma.transpose().array();
        dist.samples = std::move(z);
    }
    return {U, V};
}

Vec binarize(const Vec& seq, double gamma, BinarizeDirection direction) {
    check(seq.size() >= 1, "binarize: empty sequence");
    const double mean = seq.mean();
    const double var = (seq.array() - mean).square().mean();
    const double threshold = mean + gamma * std::sqrt(var);
    if (direction == BinarizeDirection::KeepLow)
        return (seq.array() <= threshold).cast<double>();
    return (seq.array() > threshold).cast<double>();
}

Vec fuse_masks(const Vec& m_u, const Vec& m_v) {
    check(m_u.size() == m_v.size(), "fuse_masks: shape mismatch");
    check(((m_u.array() == 0.0) || (m_u.array() == 1.0)).all() &&
              ((m_v.array() == 0.0) || (m_v.array() == 1.0)).all(),
          "fuse_masks: masks must be binary");
    return (m_u.array() * m_v.array()).matrix();
}

namespace {
MaskFusionResult binarize_and_fuse(Vec U, Vec V, double gamma) {
    MaskFusionResult r;
    r.U = std::move(U);
    r.V = std::move(V);
    r.m_u = binarize(r.U, gamma, BinarizeDirection::KeepLow);
    r.m_v = binarize(r.V, gamma, BinarizeDirection::KeepLow);
    r.m_final = fuse_masks(r.m_u, r.m_v);
    return r;
}
}  // namespace

MaskFusionResult compute_mask(ScoreDistribution& dist, int m, double gamma, uint64_t seed) {
    auto [U, V] = estimate_mean_uncertainty(dist, m, seed);
    return binarize_and_fuse(std::move(U), std::move(V), gamma);
}

MaskFusionResult compute_mask_analytic(const Vec& u, const Vec& sigma, double gamma) {
    check(u.size() == sigma.size(), "compute_mask_analytic: shape mismatch");
    return binarize_and_fuse(u, sigma, gamma);
}

}  // namespace uranet
