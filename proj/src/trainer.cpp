#include "uranet/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "uranet/fasm.hpp"
#include "uranet/image_io.hpp"
#include "uranet/uiapm.hpp"

namespace fs = std::filesystem;

namespace uranet {

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)) { setup(); }

Trainer::Trainer(RunConfig cfg, const Checkpoint& resume) : cfg_(std::move(cfg)) {
    setup();
    auto params = model_.named_params();
    check(params.size() == resume.tensors.size(), "resume: tensor count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        check(params[i].first == resume.tensors[i].first, "resume: tensor name mismatch");
        params[i].second.value() = resume.tensors[i].second;
    }
    check(resume.has_optimizer, "resume: checkpoint lacks optimizer state");
    opt_->restore_state(resume.opt_t, resume.opt_m, resume.opt_v);
    step_ = resume.step;
}

void Trainer::setup() {
    cfg_.validate();
    data_ = load_dataset(cfg_.dataset.root, cfg_.dataset.layout, cfg_.dataset.category,
                         /*require_masks=*/false);
    backbone_ = make_backbone(cfg_.backbone);
    fused_channels_ = 0;
    for (int l : cfg_.backbone.levels) fused_channels_ += backbone_->level_channels(l);
    model_ = UraNetModel::init(model_config_from(cfg_, fused_channels_), cfg_.seed);

    std::vector<ad::Var> params;
    for (auto& [name, var] : model_.named_params()) params.push_back(var);
    AdamWConfig oc;
    oc.lr = cfg_.optimizer.lr;
    oc.weight_decay = cfg_.optimizer.weight_decay;
    opt_ = std::make_unique<AdamW>(std::move(params), oc);

    if (cfg_.optimizer.max_steps > 0) {
        total_steps_ = cfg_.optimizer.max_steps;
    } else {
        const auto per_epoch = static_cast<int64_t>(
            (data_.train.size() + cfg_.optimizer.batch_size - 1) / cfg_.optimizer.batch_size);
        total_steps_ = per_epoch * cfg_.optimizer.epochs;
    }

    if (!cfg_.synthesis.anomaly_source_dir.empty()) {
        for (const auto& e : fs::directory_iterator(cfg_.synthesis.anomaly_source_dir))
            if (e.is_regular_file()) source_paths_.push_back(e.path().string());
        std::sort(source_paths_.begin(), source_paths_.end());
        check(!source_paths_.empty(),
              "trainer: anomaly_source_dir has no files: " + cfg_.synthesis.anomaly_source_dir);
    }
}

const Image& Trainer::train_image(size_t idx) {
    auto it = image_cache_.find(idx);
    if (it == image_cache_.end()) {
        Image img = resize_image(load_image(data_.train[idx].path), cfg_.image_size,
                                 cfg_.image_size);
        it = image_cache_.emplace(idx, std::move(img)).first;
    }
    return it->second;
}

Image Trainer::anomaly_source(uint64_t seed) {
    if (source_paths_.empty())
        return make_texture_image(cfg_.image_size, cfg_.image_size, seed);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick(0, source_paths_.size() - 1);
    return resize_image(load_image(source_paths_[pick(rng)]), cfg_.image_size, cfg_.image_size);
}

LossBreakdown Trainer::step_once() {
    const int64_t step = step_ + 1;
    const uint64_t s = derive_seed(cfg_.seed, "step", static_cast<uint64_t>(step));
    std::mt19937_64 batch_rng(derive_seed(s, "batch"));
    std::uniform_int_distribution<size_t> pick(0, data_.train.size() - 1);
    const int B = cfg_.optimizer.batch_size;
    const int K = cfg_.head.patch;
    const int L = model_.cfg.tokens();
    const std::pair<int, int> fhw{cfg_.feature_size, cfg_.feature_size};

    ad::Var sum_rec = ad::Var::scalar(0.0), sum_dis = ad::Var::scalar(0.0),
            sum_kl = ad::Var::scalar(0.0);
    ad::Var sum_mse = ad::Var::scalar(0.0), sum_lcos = ad::Var::scalar(0.0),
            sum_gcos = ad::Var::scalar(0.0);
    bool any_aux = false;

    for (int i = 0; i < B; ++i) {
        const Image& raw = train_image(pick(batch_rng));
        Image normal = augment(raw, AugmentationPolicy::normal(derive_seed(s, "aug-n", i)));
        FeatureMap f_n = extract_fused(normal, *backbone_, cfg_.backbone, fhw);

        FeatureMap f_in;
        Vec g_sa = Vec::Zero(L);
        if (cfg_.flags.use_fasm || cfg_.flags.use_iasm) {
            Image source = augment(anomaly_source(derive_seed(s, "src", i)),
                                   AugmentationPolicy::source(derive_seed(s, "aug-a", i)));
            PerlinParams pp;
            pp.height = cfg_.feature_size;
            pp.width = cfg_.feature_size;
            pp.scale_range = cfg_.synthesis.perlin_scale;
            pp.threshold = cfg_.synthesis.perlin_threshold;
            pp.seed = derive_seed(s, "perlin", i);
            pp.fallback_block = K;
            AnomalyMask m_a = perlin_mask(pp);
            if (cfg_.flags.use_fasm) {
                FeatureMap f_src = extract_fused(source, *backbone_, cfg_.backbone, fhw);
                f_in = synthesize_features(f_n, f_src, m_a);
            } else {
                // image-level paste under the same mask upsampled to pixels
                const int f = cfg_.image_size / cfg_.feature_size;
                Image pasted = normal;
                for (int r = 0; r < cfg_.image_size; ++r)
                    for (int c = 0; c < cfg_.image_size; ++c)
                        if (m_a.values(r / f, c / f) == 1.0)
                            for (int ch = 0; ch < 3; ++ch)
                                pasted.ch[ch](r, c) = source.ch[ch](r, c);
                f_in = extract_fused(pasted, *backbone_, cfg_.backbone, fhw);
            }
            g_sa = token_ground_truth(m_a, K);
        } else {
            f_in = f_n;
        }

        ad::Var tokens_in = model_.encode(f_in);
        Vec m_final = Vec::Ones(L);
        if (cfg_.flags.use_uiapm) {
            ScoreNodes dist_sa = predict_distribution(tokens_in, model_.head);
            ad::Var tokens_n = model_.encode(f_n);
            ScoreNodes dist_n = predict_distribution(tokens_n, model_.head);

            std::mt19937_64 eps_rng(derive_seed(s, "eps", i));
            std::normal_distribution<double> gauss(0.0, 1.0);
            Vec eps_sa(L), eps_n(L);
            for (int t = 0; t < L; ++t) eps_sa(t) = gauss(eps_rng);
            for (int t = 0; t < L; ++t) eps_n(t) = gauss(eps_rng);

            ad::Var z_sa = sample_scores(dist_sa, eps_sa);
            ad::Var z_n = sample_scores(dist_n, eps_n);
            sum_dis = ad::add(sum_dis, discriminative_loss(z_sa, g_sa, z_n, Vec::Zero(L)));
            sum_kl = ad::add(sum_kl,
                             ad::scale(ad::add(kl_loss(dist_sa), kl_loss(dist_n)), 0.5));
            any_aux = true;

            // the training-time mask comes from analytic moments and carries
            // no gradient
            m_final = compute_mask_analytic(dist_sa.u.value(), dist_sa.sigma.value(),
                                            cfg_.head.gamma)
                          .m_final;
        }

        ad::Var f_hat = model_.restore_tokens(tokens_in, m_final);
        ad::Var target = ad::Var::constant(f_n.data);
        ad::Var mse = local_mse_loss(target, f_hat);
        ad::Var lcos = local_cos_loss(target, f_hat);
        ad::Var gcos = global_cos_loss(target, f_hat);
        sum_mse = ad::add(sum_mse, mse);
        sum_lcos = ad::add(sum_lcos, lcos);
        sum_gcos = ad::add(sum_gcos, gcos);
        sum_rec = ad::add(sum_rec, ad::add(ad::add(mse, lcos), gcos));
    }

    const double inv_b = 1.0 / B;
    ad::Var l_rec = ad::scale(sum_rec, inv_b);
    ad::Var l_dis = ad::scale(sum_dis, inv_b);
    ad::Var l_kl = ad::scale(sum_kl, inv_b);
    ad::Var l_aux = auxiliary_loss(l_dis, l_kl, cfg_.head.lambda);
    ad::Var l_final = joint_loss(l_rec, l_aux);

    LossBreakdown out;
    out.l_local_mse = sum_mse.item() * inv_b;
    out.l_local_cos = sum_lcos.item() * inv_b;
    out.l_global = sum_gcos.item() * inv_b;
    out.l_rec = l_rec.item();
    out.l_dis = any_aux ? l_dis.item() : 0.0;
    out.l_kl = any_aux ? l_kl.item() : 0.0;
    out.l_aux = l_aux.item();
    out.l_final = l_final.item();

    if (!std::isfinite(out.l_final)) {
        throw std::runtime_error("training aborted: non-finite loss at step " +
                                 std::to_string(step) + " (step seed " + std::to_string(s) +
                                 ")");
    }

    opt_->zero_grad();
    ad::backward(l_final);
    opt_->step();
    step_ = step;
    return out;
}

std::string Trainer::write_checkpoint(const std::string& filename) const {
    fs::create_directories(cfg_.out_dir);
    const std::string path = (fs::path(cfg_.out_dir) / filename).string();
    save_checkpoint(snapshot(cfg_, model_, opt_.get(), step_, ""), path);
    return path;
}

std::string Trainer::run() {
    fs::create_directories(cfg_.out_dir);
    save_config(cfg_, (fs::path(cfg_.out_dir) / "config.json").string());
    std::ofstream log((fs::path(cfg_.out_dir) / "train_log.jsonl").string(), std::ios::app);
    check(log.good(), "trainer: cannot open step log");

    while (step_ < total_steps_) {
        LossBreakdown l;
        try {
            l = step_once();
        } catch (const std::exception& e) {
            nlohmann::json j{{"step", step_ + 1}, {"event", "abort"}, {"reason", e.what()}};
            log << j.dump() << "\n" << std::flush;
            throw;
        }
        if (cfg_.log_every > 0 && step_ % cfg_.log_every == 0) {
            nlohmann::json j{{"step", step_},
                             {"l_final", l.l_final},
                             {"l_rec", l.l_rec},
                             {"l_local_mse", l.l_local_mse},
                             {"l_local_cos", l.l_local_cos},
                             {"l_global", l.l_global},
                             {"l_dis", l.l_dis},
                             {"l_kl", l.l_kl},
                             {"l_aux", l.l_aux}};
            log << j.dump() << "\n";
        }
        if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 &&
            step_ < total_steps_)
            write_checkpoint("checkpoint_step" + std::to_string(step_) + ".bin");
    }
    log << std::flush;
    return write_checkpoint("checkpoint.bin");
}

}  // namespace uranet
