#include "uranet/evaluator.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "uranet/backbone.hpp"
#include "uranet/fasm.hpp"
#include "uranet/image_io.hpp"
#include "uranet/metrics.hpp"
#include "uranet/objectives.hpp"
#include "uranet/trainer.hpp"
#include "uranet/uiapm.hpp"

namespace fs = std::filesystem;

namespace uranet {

namespace {

struct InferenceContext {
    RunConfig cfg;
    UraNetModel model;
    std::shared_ptr<const Backbone> backbone;

    static InferenceContext from(const Checkpoint& ck) {
        auto [cfg, model] = restore_model(ck);
        auto backbone = make_backbone(cfg.backbone);
        return {std::move(cfg), std::move(model), std::move(backbone)};
    }

    // Returns (feature-resolution map pair, anomaly map at out_hw).
    AnomalyMap score_image(const Image& img, uint64_t eps_seed, std::pair<int, int> out_hw) {
        Image sized = resize_image(img, cfg.image_size, cfg.image_size);
        FeatureMap f_in = extract_fused(sized, *backbone, cfg.backbone,
                                        {cfg.feature_size, cfg.feature_size});
        const int L = model.cfg.tokens();
        Vec m_final = Vec::Ones(L);
        if (cfg.flags.use_uiapm && cfg.flags.use_ram) {
            Mat tokens = model.encode(f_in).value();
            ScoreDistribution dist = predict_distribution_plain(tokens, model.head);
            m_final = compute_mask(dist, cfg.head.mc_samples, cfg.head.gamma, eps_seed).m_final;
        }
        FeatureMap f_hat = model.reconstruct_plain(f_in, m_final);
        return anomaly_map(f_in, f_hat, out_hw);
    }
};

Mat resize_mask_nearest(const Mat& mask, int out_h, int out_w) {
    Mat out(out_h, out_w);
    for (int r = 0; r < out_h; ++r)
        for (int c = 0; c < out_w; ++c)
            out(r, c) = mask(static_cast<Eigen::Index>(r) * mask.rows() / out_h,
                             static_cast<Eigen::Index>(c) * mask.cols() / out_w);
    return out;
}

void write_scores_csv(const std::string& path, const std::vector<ImageScoreRow>& rows) {
    std::ofstream out(path);
    check(out.good(), "cannot write score table " + path);
    out.precision(17);
    out << "path,score,label\n";
    for (const auto& r : rows) out << r.path << ',' << r.score << ',' << r.label << '\n';
}

}  // namespace

EvalResult evaluate_checkpoint(const Checkpoint& ck, const DatasetIndex& ds,
                               const std::string& out_dir) {
    auto ctx = InferenceContext::from(ck);
    fs::create_directories(out_dir);

    // inference never synthesizes anomalies; the counter proves it
    reset_synthesize_call_count();

    EvalResult res;
    ScoredSet image_set;
    ScoredSet pixel_set;
    pixel_set.granularity = Granularity::Pixel;
    const int S = ctx.cfg.image_size;
    double total_ms = 0.0;

    for (size_t i = 0; i < ds.test.size(); ++i) {
        const auto& rec = ds.test[i];
        Image img = load_image(rec.path);
        const auto t0 = std::chrono::steady_clock::now();
        AnomalyMap amap = ctx.score_image(img, derive_seed(ctx.cfg.seed, "eval-eps", i), {S, S});
        const auto t1 = std::chrono::steady_clock::now();
        total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();

        image_set.scores.push_back(amap.image_score);
        image_set.labels.push_back(rec.label);
        res.image_scores.push_back({rec.path, amap.image_score, rec.label});

        Mat gt = Mat::Zero(S, S);
        if (rec.label == 1) {
            check(!rec.mask_path.empty(),
                  "evaluate: anomalous test image lacks ground-truth mask: " + rec.path);
            gt = resize_mask_nearest(load_mask(rec.mask_path), S, S);
        }
        for (int r = 0; r < S; ++r)
            for (int c = 0; c < S; ++c) {
                pixel_set.scores.push_back(amap.pixel_scores(r, c));
                pixel_set.labels.push_back(gt(r, c) > 0.5 ? 1 : 0);
            }
    }
    check(synthesize_call_count() == 0, "evaluate: synthesis ran during inference");

    res.image_auroc = auroc(image_set);
    res.pixel_auroc = auroc(pixel_set);
    auto best = optimal_f1_threshold(image_set);
    res.threshold = best.threshold;
    auto af = acc_f1(image_set, best.threshold);
    res.acc = af.acc;
    res.f1 = af.f1;
    res.mean_inference_ms = total_ms / static_cast<double>(ds.test.size());

    write_scores_csv((fs::path(out_dir) / "scores.csv").string(), res.image_scores);
    nlohmann::json j{{"image_auroc", res.image_auroc},
                     {"pixel_auroc", res.pixel_auroc},
                     {"f1", res.f1},
                     {"acc", res.acc},
                     {"threshold", res.threshold},
                     {"decision_rule", "score >= threshold predicts anomalous"},
                     {"n_test", ds.test.size()},
                     {"checkpoint_step", ck.step}};
    std::ofstream out((fs::path(out_dir) / "results.json").string());
    check(out.good(), "evaluate: cannot write results document");
    out << j.dump(2) << "\n";
    // wall-clock timing lives outside the results document so repeated runs
    // with one seed produce identical documents
    std::ofstream tout((fs::path(out_dir) / "timing.json").string());
    tout << nlohmann::json{{"mean_inference_ms", res.mean_inference_ms}}.dump(2) << "\n";
    return res;
}

int infer_images(const Checkpoint& ck, const std::vector<std::string>& image_paths,
                 const std::string& out_dir) {
    auto ctx = InferenceContext::from(ck);
    fs::create_directories(out_dir);
    reset_synthesize_call_count();

    std::vector<ImageScoreRow> rows;
    int failures = 0;
    for (size_t i = 0; i < image_paths.size(); ++i) {
        const std::string& path = image_paths[i];
        Image img;
        try {
            img = load_image(path);
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping unreadable image: " << e.what() << "\n";
            ++failures;
            continue;
        }
        // heatmaps come out at the input file's own resolution
        AnomalyMap amap = ctx.score_image(img, derive_seed(ctx.cfg.seed, "eval-eps", i),
                                          {img.height(), img.width()});
        const std::string stem = fs::path(path).stem().string();
        save_heatmap(amap.pixel_scores, (fs::path(out_dir) / (stem + "_heatmap.png")).string());
        save_matrix_csv(amap.pixel_scores,
                        (fs::path(out_dir) / (stem + "_scores.csv")).string());
        rows.push_back({path, amap.image_score, -1});
    }
    check(synthesize_call_count() == 0, "infer: synthesis ran during inference");
    write_scores_csv((fs::path(out_dir) / "scores.csv").string(), rows);
    return failures;
}

std::vector<AblationRow> run_ablation(const RunConfig& base_cfg, const std::string& variants,
                                      int n_seeds) {
    check(n_seeds >= 1, "run_ablation: need at least one seed");
    check(!variants.empty(), "run_ablation: empty variant list");
    std::vector<AblationRow> rows;
    for (char v : variants) {
        AblationRow row;
        row.variant = v;
        for (int si = 0; si < n_seeds; ++si) {
            RunConfig cfg = base_cfg;
            apply_variant(cfg, v);
            cfg.seed = base_cfg.seed + static_cast<uint64_t>(si);
            cfg.out_dir = (fs::path(base_cfg.out_dir) /
                           (std::string("variant_") + v + "_seed" + std::to_string(cfg.seed)))
                              .string();
            Trainer trainer(cfg);
            const std::string ck_path = trainer.run();
            DatasetIndex ds = load_dataset(cfg.dataset.root, cfg.dataset.layout,
                                           cfg.dataset.category, /*require_masks=*/true);
            EvalResult r = evaluate_checkpoint(load_checkpoint(ck_path), ds, cfg.out_dir);
            row.image_aurocs.push_back(r.image_auroc);
            row.pixel_aurocs.push_back(r.pixel_auroc);
            row.image_auroc_mean += r.image_auroc;
            row.pixel_auroc_mean += r.pixel_auroc;
        }
        row.image_auroc_mean /= n_seeds;
        row.pixel_auroc_mean /= n_seeds;
        rows.push_back(std::move(row));
    }

    fs::create_directories(base_cfg.out_dir);
    std::ofstream out((fs::path(base_cfg.out_dir) / "ablation.csv").string());
    check(out.good(), "run_ablation: cannot write table");
    out << "variant,image_auroc_mean,pixel_auroc_mean,seeds\n";
    out.precision(6);
    for (const auto& r : rows)
        out << r.variant << ',' << r.image_auroc_mean << ',' << r.pixel_auroc_mean << ','
            << n_seeds << '\n';
    return rows;
}

}  // namespace uranet
