#pragma once

// Inference-time paths: metric evaluation over a test split, single-image
// inference with heatmap emission, and the ablation ladder driver.

#include <string>
#include <vector>

#include "uranet/checkpoint.hpp"
#include "uranet/dataset.hpp"

namespace uranet {

struct ImageScoreRow {
    std::string path;
    double score = 0.0;
    int label = -1;  // -1 = unknown (inference on unlabeled images)
};

struct EvalResult {
    double image_auroc = 0.0;
    double pixel_auroc = 0.0;
    double f1 = 0.0;
    double acc = 0.0;
    double threshold = 0.0;
    double mean_inference_ms = 0.0;
    std::vector<ImageScoreRow> image_scores;
};

// Runs the no-synthesis inference path over ds.test, writes results.json and
// scores.csv under out_dir, and asserts the synthesis counter stayed at zero.
EvalResult evaluate_checkpoint(const Checkpoint& ck, const DatasetIndex& ds,
                               const std::string& out_dir);

// Writes, per readable image: <stem>_heatmap.png and <stem>_scores.csv at the
// original resolution, plus a row in scores.csv. Returns the number of
// unreadable inputs (callers turn nonzero into a failing exit code).
int infer_images(const Checkpoint& ck, const std::vector<std::string>& image_paths,
                 const std::string& out_dir);

struct AblationRow {
    char variant = 'A';
    double image_auroc_mean = 0.0;
    double pixel_auroc_mean = 0.0;
    std::vector<double> image_aurocs;  // per seed
    std::vector<double> pixel_aurocs;
};

// Trains and evaluates each variant over seeds cfg.seed .. cfg.seed+n_seeds-1
// (shared across variants) and writes ablation.csv under cfg.out_dir.
std::vector<AblationRow> run_ablation(const RunConfig& base_cfg, const std::string& variants,
                                      int n_seeds);

}  // namespace uranet
