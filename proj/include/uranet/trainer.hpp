#pragma once

// Training loop: per step, build (F_n, F_sa) pairs, run the head and the
// reconstructor, minimize the joint loss, and emit checkpoints plus an
// append-only JSONL step log. All step randomness derives from
// (cfg.seed, step index), so a resumed run retraces the original one.

#include <memory>
#include <string>
#include <unordered_map>

#include "uranet/backbone.hpp"
#include "uranet/checkpoint.hpp"
#include "uranet/config.hpp"
#include "uranet/dataset.hpp"
#include "uranet/model.hpp"
#include "uranet/objectives.hpp"
#include "uranet/optimizer.hpp"

namespace uranet {

class Trainer {
public:
    explicit Trainer(RunConfig cfg);
    Trainer(RunConfig cfg, const Checkpoint& resume);

    // Runs the remaining budget; returns the final checkpoint path.
    std::string run();

    // Executes exactly one optimization step (exposed for tests).
    LossBreakdown step_once();

    int64_t steps_done() const { return step_; }
    int64_t total_steps() const { return total_steps_; }
    const UraNetModel& model() const { return model_; }
    const RunConfig& config() const { return cfg_; }
    std::string write_checkpoint(const std::string& filename) const;

private:
    void setup();
    const Image& train_image(size_t idx);
    Image anomaly_source(uint64_t seed);

    RunConfig cfg_;
    DatasetIndex data_;
    std::shared_ptr<const Backbone> backbone_;
    int fused_channels_ = 0;
    UraNetModel model_;
    std::unique_ptr<AdamW> opt_;
    int64_t step_ = 0;
    int64_t total_steps_ = 0;
    std::unordered_map<size_t, Image> image_cache_;
    std::vector<std::string> source_paths_;  // anomaly-source files, if configured
};

}  // namespace uranet
