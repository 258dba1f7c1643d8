#pragma once

// Versioned binary checkpoints: config snapshot, model tensors, optimizer
// moments, and the training RNG stream. Round trips are bitwise exact.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uranet/common.hpp"
#include "uranet/config.hpp"
#include "uranet/model.hpp"
#include "uranet/optimizer.hpp"

namespace uranet {

struct Checkpoint {
    uint32_t version = 1;
    std::string config_json;
    int64_t step = 0;
    std::string rng_state;  // serialized mt19937_64 stream, empty if unused
    std::vector<std::pair<std::string, Mat>> tensors;
    bool has_optimizer = false;
    int64_t opt_t = 0;
    std::vector<Mat> opt_m, opt_v;  // aligned with tensors
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Captures the current model/optimizer state.
Checkpoint snapshot(const RunConfig& cfg, const UraNetModel& model, const AdamW* opt,
                    int64_t step, const std::string& rng_state);

// Builds the model described by the embedded config and fills its tensors.
// Returns the parsed config alongside the model.
std::pair<RunConfig, UraNetModel> restore_model(const Checkpoint& ck);

// Model geometry derived from a run config (single source of truth for
// trainer, evaluator, and restore).
ModelConfig model_config_from(const RunConfig& cfg, int fused_channels);

}  // namespace uranet
