#pragma once

// Run configuration: one nested document per run, with full-scale and
// toy-scale profiles plus the A..F ablation variant presets.

#include <cstdint>
#include <string>
#include <utility>

#include "uranet/backbone.hpp"

namespace uranet {

struct DatasetSpec {
    std::string root;
    std::string layout = "mvtec";  // mvtec | flat
    std::string category;          // unused for flat layout
};

struct SynthesisSpec {
    std::pair<int, int> perlin_scale{2, 8};
    double perlin_threshold = 0.5;
    std::string anomaly_source_dir;  // empty: procedural textures
};

struct HeadSpec {
    int patch = 4;          // K
    double gamma = 1.0;     // binarization scale
    double lambda = 0.001;  // KL weight
    int mc_samples = 16;    // M, test-time draws
};

struct OptimizerSpec {
    double lr = 0.001;
    int batch_size = 8;
    int epochs = 400;
    int max_steps = 0;  // > 0 overrides the epoch budget
    double weight_decay = 0.01;
};

struct AblationFlags {
    bool use_fasm = true;
    bool use_iasm = false;
    bool use_uiapm = true;
    bool use_ram = true;
    bool remove_first_skip = true;
};

struct RunConfig {
    DatasetSpec dataset;
    BackboneSpec backbone;
    SynthesisSpec synthesis;
    HeadSpec head;
    OptimizerSpec optimizer;
    AblationFlags flags;

    int image_size = 256;
    int feature_size = 64;  // H_F = W_F
    int dim = 768;          // D
    int heads = 12;
    int n_restoration = 2;  // N1
    int n_refine = 2;       // N2
    int mlp_ratio = 4;
    bool use_positional = false;

    uint64_t seed = 0;
    std::string out_dir = "runs/default";
    std::string device = "cpu";
    int checkpoint_every = 0;  // steps; 0 = final only
    int log_every = 1;

    void validate() const;
};

// Full-scale settings (WideResNet backbone, 256px images, D=768).
RunConfig full_profile();

// Desk-scale settings: seeded toy backbone, 64px images, 16x16 features,
// D=64, one block per stage.
RunConfig toy_profile();

// Sets the five ablation flags for variants A..F.
void apply_variant(RunConfig& cfg, char variant);

// JSON round trip. Loading starts from the profile named by the optional
// "profile" key ("full" default) and overlays any present keys.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text);
std::string config_to_json(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace uranet
