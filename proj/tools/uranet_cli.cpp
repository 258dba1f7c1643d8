// Command-line front end: dataset generation, training, evaluation, single-image
// inference, synthesis previews, and the ablation ladder.

#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uranet/checkpoint.hpp"
#include "uranet/config.hpp"
#include "uranet/dataset.hpp"
#include "uranet/evaluator.hpp"
#include "uranet/fasm.hpp"
#include "uranet/image_io.hpp"
#include "uranet/trainer.hpp"

namespace fs = std::filesystem;
using namespace uranet;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out;
    std::string data_root;
    std::string layout;
    std::string category;
    std::string variant;
    std::string device;
    std::string profile = "toy";
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "Run configuration (JSON)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--profile", o.profile, "Base profile when no --config is given")
        ->check(CLI::IsMember({"toy", "full"}));
    cmd->add_option("--seed", o.seed, "Override the run seed");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--data", o.data_root, "Dataset root directory");
    cmd->add_option("--layout", o.layout, "Dataset layout")
        ->check(CLI::IsMember({"mvtec", "flat"}));
    cmd->add_option("--category", o.category, "Dataset category (mvtec layout)");
    cmd->add_option("--variant", o.variant, "Ablation variant preset")
        ->check(CLI::IsMember({"A", "B", "C", "D", "E", "F"}));
    cmd->add_option("--device", o.device, "Compute device (only cpu is built in)");
}

RunConfig build_config(const CommonOpts& o) {
    RunConfig cfg = !o.config_path.empty() ? load_config(o.config_path)
                    : o.profile == "full" ? full_profile()
                                           : toy_profile();
    if (!o.variant.empty()) apply_variant(cfg, o.variant[0]);
    if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (!o.data_root.empty()) cfg.dataset.root = o.data_root;
    if (!o.layout.empty()) cfg.dataset.layout = o.layout;
    if (!o.category.empty()) cfg.dataset.category = o.category;
    if (!o.device.empty()) cfg.device = o.device;
    return cfg;
}

int cmd_gen_toy(const CommonOpts& o, int n_train, int n_test) {
    check(!o.out.empty(), "gen-toy: --out is required");
    uint64_t seed = o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 0;
    DatasetIndex ds = generate_toy_dataset(o.out, n_train, n_test, seed);
    std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size()
              << " test images under " << o.out << "\n";
    return 0;
}

int cmd_train(const CommonOpts& o, const std::string& resume_path) {
    RunConfig cfg = build_config(o);
    std::string ck_path;
    if (!resume_path.empty()) {
        Trainer trainer(cfg, load_checkpoint(resume_path));
        std::cout << "resuming at step " << trainer.steps_done() << " of "
                  << trainer.total_steps() << "\n";
        ck_path = trainer.run();
    } else {
        Trainer trainer(cfg);
        ck_path = trainer.run();
    }
    std::cout << "checkpoint: " << ck_path << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ck_path) {
    Checkpoint ck = load_checkpoint(ck_path);
    // dataset settings fall back to the ones the checkpoint trained with
    RunConfig trained = parse_config(ck.config_json);
    std::string root = !o.data_root.empty() ? o.data_root : trained.dataset.root;
    std::string layout = !o.layout.empty() ? o.layout : trained.dataset.layout;
    std::string category = !o.category.empty() ? o.category : trained.dataset.category;
    std::string out = !o.out.empty() ? o.out : (fs::path(ck_path).parent_path() / "eval").string();

    DatasetIndex ds = load_dataset(root, layout, category, /*require_masks=*/true);
    EvalResult r = evaluate_checkpoint(ck, ds, out);
    std::cout << "image_auroc " << r.image_auroc << "\n"
              << "pixel_auroc " << r.pixel_auroc << "\n"
              << "f1 " << r.f1 << "  acc " << r.acc << "  threshold " << r.threshold << "\n"
              << "mean_inference_ms " << r.mean_inference_ms << "\n"
              << "results: " << out << "\n";
    return 0;
}

int cmd_infer(const CommonOpts& o, const std::string& ck_path,
              const std::vector<std::string>& images) {
    check(!o.out.empty(), "infer: --out is required");
    int failures = infer_images(load_checkpoint(ck_path), images, o.out);
    std::cout << "scored " << images.size() - failures << " of " << images.size()
              << " images into " << o.out << "\n";
    return failures == 0 ? 0 : 1;
}

// Pixel-space previews of the mask-and-blend synthesis used in training.
int cmd_synthesize(const CommonOpts& o, int count) {
    check(!o.out.empty(), "synthesize: --out is required");
    RunConfig cfg = build_config(o);
    DatasetIndex ds = load_dataset(cfg.dataset.root, cfg.dataset.layout,
                                   cfg.dataset.category, /*require_masks=*/false);
    fs::create_directories(o.out);

    std::vector<std::string> source_paths;
    if (!cfg.synthesis.anomaly_source_dir.empty()) {
        for (const auto& e : fs::directory_iterator(cfg.synthesis.anomaly_source_dir))
            if (e.is_regular_file()) source_paths.push_back(e.path().string());
        std::sort(source_paths.begin(), source_paths.end());
        check(!source_paths.empty(), "synthesize: anomaly source directory is empty");
    }

    const int S = cfg.image_size;
    for (int k = 0; k < count; ++k) {
        const auto& rec = ds.train[static_cast<size_t>(k) % ds.train.size()];
        uint64_t s = derive_seed(cfg.seed, "synth-preview", static_cast<uint64_t>(k));
        Image normal = augment(resize_image(load_image(rec.path), S, S),
                               AugmentationPolicy::normal(derive_seed(s, "aug-n")));
        Image source;
        if (source_paths.empty()) {
            source = make_texture_image(S, S, derive_seed(s, "src"));
        } else {
            std::mt19937_64 rng(derive_seed(s, "src"));
            size_t pick = rng() % source_paths.size();
            source = resize_image(load_image(source_paths[pick]), S, S);
        }
        source = augment(source, AugmentationPolicy::source(derive_seed(s, "aug-a")));

        PerlinParams pp;
        pp.height = S;
        pp.width = S;
        pp.scale_range = cfg.synthesis.perlin_scale;
        pp.threshold = cfg.synthesis.perlin_threshold;
        pp.seed = derive_seed(s, "perlin");
        AnomalyMask mask = perlin_mask(pp);

        Image blend = normal;
        for (int c = 0; c < 3; ++c)
            blend.ch[c] = (1.0 - mask.values.array()) * normal.ch[c].array() +
                          mask.values.array() * source.ch[c].array();

        auto name = [&](const char* tag) {
            return (fs::path(o.out) / ("sample_" + std::to_string(k) + "_" + tag + ".png"))
                .string();
        };
        save_image(normal, name("normal"));
        save_image(source, name("source"));
        save_mask(mask.values, name("mask"));
        save_image(blend, name("synthetic"));
    }
    std::cout << "wrote " << count << " synthesis previews into " << o.out << "\n";
    return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& variants, int n_seeds) {
    RunConfig cfg = build_config(o);
    auto rows = run_ablation(cfg, variants, n_seeds);
    std::cout << "variant  image_auroc  pixel_auroc\n";
    for (const auto& r : rows)
        std::cout << r.variant << "        " << r.image_auroc_mean << "      "
                  << r.pixel_auroc_mean << "\n";
    std::cout << "table: " << (fs::path(cfg.out_dir) / "ablation.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unsupervised anomaly detection via masked-attention feature restoration"};
    app.require_subcommand(1);

    CommonOpts gen_o;
    int n_train = 40, n_test = 10;
    auto* gen = app.add_subcommand("gen-toy", "Generate the synthetic toy dataset");
    add_common(gen, gen_o);
    gen->add_option("--n-train", n_train, "Normal training images");
    gen->add_option("--n-test", n_test, "Test images per class");

    CommonOpts train_o;
    std::string resume_path;
    auto* train = app.add_subcommand("train", "Train a model");
    add_common(train, train_o);
    train->add_option("--resume", resume_path, "Continue from a checkpoint")
        ->check(CLI::ExistingFile);

    CommonOpts eval_o;
    std::string eval_ck;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled test set");
    add_common(eval, eval_o);
    eval->add_option("--checkpoint", eval_ck, "Trained checkpoint")
        ->required()
        ->check(CLI::ExistingFile);

    CommonOpts infer_o;
    std::string infer_ck;
    std::vector<std::string> infer_paths;
    auto* infer = app.add_subcommand("infer", "Score images and write heatmaps");
    add_common(infer, infer_o);
    infer->add_option("--checkpoint", infer_ck, "Trained checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    infer->add_option("images", infer_paths, "Image files to score")->required();

    CommonOpts synth_o;
    int synth_count = 4;
    auto* synth = app.add_subcommand("synthesize", "Write pseudo-anomaly previews");
    add_common(synth, synth_o);
    synth->add_option("--count", synth_count, "Number of previews");

    CommonOpts abl_o;
    std::string abl_variants = "ACDEF";
    int abl_seeds = 3;
    auto* abl = app.add_subcommand("ablate", "Train and evaluate variant presets");
    add_common(abl, abl_o);
    abl->add_option("--variants", abl_variants, "Variant letters to run");
    abl->add_option("--seeds", abl_seeds, "Seeds per variant");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_toy(gen_o, n_train, n_test);
        if (train->parsed()) return cmd_train(train_o, resume_path);
        if (eval->parsed()) return cmd_eval(eval_o, eval_ck);
        if (infer->parsed()) return cmd_infer(infer_o, infer_ck, infer_paths);
        if (synth->parsed()) return cmd_synthesize(synth_o, synth_count);
        if (abl->parsed()) return cmd_ablate(abl_o, abl_variants, abl_seeds);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
