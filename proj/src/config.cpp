#include "uranet/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace uranet {

using nlohmann::json;

void RunConfig::validate() const {
    backbone.validate();
    check(image_size > 0 && feature_size > 0, "RunConfig: nonpositive sizes");
    check(feature_size % head.patch == 0, "RunConfig: feature size not divisible by patch");
    check(dim > 0 && heads > 0 && dim % heads == 0, "RunConfig: dim/heads mismatch");
    check(n_restoration > 0 && n_refine > 0 && mlp_ratio > 0, "RunConfig: block counts");
    check(head.gamma >= 0 && head.lambda >= 0, "RunConfig: negative gamma/lambda");
    check(head.mc_samples >= 2, "RunConfig: mc_samples must be at least 2");
    check(optimizer.lr > 0 && optimizer.batch_size > 0, "RunConfig: optimizer fields");
    check(optimizer.epochs > 0 || optimizer.max_steps > 0, "RunConfig: empty training budget");
    check(!(flags.use_fasm && flags.use_iasm),
          "RunConfig: use_fasm and use_iasm are mutually exclusive");
    check(synthesis.perlin_threshold > 0 && synthesis.perlin_threshold < 1,
          "RunConfig: perlin threshold outside (0,1)");
    check(device == "cpu", "RunConfig: this build supports only device=cpu");
}

RunConfig full_profile() {
    RunConfig c;
    c.backbone.name = "wide_resnet50_2";
    c.backbone.levels = {0, 1, 2};
    // standard pretrained-backbone input normalization
    c.backbone.norm_mean = {0.485, 0.456, 0.406};
    c.backbone.norm_std = {0.229, 0.224, 0.225};
    return c;
}

RunConfig toy_profile() {
    RunConfig c;
    c.backbone.name = "toy";
    c.backbone.levels = {0, 1, 2};
    // center the unit-range generated images; uncentered inputs give every
    // activation channel a large shared offset, which makes all token
    // vectors nearly collinear and starves both cosine terms and the
    // rectified attention scores of signal
    c.backbone.norm_mean = {0.5, 0.5, 0.5};
    c.backbone.norm_std = {0.5, 0.5, 0.5};
    c.image_size = 64;
    c.feature_size = 16;
    c.dim = 64;
    c.heads = 4;
    c.n_restoration = 1;
    c.n_refine = 1;
    c.head.patch = 4;
    c.synthesis.perlin_scale = {2, 4};
    // sparser masks than the 0.5 default; keeps the pseudo-anomaly tokens a
    // clear minority on the 16x16 grid
    c.synthesis.perlin_threshold = 0.65;
    c.optimizer.batch_size = 8;
    c.optimizer.max_steps = 2000;
    return c;
}

void apply_variant(RunConfig& cfg, char variant) {
    AblationFlags f;
    switch (variant) {
        case 'A': f = {false, false, false, false, false}; break;
        case 'B': f = {false, true, false, false, false}; break;
        case 'C': f = {true, false, false, false, false}; break;
        case 'D': f = {true, false, true, false, false}; break;
        case 'E': f = {true, false, true, true, false}; break;
        case 'F': f = {true, false, true, true, true}; break;
        default: throw std::invalid_argument("apply_variant: variant must be A..F");
    }
    cfg.flags = f;
}

namespace {

json to_json_doc(const RunConfig& c) {
    json j;
    j["dataset"] = {{"root", c.dataset.root},
                    {"layout", c.dataset.layout},
                    {"category", c.dataset.category}};
    j["backbone"] = {{"name", c.backbone.name},
                     {"levels", c.backbone.levels},
                     {"weights_path", c.backbone.weights_path},
                     {"seed", c.backbone.seed},
                     {"norm_mean", c.backbone.norm_mean},
                     {"norm_std", c.backbone.norm_std}};
    j["synthesis"] = {{"perlin_scale", {c.synthesis.perlin_scale.first,
                                        c.synthesis.perlin_scale.second}},
                      {"perlin_threshold", c.synthesis.perlin_threshold},
                      {"anomaly_source_dir", c.synthesis.anomaly_source_dir}};
    j["head"] = {{"patch", c.head.patch},
                 {"gamma", c.head.gamma},
                 {"lambda", c.head.lambda},
                 {"mc_samples", c.head.mc_samples}};
    j["optimizer"] = {{"lr", c.optimizer.lr},
                      {"batch_size", c.optimizer.batch_size},
                      {"epochs", c.optimizer.epochs},
                      {"max_steps", c.optimizer.max_steps},
                      {"weight_decay", c.optimizer.weight_decay}};
    j["flags"] = {{"use_fasm", c.flags.use_fasm},
                  {"use_iasm", c.flags.use_iasm},
                  {"use_uiapm", c.flags.use_uiapm},
                  {"use_ram", c.flags.use_ram},
                  {"remove_first_skip", c.flags.remove_first_skip}};
    j["image_size"] = c.image_size;
    j["feature_size"] = c.feature_size;
    j["dim"] = c.dim;
    j["heads"] = c.heads;
    j["n_restoration"] = c.n_restoration;
    j["n_refine"] = c.n_refine;
    j["mlp_ratio"] = c.mlp_ratio;
    j["use_positional"] = c.use_positional;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["device"] = c.device;
    j["checkpoint_every"] = c.checkpoint_every;
    j["log_every"] = c.log_every;
    return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

void overlay(RunConfig& c, const json& j) {
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        maybe(d, "root", c.dataset.root);
        maybe(d, "layout", c.dataset.layout);
        maybe(d, "category", c.dataset.category);
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        maybe(b, "name", c.backbone.name);
        maybe(b, "levels", c.backbone.levels);
        maybe(b, "weights_path", c.backbone.weights_path);
        maybe(b, "seed", c.backbone.seed);
        maybe(b, "norm_mean", c.backbone.norm_mean);
        maybe(b, "norm_std", c.backbone.norm_std);
    }
    if (j.contains("synthesis")) {
        const auto& s = j.at("synthesis");
        if (s.contains("perlin_scale")) {
            auto v = s.at("perlin_scale").get<std::vector<int>>();
            check(v.size() == 2, "config: perlin_scale needs two entries");
            c.synthesis.perlin_scale = {v[0], v[1]};
        }
        maybe(s, "perlin_threshold", c.synthesis.perlin_threshold);
        maybe(s, "anomaly_source_dir", c.synthesis.anomaly_source_dir);
    }
    if (j.contains("head")) {
        const auto& h = j.at("head");
        maybe(h, "patch", c.head.patch);
        maybe(h, "gamma", c.head.gamma);
        maybe(h, "lambda", c.head.lambda);
        maybe(h, "mc_samples", c.head.mc_samples);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        maybe(o, "lr", c.optimizer.lr);
        maybe(o, "batch_size", c.optimizer.batch_size);
        maybe(o, "epochs", c.optimizer.epochs);
        maybe(o, "max_steps", c.optimizer.max_steps);
        maybe(o, "weight_decay", c.optimizer.weight_decay);
    }
    if (j.contains("flags")) {
        const auto& f = j.at("flags");
        maybe(f, "use_fasm", c.flags.use_fasm);
        maybe(f, "use_iasm", c.flags.use_iasm);
        maybe(f, "use_uiapm", c.flags.use_uiapm);
        maybe(f, "use_ram", c.flags.use_ram);
        maybe(f, "remove_first_skip", c.flags.remove_first_skip);
    }
    if (j.contains("variant")) {
        const auto v = j.at("variant").get<std::string>();
        check(v.size() == 1, "config: variant must be a single letter A..F");
        apply_variant(c, v[0]);
    }
    maybe(j, "image_size", c.image_size);
    maybe(j, "feature_size", c.feature_size);
    maybe(j, "dim", c.dim);
    maybe(j, "heads", c.heads);
    maybe(j, "n_restoration", c.n_restoration);
    maybe(j, "n_refine", c.n_refine);
    maybe(j, "mlp_ratio", c.mlp_ratio);
    maybe(j, "use_positional", c.use_positional);
    maybe(j, "seed", c.seed);
    maybe(j, "out_dir", c.out_dir);
    maybe(j, "device", c.device);
    maybe(j, "checkpoint_every", c.checkpoint_every);
    maybe(j, "log_every", c.log_every);
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json j = json::parse(json_text);
    std::string profile = "full";
    if (j.contains("profile")) profile = j.at("profile").get<std::string>();
    RunConfig c;
    if (profile == "full")
        c = full_profile();
    else if (profile == "toy")
        c = toy_profile();
    else
        throw std::invalid_argument("config: unknown profile " + profile);
    overlay(c, j);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& cfg) {
    json j = to_json_doc(cfg);
    // profile is resolved at parse time; persisted configs are complete
    j["profile"] = "full";
    return j.dump(2);
}

void save_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    check(out.good(), "config: cannot write " + path);
    out << config_to_json(cfg) << "\n";
}

}  // namespace uranet
