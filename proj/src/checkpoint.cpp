#include "uranet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "uranet/backbone.hpp"

namespace uranet {

namespace {

constexpr char kMagic[8] = {'U', 'R', 'N', 'E', 'T', 'C', 'K', '1'};

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<char*>(&v), 8); }
void write_i64(std::ostream& out, int64_t v) { out.write(reinterpret_cast<char*>(&v), 8); }

void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_mat(std::ostream& out, const Mat& m) {
    write_u64(out, static_cast<uint64_t>(m.rows()));
    write_u64(out, static_cast<uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double v = m(r, c);
            out.write(reinterpret_cast<char*>(&v), sizeof(v));
        }
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
int64_t read_i64(std::istream& in) {
    int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

std::string read_string(std::istream& in) {
    std::string s(read_u64(in), '\0');
    in.read(s.data(), static_cast<std::streamsize>(s.size()));
    return s;
}

Mat read_mat(std::istream& in) {
    const auto rows = static_cast<Eigen::Index>(read_u64(in));
    const auto cols = static_cast<Eigen::Index>(read_u64(in));
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            double v = 0;
            in.read(reinterpret_cast<char*>(&v), sizeof(v));
            m(r, c) = v;
        }
    return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "save_checkpoint: cannot write " + path);
    out.write(kMagic, 8);
    write_u32(out, ck.version);
    write_string(out, ck.config_json);
    write_i64(out, ck.step);
    write_string(out, ck.rng_state);
    write_u64(out, ck.tensors.size());
    for (const auto& [name, mat] : ck.tensors) {
        write_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_mat(out, mat);
    }
    out.put(ck.has_optimizer ? 1 : 0);
    if (ck.has_optimizer) {
        check(ck.opt_m.size() == ck.tensors.size() && ck.opt_v.size() == ck.tensors.size(),
              "save_checkpoint: optimizer state misaligned");
        write_i64(out, ck.opt_t);
        for (size_t i = 0; i < ck.tensors.size(); ++i) {
            write_mat(out, ck.opt_m[i]);
            write_mat(out, ck.opt_v[i]);
        }
    }
    check(out.good(), "save_checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    check(in.good() && std::memcmp(magic, kMagic, 8) == 0,
          "load_checkpoint: not a checkpoint file: " + path);
    Checkpoint ck;
    ck.version = read_u32(in);
    check(ck.version == 1, "load_checkpoint: unsupported version");
    ck.config_json = read_string(in);
    ck.step = read_i64(in);
    ck.rng_state = read_string(in);
    const uint64_t n = read_u64(in);
    for (uint64_t i = 0; i < n; ++i) {
        const uint32_t len = read_u32(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        Mat m = read_mat(in);
        ck.tensors.emplace_back(std::move(name), std::move(m));
    }
    ck.has_optimizer = in.get() == 1;
    if (ck.has_optimizer) {
        ck.opt_t = read_i64(in);
        for (uint64_t i = 0; i < n; ++i) {
            ck.opt_m.push_back(read_mat(in));
            ck.opt_v.push_back(read_mat(in));
        }
    }
    check(in.good(), "load_checkpoint: truncated file " + path);
    return ck;
}

Checkpoint snapshot(const RunConfig& cfg, const UraNetModel& model, const AdamW* opt,
                    int64_t step, const std::string& rng_state) {
    Checkpoint ck;
    ck.config_json = config_to_json(cfg);
    ck.step = step;
    ck.rng_state = rng_state;
    for (const auto& [name, var] : model.named_params()) ck.tensors.emplace_back(name, var.value());
    if (opt) {
        ck.has_optimizer = true;
        ck.opt_t = opt->steps_taken();
        ck.opt_m = opt->first_moments();
        ck.opt_v = opt->second_moments();
    }
    return ck;
}

ModelConfig model_config_from(const RunConfig& cfg, int fused_channels) {
    ModelConfig mc;
    mc.patch = cfg.head.patch;
    mc.channels = fused_channels;
    mc.feature_h = cfg.feature_size;
    mc.feature_w = cfg.feature_size;
    mc.rec.n_restoration_blocks = cfg.n_restoration;
    mc.rec.n_refine_blocks = cfg.n_refine;
    mc.rec.heads = cfg.heads;
    mc.rec.dim = cfg.dim;
    mc.rec.mlp_ratio = cfg.mlp_ratio;
    mc.rec.use_positional = cfg.use_positional;
    mc.use_ram = cfg.flags.use_ram;
    mc.remove_first_skip = cfg.flags.remove_first_skip;
    return mc;
}

std::pair<RunConfig, UraNetModel> restore_model(const Checkpoint& ck) {
    RunConfig cfg = parse_config(ck.config_json);
    auto backbone = make_backbone(cfg.backbone);
    int fused = 0;
    for (int l : cfg.backbone.levels) fused += backbone->level_channels(l);
    UraNetModel model = UraNetModel::init(model_config_from(cfg, fused), cfg.seed);

    auto params = model.named_params();
    check(params.size() == ck.tensors.size(), "restore_model: tensor count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        check(params[i].first == ck.tensors[i].first,
              "restore_model: tensor name mismatch at " + params[i].first);
        check(params[i].second.rows() == ck.tensors[i].second.rows() &&
                  params[i].second.cols() == ck.tensors[i].second.cols(),
              "restore_model: tensor shape mismatch at " + params[i].first);
        params[i].second.value() = ck.tensors[i].second;
    }
    return {std::move(cfg), std::move(model)};
}

}  // namespace uranet
