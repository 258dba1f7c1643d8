#include "uranet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "uranet/image_io.hpp"

namespace fs = std::filesystem;

namespace uranet {

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<fs::path> list_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

DatasetIndex load_dataset(const std::string& root, const std::string& layout,
                          const std::string& category, bool require_masks) {
    check(layout == "mvtec" || layout == "flat", "load_dataset: layout must be mvtec or flat");
    fs::path base = layout == "mvtec" ? fs::path(root) / category : fs::path(root);
    check(fs::exists(base), "load_dataset: missing dataset directory " + base.string());

    DatasetIndex idx;
    for (const auto& p : list_images(base / "train" / "good"))
        idx.train.push_back({p.string(), 0, ""});
    check(!idx.train.empty(), "load_dataset: empty train split under " + base.string());

    for (const auto& kind_dir : list_subdirs(base / "test")) {
        const std::string kind = kind_dir.filename().string();
        const bool anomalous = kind != "good";
        for (const auto& p : list_images(kind_dir)) {
            SampleRecord rec{p.string(), anomalous ? 1 : 0, ""};
            if (anomalous) {
                fs::path mask = base / "ground_truth" / kind /
                                (p.stem().string() + "_mask.png");
                if (fs::exists(mask))
                    rec.mask_path = mask.string();
                else
                    check(!require_masks,
                          "load_dataset: missing ground-truth mask " + mask.string() +
                              " for " + p.string());
            }
            idx.test.push_back(std::move(rec));
        }
    }
    check(!idx.test.empty(), "load_dataset: empty test split under " + base.string());
    return idx;
}

// ---------------------------------------------------------------------------

Image make_toy_normal_image(int size, uint64_t seed) {
    check(size > 0, "make_toy_normal_image: nonpositive size");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // fixed base pattern; the normal class varies only in phase and a little
    // amplitude so the manifold is learnable from few samples
    const double phase_r = unit(rng) * 2.0 * M_PI;
    const double phase_c = unit(rng) * 2.0 * M_PI;
    const double amp = 0.12 + 0.04 * unit(rng);
    std::normal_distribution<double> noise(0.0, 0.01);
    const std::array<double, 3> base = {0.55, 0.50, 0.45};
    const std::array<double, 3> gain = {1.0, 0.8, 0.6};
    Image img = Image::zeros(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double wave = std::sin(2.0 * M_PI * 2.0 * r / size + phase_r) *
                                std::cos(2.0 * M_PI * 2.0 * c / size + phase_c);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = base[ch] + gain[ch] * amp * wave + noise(rng);
                img.ch[ch](r, c) = std::clamp(v, 0.0, 1.0);
            }
        }
    return img;
}

Image make_texture_image(int h, int w, uint64_t seed) {
    check(h > 0 && w > 0, "make_texture_image: nonpositive size");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Image img = Image::zeros(h, w);
    for (int ch = 0; ch < 3; ++ch) {
        const double fr = 2.0 + 10.0 * unit(rng);
        const double fc = 2.0 + 10.0 * unit(rng);
        const double pr = unit(rng) * 2.0 * M_PI;
        const double pc = unit(rng) * 2.0 * M_PI;
        const double bias = 0.2 + 0.6 * unit(rng);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const double v = bias + 0.45 * std::sin(2.0 * M_PI * fr * r / h + pr) *
                                            std::sin(2.0 * M_PI * fc * c / w + pc);
                img.ch[ch](r, c) = std::clamp(v, 0.0, 1.0);
            }
    }
    return img;
}

std::pair<Image, Mat> make_toy_anomalous_image(int size, uint64_t seed) {
    Image img = make_toy_normal_image(size, derive_seed(seed, "toy-anom-base"));
    std::mt19937_64 rng(derive_seed(seed, "toy-anom-patch"));
    std::uniform_int_distribution<int> n_patches(1, 3);
    Mat mask = Mat::Zero(size, size);
    const int n = n_patches(rng);
    for (int k = 0; k < n; ++k) {
        std::uniform_int_distribution<int> extent(size / 6, size / 3);
        const int ph = extent(rng), pw = extent(rng);
        std::uniform_int_distribution<int> row(0, size - ph), col(0, size - pw);
        const int r0 = row(rng), c0 = col(rng);
        Image tex = make_texture_image(ph, pw, derive_seed(seed, "toy-anom-tex", k));
        for (int r = 0; r < ph; ++r)
            for (int c = 0; c < pw; ++c) {
                for (int ch = 0; ch < 3; ++ch)
                    // invert the background and blend in texture for contrast
                    img.ch[ch](r0 + r, c0 + c) = std::clamp(
                        0.5 * (1.0 - img.ch[ch](r0 + r, c0 + c)) + 0.5 * tex.ch[ch](r, c),
                        0.0, 1.0);
                mask(r0 + r, c0 + c) = 1.0;
            }
    }
    return {std::move(img), std::move(mask)};
}

DatasetIndex generate_toy_dataset(const std::string& out_dir, int n_train, int n_test,
                                  uint64_t seed) {
    check(n_train > 0 && n_test > 0, "generate_toy_dataset: nonpositive counts");
    constexpr int kSize = 64;
    const fs::path base(out_dir);
    fs::create_directories(base / "train" / "good");
    fs::create_directories(base / "test" / "good");
    fs::create_directories(base / "test" / "defect");
    fs::create_directories(base / "ground_truth" / "defect");

    char name[32];
    for (int i = 0; i < n_train; ++i) {
        std::snprintf(name, sizeof(name), "%03d.png", i);
        save_image(make_toy_normal_image(kSize, derive_seed(seed, "toy-train", i)),
                   (base / "train" / "good" / name).string());
    }
    for (int i = 0; i < n_test; ++i) {
        std::snprintf(name, sizeof(name), "%03d.png", i);
        save_image(make_toy_normal_image(kSize, derive_seed(seed, "toy-test-good", i)),
                   (base / "test" / "good" / name).string());
    }
    for (int i = 0; i < n_test; ++i) {
        std::snprintf(name, sizeof(name), "%03d.png", i);
        auto [img, mask] = make_toy_anomalous_image(kSize, derive_seed(seed, "toy-test-bad", i));
        save_image(img, (base / "test" / "defect" / name).string());
        std::snprintf(name, sizeof(name), "%03d_mask.png", i);
        save_mask(mask, (base / "ground_truth" / "defect" / name).string());
    }
    return load_dataset(out_dir, "flat", "", /*require_masks=*/true);
}

}  // namespace uranet
