#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace uranet {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// 3-channel image, one matrix per channel, values nominally in [0,1].
struct Image {
    std::array<Mat, 3> ch;

    int height() const { return static_cast<int>(ch[0].rows()); }
    int width() const { return static_cast<int>(ch[0].cols()); }

    static Image zeros(int h, int w) {
        Image img;
        for (auto& c : img.ch) c = Mat::Zero(h, w);
        return img;
    }
    static Image constant(int h, int w, double r, double g, double b) {
        Image img;
        img.ch[0] = Mat::Constant(h, w, r);
        img.ch[1] = Mat::Constant(h, w, g);
        img.ch[2] = Mat::Constant(h, w, b);
        return img;
    }
    void validate() const {
        check(height() > 0 && width() > 0, "Image: empty");
        for (const auto& c : ch)
            check(c.rows() == ch[0].rows() && c.cols() == ch[0].cols(),
                  "Image: channel shape mismatch");
    }
};

// Dense h x w x c activation map. Cells are stored row-major as rows of
// `data`: cell (r, col) -> row r*w + col, channels along columns.
struct FeatureMap {
    int h = 0, w = 0, c = 0;
    Mat data;  // (h*w) x c

    static FeatureMap zeros(int h, int w, int c) {
        FeatureMap f;
        f.h = h;
        f.w = w;
        f.c = c;
        f.data = Mat::Zero(static_cast<Eigen::Index>(h) * w, c);
        return f;
    }
    double& at(int r, int col, int chan) { return data(static_cast<Eigen::Index>(r) * w + col, chan); }
    double at(int r, int col, int chan) const { return data(static_cast<Eigen::Index>(r) * w + col, chan); }

    void validate() const {
        check(h > 0 && w > 0 && c > 0, "FeatureMap: nonpositive dims");
        check(data.rows() == static_cast<Eigen::Index>(h) * w && data.cols() == c,
              "FeatureMap: storage shape mismatch");
        check(data.allFinite(), "FeatureMap: non-finite values");
    }
};

// Deterministic per-purpose seed streams: mixes a run seed with a string tag
// and an index so independent consumers never share a stream.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index = 0) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char b : tag) {
        h ^= b;
        h *= 1099511628211ull;
    }
    uint64_t x = seed ^ h ^ (index * 0x9e3779b97f4a7c15ull);
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    x = x ^ (x >> 31);
    return x;
}

}  // namespace uranet
