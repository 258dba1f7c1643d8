#include "uranet/image_io.hpp"

#include <algorithm>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace uranet {

Image load_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    check(!bgr.empty(), "load_image: cannot read " + path);
    Image img = Image::zeros(bgr.rows, bgr.cols);
    for (int r = 0; r < bgr.rows; ++r)
        for (int c = 0; c < bgr.cols; ++c) {
            const auto& px = bgr.at<cv::Vec3b>(r, c);
            img.ch[0](r, c) = px[2] / 255.0;
            img.ch[1](r, c) = px[1] / 255.0;
            img.ch[2](r, c) = px[0] / 255.0;
        }
    return img;
}

void save_image(const Image& img, const std::string& path) {
    img.validate();
    cv::Mat bgr(img.height(), img.width(), CV_8UC3);
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) {
            auto& px = bgr.at<cv::Vec3b>(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(img.ch[ch](r, c), 0.0, 1.0);
                px[2 - ch] = static_cast<uchar>(std::lround(v * 255.0));
            }
        }
    check(cv::imwrite(path, bgr), "save_image: cannot write " + path);
}

Mat load_mask(const std::string& path) {
    cv::Mat gray = cv::imread(path, cv::IMREAD_GRAYSCALE);
    check(!gray.empty(), "load_mask: cannot read " + path);
    Mat mask(gray.rows, gray.cols);
    for (int r = 0; r < gray.rows; ++r)
        for (int c = 0; c < gray.cols; ++c)
            mask(r, c) = gray.at<uchar>(r, c) > 0 ? 1.0 : 0.0;
    return mask;
}

void save_mask(const Mat& mask, const std::string& path) {
    cv::Mat gray(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), CV_8UC1);
    for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c)
            gray.at<uchar>(r, c) = mask(r, c) > 0.5 ? 255 : 0;
    check(cv::imwrite(path, gray), "save_mask: cannot write " + path);
}

void save_heatmap(const Mat& scores, const std::string& path) {
    check(scores.size() > 0, "save_heatmap: empty matrix");
    const double lo = scores.minCoeff(), hi = scores.maxCoeff();
    const double span = hi - lo;
    Image img = Image::zeros(static_cast<int>(scores.rows()), static_cast<int>(scores.cols()));
    for (int r = 0; r < scores.rows(); ++r)
        for (int c = 0; c < scores.cols(); ++c) {
            const double t = span > 0 ? (scores(r, c) - lo) / span : 0.0;
            // blue (cold) through green to red (hot)
            img.ch[0](r, c) = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
            img.ch[1](r, c) = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
            img.ch[2](r, c) = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
        }
    save_image(img, path);
}

void save_matrix_csv(const Mat& m, const std::string& path) {
    std::ofstream out(path);
    check(out.good(), "save_matrix_csv: cannot write " + path);
    out.precision(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            out << m(r, c);
        }
        out << '\n';
    }
}

}  // namespace uranet
