#pragma once

// PNG image and mask I/O plus heatmap rendering.

#include <string>

#include "uranet/common.hpp"

namespace uranet {

// Loads an 8-bit image as RGB in [0,1]; grayscale files are replicated
// across channels.
Image load_image(const std::string& path);

void save_image(const Image& img, const std::string& path);

// Loads a mask image; any nonzero pixel maps to 1.
Mat load_mask(const std::string& path);

void save_mask(const Mat& mask, const std::string& path);

// Min-max normalizes the score matrix and renders it through a blue-to-red
// color ramp.
void save_heatmap(const Mat& scores, const std::string& path);

// Raw matrix dump, one CSV row per image row.
void save_matrix_csv(const Mat& m, const std::string& path);

}  // namespace uranet
