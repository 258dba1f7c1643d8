#pragma once

// Dataset indexing (mvtec-style and flat directory layouts) and the
// procedurally generated desk-scale dataset.

#include <cstdint>
#include <string>
#include <vector>

#include "uranet/common.hpp"

namespace uranet {

struct SampleRecord {
    std::string path;
    int label = 0;          // 1 = anomalous
    std::string mask_path;  // empty for normal samples
};

struct DatasetIndex {
    std::vector<SampleRecord> train;  // normal only
    std::vector<SampleRecord> test;
};

// mvtec layout: root/category/{train/good, test/<kind>, ground_truth/<kind>}
// with masks named <stem>_mask.png; flat layout is identical without the
// category level. Listing order is lexicographic. With require_masks set,
// every anomalous test image must have a mask on disk.
DatasetIndex load_dataset(const std::string& root, const std::string& layout,
                          const std::string& category, bool require_masks);

// Smooth sinusoidal texture with per-image jitter; the toy normal class.
Image make_toy_normal_image(int size, uint64_t seed);

// High-contrast random texture used as FASM anomaly-source material.
Image make_texture_image(int h, int w, uint64_t seed);

// Pastes 1..3 contrasting rectangles into a normal image; mask marks the
// pasted pixels exactly.
std::pair<Image, Mat> make_toy_anomalous_image(int size, uint64_t seed);

// Writes n_train normals plus n_test normal and n_test anomalous test images
// in mvtec layout under out_dir, then reloads them through load_dataset.
DatasetIndex generate_toy_dataset(const std::string& out_dir, int n_train, int n_test,
                                  uint64_t seed);

}  // namespace uranet
