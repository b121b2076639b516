#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stcal/tensor.hpp"

namespace stcal {

struct Dataset {
    TensorPtr images;             // [n, c, h, w], values in [0,1]
    std::vector<int64_t> labels;  // class indices in [0, classes)
    int64_t classes = 0;
    std::string split;

    int64_t size() const { return images ? images->shape[0] : 0; }
    void validate() const;
};

struct SynthSpec {
    int64_t classes = 3;
    int64_t per_class = 200;
    int64_t image_size = 16;
    int64_t channels = 3;
    double noise_sigma = 0.1;
};

// Class-conditional stripe/checker patterns with per-instance jitter and
// additive Gaussian pixel noise, clamped to [0,1]. Deterministic from seeds.
Dataset synth_generate(const SynthSpec& spec, uint64_t data_seed, uint64_t noise_seed,
                       const std::string& split);

// MNIST-style IDX pair (big-endian, magics 0x00000803 / 0x00000801).
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Tensor binary + label file pair written by gen-data.
Dataset load_raw(const std::string& images_path, const std::string& labels_path);

void save_raw(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// Reassigns exactly round(p*n) uniformly chosen instances to uniformly random
// *incorrect* labels.
Dataset corrupt_labels(const Dataset& ds, double p, uint64_t seed);

struct BatchPlan {
    int64_t b = 64;
    uint64_t seed = 0;
    bool drop_last = true;
};

// Seeded per-epoch shuffle; returns index lists.
std::vector<std::vector<int64_t>> make_batches(int64_t n, const BatchPlan& plan, int64_t epoch);

struct Batch {
    TensorPtr images;
    std::vector<int64_t> labels;
};

Batch gather_batch(const Dataset& ds, const std::vector<int64_t>& idx);

}  // namespace stcal
