#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpnas/arch.hpp"
#include "dpnas/dataset_fwd.hpp"

namespace dpnas {

// A deep prior: an architecture plus the materialized random Gaussian
// weights (He fan-in scaling, bias-free) and the seed that produced them.
struct DeepPrior {
    ArchitectureSpec spec;
    uint64_t seed = 0;
    // conv_weights[i] belongs to layers[conv_layer_index[i]]; shape
    // (out, in, k, k), row-major.
    std::vector<std::vector<float>> conv_weights;
    // skip_weights[j] is the 1x1 projection for the j-th skip opener,
    // shape (out_channels of closing conv, in channels at opener input).
    std::vector<std::vector<float>> skip_weights;

    uint64_t fingerprint() const;
};

DeepPrior init_weights(const ArchitectureSpec& spec, uint64_t seed);

// Fixed forward pass over an NCHW batch: conv (same-style zero padding,
// cross-correlation) -> skip-sum -> ReLU, pooling unpadded. Returns the
// flattened (batch x flat_dim) features.
std::vector<float> forward(const DeepPrior& prior, const float* batch,
                           int batch_n);

struct EmbeddedDataset {
    int64_t n = 0;
    int64_t d = 0;
    std::vector<float> features;  // n x d row-major
    std::vector<int32_t> labels;
    uint64_t prior_fingerprint = 0;
};

EmbeddedDataset embed_dataset(const DeepPrior& prior, const ImageDataset& ds,
                              int batch_size = 256);

// On-disk embedding cache; load returns false on missing file or
// fingerprint mismatch.
void save_embedding(const EmbeddedDataset& e, const std::string& path);
bool load_embedding(const std::string& path, uint64_t expected_fingerprint,
                    EmbeddedDataset& out);

}  // namespace dpnas
