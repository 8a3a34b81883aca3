#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpnas/arch.hpp"

namespace dpnas {

// Images are stored normalized (byte / 255) as float32, NCHW per sample.
struct ImageDataset {
    std::string name;
    std::string split_tag;  // train | val | test
    Shape3 shape;
    int num_classes = 0;
    int64_t n = 0;
    std::vector<float> images;  // n * shape.flat()
    std::vector<int32_t> labels;

    const float* sample(int64_t i) const { return images.data() + i * shape.flat(); }
    int64_t sample_size() const { return shape.flat(); }
};

struct LoadedDataset {
    std::string name;
    ImageDataset train;
    ImageDataset test;
};

// name: mnist | fashion-mnist | cifar10. Expects the standard IDX files
// (MNIST layout) under <root>/<name>/, or the CIFAR-10 binary batches.
LoadedDataset load_dataset(const std::string& name, const std::string& root);

// Stratified split: per class, round(fraction * count) samples go to the
// validation set. Deterministic in seed; both halves keep original order.
std::pair<ImageDataset, ImageDataset> split_validation(const ImageDataset& ds,
                                                       double fraction,
                                                       uint64_t seed);

// Stratified subsample of about `cap` samples (proportional per class).
// cap <= 0 or cap >= n returns the dataset unchanged.
ImageDataset subsample_stratified(const ImageDataset& ds, int64_t cap,
                                  uint64_t seed);

ImageDataset filter_classes(const ImageDataset& ds,
                            const std::vector<int>& classes);

struct TaskStream {
    std::vector<std::vector<int>> tasks;  // disjoint class-id sets, in order
    const LoadedDataset* source = nullptr;

    ImageDataset task_train(size_t t) const;
    ImageDataset task_test(size_t t) const;
    std::vector<int> classes_up_to(size_t t) const;  // union of tasks[0..t]
};

TaskStream make_task_stream(const LoadedDataset& ds,
                            const std::vector<std::vector<int>>& increments);

// "0,1|2,3|4,5" -> {{0,1},{2,3},{4,5}}
std::vector<std::vector<int>> parse_increments(const std::string& text);

}  // namespace dpnas
