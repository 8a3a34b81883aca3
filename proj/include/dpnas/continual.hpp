#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpnas/dataset.hpp"
#include "dpnas/linear_head.hpp"
#include "dpnas/prior.hpp"

namespace dpnas {

struct CoreSetConfig {
    enum class Policy { PerTask, TotalBudget };
    Policy policy = Policy::PerTask;
    int64_t amount = 10;  // per-task count, or the total budget
    uint64_t seed = 0;
};

// Rehearsal memory; entries are projected embeddings, never raw images.
struct CoreSet {
    int64_t dim = 0;
    std::vector<float> features;
    std::vector<int32_t> labels;

    int64_t size() const { return int64_t(labels.size()); }
    void append(const float* feat, int32_t label);
};

struct IncrementRow {
    int increment = 0;
    std::vector<int> seen_classes;
    double accuracy = 0.0;
    int64_t core_size = 0;
};

struct ContinualResult {
    std::string scenario;  // multi_head | single_head | accumulate
    std::string core_desc;
    std::vector<IncrementRow> rows;
    // Mean per-task accuracy for multi-head; the final all-seen-classes
    // accuracy for the single-head scenarios.
    double final_average = 0.0;
    std::vector<LinearClassifier> heads;  // multi-head only

    void write_csv(const std::string& path) const;
};

// One independent head per task, task id known at test time. The prior is
// never updated, so earlier heads cannot degrade.
ContinualResult run_multi_head(const DeepPrior& prior, const TaskStream& stream,
                               const TrainConfig& cfg, int embed_batch = 256);

// One growing head over all classes seen so far; each increment trains on
// the new task's embeddings interleaved with the core set, then refreshes
// the core set by uniform sampling.
ContinualResult run_single_head(const DeepPrior& prior,
                                const TaskStream& stream,
                                const TrainConfig& cfg,
                                const CoreSetConfig& core_cfg,
                                int embed_batch = 256);

// Single-head flow where the "core set" keeps every embedding seen so far.
ContinualResult run_accumulation_baseline(const DeepPrior& prior,
                                          const TaskStream& stream,
                                          const TrainConfig& cfg,
                                          int embed_batch = 256);

}  // namespace dpnas
