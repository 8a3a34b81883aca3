#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpnas/arch.hpp"
#include "dpnas/dataset.hpp"
#include "dpnas/linear_head.hpp"
#include "dpnas/qlearn.hpp"

namespace dpnas {

struct SearchConfig {
    int total_architectures = 2500;
    int explore_len = 1500;
    int decay_every = 100;
    uint64_t seed = 0;

    double val_fraction = 0.10;
    uint64_t split_seed = 0;
    std::vector<int> class_subset;  // empty = all classes

    TrainConfig train;  // linear-head hyperparameters
    double alpha = 0.1;
    double gamma = 1.0;
    double q_default = 0.5;
    int replay_batch = 64;

    GrammarLimits limits;
    // Proxy sizes used for per-architecture rewards; 0 = full split.
    int64_t search_train_cap = 0;
    int64_t search_val_cap = 0;
    int embed_batch = 256;
    int moving_avg_window = 50;
};

// Scales the paper-scale schedule down to 12% (300 architectures,
// exploration ending at 60% of the run, ten decay steps) and bounds
// per-architecture cost so a full search fits in a single-core CPU budget.
void apply_desk_preset(SearchConfig& cfg);

struct SearchLogEntry {
    int64_t index = 0;
    std::string spec_str;
    uint64_t weight_seed = 0;
    double val_accuracy = 0.0;
    double eps = 0.0;
    double wall_time = 0.0;  // seconds
    long long flat_dim = 0;
};

struct SearchResult {
    std::vector<SearchLogEntry> log;
    QTable qtable{0.5};
    std::vector<ReplayRecord> buffer;
};

// The train/val pair that rewards are computed on: optional class
// restriction, stratified 10% validation split, optional proxy subsampling.
struct SearchData {
    ImageDataset train;
    ImageDataset val;
};
SearchData prepare_search_data(const LoadedDataset& ds,
                               const SearchConfig& cfg);

// Runs (or resumes) the sample -> embed -> fit head -> q-update loop,
// writing search_log.jsonl, replay_log.jsonl, qtable.ckpt and
// rolling_reward.csv under out_dir.
SearchResult run_search(const LoadedDataset& ds, const SearchConfig& cfg,
                        const std::string& out_dir);

// Reload a finished or partial search from its output directory,
// reconstructing the q-table by replaying the logged records.
SearchResult load_search(const std::string& out_dir, const SearchConfig& cfg);

std::vector<double> moving_average(const std::vector<double>& rewards,
                                   int window);

// Indices of the top-k log entries by reward; ties go to the earlier index.
std::vector<size_t> select_top(const std::vector<SearchLogEntry>& log,
                               size_t k);

struct AblationRow {
    std::string spec_str;
    double search_reward = 0.0;
    std::vector<double> test_accs;  // one per repeat, seed order
    double median = 0, q1 = 0, q3 = 0, lo = 0, hi = 0;
};

// Re-trains each spec with `repeats` fresh weight seeds on the search
// train split and reports the spread of test accuracy.
std::vector<AblationRow> reinit_ablation(
    const LoadedDataset& ds,
    const std::vector<std::pair<std::string, double>>& specs, int repeats,
    const SearchConfig& cfg);

}  // namespace dpnas
