#include "dpnas/continual.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "dpnas/common.hpp"

namespace dpnas {

void CoreSet::append(const float* feat, int32_t label) {
    features.insert(features.end(), feat, feat + dim);
    labels.push_back(label);
}

namespace {

FeatureView view(const EmbeddedDataset& e) {
    return {e.features.data(), e.labels.data(), e.n, e.d};
}

std::vector<int32_t> to_ids(const std::vector<int>& classes) {
    return {classes.begin(), classes.end()};
}

ImageDataset union_test(const TaskStream& stream, size_t upto) {
    return filter_classes(stream.source->test, stream.classes_up_to(upto));
}

// picks `count` row indices uniformly without replacement
std::vector<int64_t> sample_rows(int64_t n, int64_t count,
                                 std::mt19937_64& rng) {
    std::vector<int64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(count, n));
    return idx;
}

void per_task_refresh(CoreSet& core, const EmbeddedDataset& task_embed,
                      int64_t amount, uint64_t seed, int increment) {
    std::mt19937_64 rng(mix_seed(seed, 0xC0DE, uint64_t(increment)));
    for (int64_t r : sample_rows(task_embed.n, amount, rng))
        core.append(task_embed.features.data() + r * task_embed.d,
                    task_embed.labels[r]);
}

// Equal per-class quotas under a total budget: previously stored classes
// are down-sampled uniformly, new classes sampled from the task embedding.
void total_budget_refresh(CoreSet& core, const EmbeddedDataset& task_embed,
                          const std::vector<int>& seen_classes,
                          int64_t budget, uint64_t seed, int increment) {
    const int64_t n_classes = int64_t(seen_classes.size());
    if (budget < n_classes)
        throw ValidationError(
            "core budget " + std::to_string(budget) + " cannot hold " +
            std::to_string(n_classes) + " classes (need >= 1 each)");

    const int64_t base = budget / n_classes;
    const int64_t extra = budget % n_classes;

    CoreSet next;
    next.dim = core.dim;
    for (int64_t ci = 0; ci < n_classes; ++ci) {
        const int32_t cls = seen_classes[size_t(ci)];
        const int64_t quota = base + (ci < extra ? 1 : 0);
        std::mt19937_64 rng(mix_seed(seed, uint64_t(increment), uint64_t(cls)));

        // rows of this class, in the existing core first, else the task
        std::vector<int64_t> stored;
        for (int64_t i = 0; i < core.size(); ++i)
            if (core.labels[i] == cls) stored.push_back(i);
        if (!stored.empty()) {
            for (int64_t r : sample_rows(int64_t(stored.size()),
                                         std::min(quota, int64_t(stored.size())),
                                         rng))
                next.append(core.features.data() + stored[r] * core.dim,
                            core.labels[stored[r]]);
        } else {
            std::vector<int64_t> rows;
            for (int64_t i = 0; i < task_embed.n; ++i)
                if (task_embed.labels[i] == cls) rows.push_back(i);
            for (int64_t r :
                 sample_rows(int64_t(rows.size()),
                             std::min(quota, int64_t(rows.size())), rng))
                next.append(task_embed.features.data() + rows[r] * task_embed.d,
                            task_embed.labels[rows[r]]);
        }
    }
    core = std::move(next);
}

// Training view = task embeddings followed by the core entries; the
// trainer's per-epoch shuffle interleaves them.
struct JointData {
    std::vector<float> x;
    std::vector<int32_t> y;
};

JointData join(const EmbeddedDataset& e, const CoreSet& core) {
    JointData j;
    j.x.reserve(e.features.size() + core.features.size());
    j.x.insert(j.x.end(), e.features.begin(), e.features.end());
    j.x.insert(j.x.end(), core.features.begin(), core.features.end());
    j.y.reserve(e.labels.size() + core.labels.size());
    j.y.insert(j.y.end(), e.labels.begin(), e.labels.end());
    j.y.insert(j.y.end(), core.labels.begin(), core.labels.end());
    return j;
}

ContinualResult run_growing_head(const DeepPrior& prior,
                                 const TaskStream& stream,
                                 const TrainConfig& cfg,
                                 const CoreSetConfig* core_cfg,
                                 int embed_batch) {
    const auto shapes = infer_shapes(prior.spec);
    ContinualResult res;
    res.scenario = core_cfg ? "single_head" : "accumulate";

    CoreSet core;
    core.dim = shapes.trace->flat_dim;
    LinearClassifier clf;
    AdamState adam;

    for (size_t t = 0; t < stream.tasks.size(); ++t) {
        const auto task_embed =
            embed_dataset(prior, stream.task_train(t), embed_batch);
        const auto ids = to_ids(stream.tasks[t]);
        if (t == 0)
            clf = make_classifier(task_embed.d, ids);
        else
            grow_classes(clf, ids, &adam);

        const JointData data = join(task_embed, core);
        TrainConfig tc = cfg;
        tc.shuffle_seed = mix_seed(cfg.shuffle_seed, 0x1AC, t);
        train_linear({data.x.data(), data.y.data(),
                      int64_t(data.y.size()), task_embed.d},
                     tc, clf, &adam);

        if (core_cfg) {
            if (core_cfg->policy == CoreSetConfig::Policy::PerTask)
                per_task_refresh(core, task_embed, core_cfg->amount,
                                 core_cfg->seed, int(t));
            else
                total_budget_refresh(core, task_embed, stream.classes_up_to(t),
                                     core_cfg->amount, core_cfg->seed, int(t));
        } else {
            for (int64_t i = 0; i < task_embed.n; ++i)
                core.append(task_embed.features.data() + i * task_embed.d,
                            task_embed.labels[i]);
        }

        const auto test_embed =
            embed_dataset(prior, union_test(stream, t), embed_batch);
        IncrementRow row;
        row.increment = int(t);
        row.seen_classes = stream.classes_up_to(t);
        row.accuracy = evaluate(clf, view(test_embed));
        row.core_size = core.size();
        res.rows.push_back(std::move(row));
    }
    res.final_average = res.rows.back().accuracy;
    return res;
}

}  // namespace

ContinualResult run_multi_head(const DeepPrior& prior, const TaskStream& stream,
                               const TrainConfig& cfg, int embed_batch) {
    ContinualResult res;
    res.scenario = "multi_head";
    double acc_sum = 0.0;
    for (size_t t = 0; t < stream.tasks.size(); ++t) {
        const auto tr = embed_dataset(prior, stream.task_train(t), embed_batch);
        LinearClassifier clf = make_classifier(tr.d, to_ids(stream.tasks[t]));
        TrainConfig tc = cfg;
        tc.shuffle_seed = mix_seed(cfg.shuffle_seed, 0x3EAD, t);
        train_linear(view(tr), tc, clf);

        const auto te = embed_dataset(prior, stream.task_test(t), embed_batch);
        IncrementRow row;
        row.increment = int(t);
        row.seen_classes = stream.tasks[t];
        row.accuracy = evaluate(clf, view(te));
        acc_sum += row.accuracy;
        res.rows.push_back(std::move(row));
        res.heads.push_back(std::move(clf));
    }
    res.final_average = acc_sum / double(stream.tasks.size());
    return res;
}

ContinualResult run_single_head(const DeepPrior& prior,
                                const TaskStream& stream,
                                const TrainConfig& cfg,
                                const CoreSetConfig& core_cfg,
                                int embed_batch) {
    ContinualResult res = run_growing_head(prior, stream, cfg, &core_cfg,
                                           embed_batch);
    res.core_desc =
        (core_cfg.policy == CoreSetConfig::Policy::PerTask ? "per-task:"
                                                           : "total:") +
        std::to_string(core_cfg.amount);
    return res;
}

ContinualResult run_accumulation_baseline(const DeepPrior& prior,
                                          const TaskStream& stream,
                                          const TrainConfig& cfg,
                                          int embed_batch) {
    ContinualResult res =
        run_growing_head(prior, stream, cfg, nullptr, embed_batch);
    res.core_desc = "accumulate-all";
    return res;
}

void ContinualResult::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << "increment,seen_classes,accuracy,core_size\n";
    for (const auto& r : rows) {
        f << r.increment << ",\"";
        for (size_t i = 0; i < r.seen_classes.size(); ++i)
            f << (i ? " " : "") << r.seen_classes[i];
        f << "\"," << r.accuracy << "," << r.core_size << "\n";
    }
}

}  // namespace dpnas
