#include "dpnas/search.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dpnas/common.hpp"
#include "dpnas/prior.hpp"

namespace dpnas {

using nlohmann::json;

namespace {

// sub-stream tags for per-index rngs; resume re-derives identical streams
constexpr uint64_t kSampleStream = 0xA1;
constexpr uint64_t kReplayStream = 0xB2;
constexpr uint64_t kWeightStream = 0xC3;
constexpr uint64_t kShuffleStream = 0xD4;

std::vector<int32_t> sorted_unique_labels(const ImageDataset& ds) {
    std::vector<int32_t> ids(ds.labels.begin(), ds.labels.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

FeatureView view(const EmbeddedDataset& e) {
    return {e.features.data(), e.labels.data(), e.n, e.d};
}

// One reward evaluation: materialize the prior, embed both splits, fit a
// fresh head, score on the validation embedding.
double evaluate_prior(const ArchitectureSpec& spec, uint64_t weight_seed,
                      uint64_t shuffle_seed, const SearchData& data,
                      const SearchConfig& cfg, long long* flat_dim,
                      const ImageDataset* test_override = nullptr) {
    const DeepPrior prior = init_weights(spec, weight_seed);
    const auto tr = embed_dataset(prior, data.train, cfg.embed_batch);
    if (flat_dim) *flat_dim = tr.d;
    LinearClassifier clf =
        make_classifier(tr.d, sorted_unique_labels(data.train));
    TrainConfig tc = cfg.train;
    tc.shuffle_seed = shuffle_seed;
    train_linear(view(tr), tc, clf);
    const auto holdout = embed_dataset(
        prior, test_override ? *test_override : data.val, cfg.embed_batch);
    return evaluate(clf, view(holdout));
}

json entry_to_json(const SearchLogEntry& e) {
    return json{{"index", e.index},        {"spec", e.spec_str},
                {"weight_seed", e.weight_seed}, {"val_accuracy", e.val_accuracy},
                {"eps", e.eps},            {"wall_time", e.wall_time},
                {"flat_dim", e.flat_dim}};
}

SearchLogEntry entry_from_json(const json& j) {
    SearchLogEntry e;
    e.index = j.at("index").get<int64_t>();
    e.spec_str = j.at("spec").get<std::string>();
    e.weight_seed = j.at("weight_seed").get<uint64_t>();
    e.val_accuracy = j.at("val_accuracy").get<double>();
    e.eps = j.at("eps").get<double>();
    e.wall_time = j.at("wall_time").get<double>();
    e.flat_dim = j.at("flat_dim").get<long long>();
    return e;
}

}  // namespace

void apply_desk_preset(SearchConfig& cfg) {
    cfg.total_architectures = 300;
    cfg.explore_len = 180;
    cfg.decay_every = 12;
    cfg.limits.flat_cap = 8192;
    cfg.limits.max_channels = 128;
    cfg.limits.max_kernel = 9;
    cfg.search_train_cap = 4000;
    cfg.search_val_cap = 1000;
}

SearchData prepare_search_data(const LoadedDataset& ds,
                               const SearchConfig& cfg) {
    ImageDataset base = cfg.class_subset.empty()
                            ? ds.train
                            : filter_classes(ds.train, cfg.class_subset);
    auto [tr, va] = split_validation(base, cfg.val_fraction, cfg.split_seed);
    SearchData out;
    out.train = subsample_stratified(tr, cfg.search_train_cap,
                                     mix_seed(cfg.seed, 0xCA9));
    out.val = subsample_stratified(va, cfg.search_val_cap,
                                   mix_seed(cfg.seed, 0xCAA));
    return out;
}

namespace {

struct LoadedLogs {
    std::vector<SearchLogEntry> log;
    std::vector<ReplayRecord> buffer;
};

LoadedLogs load_logs(const std::string& out_dir) {
    LoadedLogs out;
    std::ifstream lf(out_dir + "/search_log.jsonl");
    std::string line;
    while (lf && std::getline(lf, line)) {
        if (line.empty()) continue;
        out.log.push_back(entry_from_json(json::parse(line)));
    }
    std::ifstream rf(out_dir + "/replay_log.jsonl");
    while (rf && std::getline(rf, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        const auto spec = parse_arch(j.at("spec").get<std::string>());
        out.buffer.push_back(replay_record_from_actions(
            spec, j.at("reward").get<double>(),
            j.at("trajectory").get<std::vector<std::string>>()));
    }
    if (out.buffer.size() != out.log.size())
        throw DataError(out_dir + ": search_log and replay_log disagree (" +
                        std::to_string(out.log.size()) + " vs " +
                        std::to_string(out.buffer.size()) + " entries)");
    return out;
}

// The q-table state is a pure function of the logged records plus the
// per-index replay rng streams, so resuming replays them.
QTable rebuild_qtable(const LoadedLogs& logs, const SearchConfig& cfg) {
    QTable q(cfg.q_default);
    std::vector<ReplayRecord> buffer;
    for (size_t i = 0; i < logs.buffer.size(); ++i) {
        buffer.push_back(logs.buffer[i]);
        std::mt19937_64 rng(mix_seed(cfg.seed, kReplayStream,
                                     uint64_t(logs.log[i].index)));
        replay_step(q, buffer, cfg.replay_batch, rng, cfg.alpha, cfg.gamma,
                    cfg.limits);
    }
    return q;
}

void write_rolling_csv(const std::string& path,
                       const std::vector<SearchLogEntry>& log, int window) {
    std::vector<double> rewards;
    rewards.reserve(log.size());
    for (const auto& e : log) rewards.push_back(e.val_accuracy);
    const auto rolling = moving_average(rewards, window);
    std::ofstream f(path);
    f << "index,reward,rolling_mean,eps\n";
    for (size_t i = 0; i < log.size(); ++i)
        f << log[i].index << "," << log[i].val_accuracy << "," << rolling[i]
          << "," << log[i].eps << "\n";
}

}  // namespace

SearchResult load_search(const std::string& out_dir, const SearchConfig& cfg) {
    auto logs = load_logs(out_dir);
    SearchResult res;
    res.qtable = rebuild_qtable(logs, cfg);
    res.log = std::move(logs.log);
    res.buffer = std::move(logs.buffer);
    return res;
}

SearchResult run_search(const LoadedDataset& ds, const SearchConfig& cfg,
                        const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const SearchData data = prepare_search_data(ds, cfg);
    const Shape3 input_shape = data.train.shape;

    SearchResult res;
    res.qtable = QTable(cfg.q_default);
    if (fs::exists(out_dir + "/search_log.jsonl")) {
        res = load_search(out_dir, cfg);
        if (!res.log.empty() && res.log.back().index >= cfg.total_architectures)
            return res;  // already complete
    }

    std::ofstream log_f(out_dir + "/search_log.jsonl", std::ios::app);
    std::ofstream replay_f(out_dir + "/replay_log.jsonl", std::ios::app);
    if (!log_f || !replay_f)
        throw DataError("cannot open log files under " + out_dir);

    for (int64_t i = int64_t(res.log.size()); i < cfg.total_architectures;
         ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const double eps =
            epsilon_schedule(i, cfg.explore_len, cfg.decay_every);

        std::mt19937_64 sample_rng(mix_seed(cfg.seed, kSampleStream, i));
        ArchitectureSpec spec;
        Trajectory traj;
        for (int attempt = 0;; ++attempt) {
            // after repeated FLAT_CAP rejections fall back to uniform
            // sampling so a greedy dead-end cannot loop forever
            const double use_eps = attempt < 8 ? eps : 1.0;
            std::tie(spec, traj) = sample_architecture(
                res.qtable, use_eps, sample_rng, input_shape, cfg.limits);
            if (infer_shapes(spec, cfg.limits.flat_cap).valid()) break;
        }

        SearchLogEntry e;
        e.index = i;
        e.spec_str = serialize(spec);
        e.weight_seed = mix_seed(cfg.seed, kWeightStream, i);
        e.eps = eps;
        e.val_accuracy = evaluate_prior(spec, e.weight_seed,
                                        mix_seed(cfg.seed, kShuffleStream, i),
                                        data, cfg, &e.flat_dim);
        e.wall_time = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();

        ReplayRecord rec;
        rec.trajectory = traj;
        rec.reward = e.val_accuracy;
        rec.spec = spec;
        res.buffer.push_back(std::move(rec));
        std::mt19937_64 replay_rng(mix_seed(cfg.seed, kReplayStream, i));
        replay_step(res.qtable, res.buffer, cfg.replay_batch, replay_rng,
                    cfg.alpha, cfg.gamma, cfg.limits);

        log_f << entry_to_json(e).dump() << "\n";
        log_f.flush();
        json rj;
        rj["index"] = i;
        rj["spec"] = e.spec_str;
        rj["reward"] = e.val_accuracy;
        std::vector<std::string> actions;
        for (const auto& [s, a] : res.buffer.back().trajectory)
            actions.push_back(action_token(a));
        rj["trajectory"] = actions;
        replay_f << rj.dump() << "\n";
        replay_f.flush();

        res.log.push_back(std::move(e));
        if ((i + 1) % 25 == 0 || i + 1 == cfg.total_architectures)
            res.qtable.save(out_dir + "/qtable.ckpt");
    }

    res.qtable.save(out_dir + "/qtable.ckpt");
    write_rolling_csv(out_dir + "/rolling_reward.csv", res.log,
                      cfg.moving_avg_window);
    return res;
}

std::vector<double> moving_average(const std::vector<double>& rewards,
                                   int window) {
    if (window < 1) throw ValidationError("moving-average window must be >= 1");
    std::vector<double> out(rewards.size());
    double acc = 0.0;
    for (size_t i = 0; i < rewards.size(); ++i) {
        acc += rewards[i];
        if (i >= size_t(window)) acc -= rewards[i - window];
        out[i] = acc / double(std::min<size_t>(i + 1, window));
    }
    return out;
}

std::vector<size_t> select_top(const std::vector<SearchLogEntry>& log,
                               size_t k) {
    if (k > log.size())
        throw ValidationError("select_top: k exceeds log size");
    std::vector<size_t> idx(log.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (log[a].val_accuracy != log[b].val_accuracy)
            return log[a].val_accuracy > log[b].val_accuracy;
        return log[a].index < log[b].index;
    });
    idx.resize(k);
    return idx;
}

std::vector<AblationRow> reinit_ablation(
    const LoadedDataset& ds,
    const std::vector<std::pair<std::string, double>>& specs, int repeats,
    const SearchConfig& cfg) {
    if (repeats < 2) throw ValidationError("reinit_ablation needs repeats >= 2");
    const SearchData data = prepare_search_data(ds, cfg);

    std::vector<AblationRow> rows;
    for (size_t si = 0; si < specs.size(); ++si) {
        const auto spec = parse_arch(specs[si].first, data.train.shape);
        AblationRow row;
        row.spec_str = specs[si].first;
        row.search_reward = specs[si].second;
        for (int r = 0; r < repeats; ++r) {
            const uint64_t wseed =
                mix_seed(cfg.seed, fnv1a(row.spec_str), uint64_t(r) + 1);
            row.test_accs.push_back(evaluate_prior(
                spec, wseed, mix_seed(wseed, kShuffleStream), data, cfg,
                nullptr, &ds.test));
        }
        auto sorted = row.test_accs;
        std::sort(sorted.begin(), sorted.end());
        auto quantile = [&sorted](double p) {
            const double pos = p * double(sorted.size() - 1);
            const size_t lo = size_t(pos);
            const size_t hi = std::min(lo + 1, sorted.size() - 1);
            return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
        };
        row.median = quantile(0.5);
        row.q1 = quantile(0.25);
        row.q3 = quantile(0.75);
        row.lo = sorted.front();
        row.hi = sorted.back();
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace dpnas
