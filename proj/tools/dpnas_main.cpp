#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpnas/common.hpp"
#include "dpnas/config.hpp"
#include "dpnas/continual.hpp"
#include "dpnas/dataset.hpp"
#include "dpnas/linear_head.hpp"
#include "dpnas/manifest.hpp"
#include "dpnas/prior.hpp"
#include "dpnas/report.hpp"
#include "dpnas/search.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dpnas;

namespace {

struct CommonOpts {
    std::string config_file;
    std::string dataset;
    std::string root;
    std::string out;
    int64_t seed = -1;  // -1: take from config
};

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_dataset = true) {
    cmd->add_option("--config", o.config_file, "config file (key = value with sections)");
    if (needs_dataset)
        cmd->add_option("--dataset", o.dataset, "mnist | fashion-mnist | cifar10");
    cmd->add_option("--root", o.root, "dataset root (default: $DPNAS_DATA_ROOT)");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "global seed override");
}

Config resolve_config(const CommonOpts& o) {
    Config cfg = o.config_file.empty() ? Config::defaults()
                                       : Config::from_file(o.config_file);
    if (!o.dataset.empty()) cfg.set("dataset.name", o.dataset);
    if (!o.root.empty()) cfg.set("dataset.root", o.root);
    if (o.seed >= 0) cfg.set("run.seed", std::to_string(o.seed));
    return cfg;
}

std::string resolve_root(const Config& cfg) {
    std::string root = cfg.get_str("dataset.root");
    if (root.empty()) {
        const char* env = std::getenv("DPNAS_DATA_ROOT");
        if (env) root = env;
    }
    if (root.empty())
        throw ConfigError(
            "no dataset root: set dataset.root, --root or DPNAS_DATA_ROOT");
    return root;
}

LoadedDataset load_from(const Config& cfg) {
    return load_dataset(cfg.get_str("dataset.name"), resolve_root(cfg));
}

TrainConfig train_config_from(const Config& c) {
    TrainConfig t;
    t.epochs = int(c.get_int("train.epochs"));
    t.lr = float(c.get_double("train.lr"));
    t.batch = int(c.get_int("train.batch"));
    t.shuffle_seed = c.get_seed("run.seed");
    return t;
}

SearchConfig search_config_from(const Config& c) {
    SearchConfig s;
    s.total_architectures = int(c.get_int("search.total"));
    s.explore_len = int(c.get_int("search.explore"));
    s.decay_every = int(c.get_int("search.decay_every"));
    s.seed = c.get_seed("run.seed");
    s.val_fraction = c.get_double("dataset.val_fraction");
    s.split_seed = c.get_seed("dataset.seed");
    s.train = train_config_from(c);
    s.alpha = c.get_double("search.alpha");
    s.gamma = c.get_double("search.gamma");
    s.q_default = c.get_double("search.q_default");
    s.replay_batch = int(c.get_int("search.replay_batch"));
    s.limits.flat_cap = c.get_int("search.flat_cap");
    s.limits.max_channels = int(c.get_int("search.max_channels"));
    s.limits.max_kernel = int(c.get_int("search.max_kernel"));
    s.search_train_cap = c.get_int("search.train_cap");
    s.search_val_cap = c.get_int("search.val_cap");
    s.embed_batch = int(c.get_int("run.embed_batch"));
    s.moving_avg_window = int(c.get_int("search.moving_avg_window"));
    const auto classes = parse_increments(c.get_str("search.classes"));
    if (!classes.empty()) s.class_subset = classes.front();
    return s;
}

RunManifest begin_manifest(const std::string& command,
                           const std::vector<std::string>& argv,
                           const Config& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    RunManifest m;
    m.command = command;
    m.argv = argv;
    m.config = cfg.raw();
    m.seed = cfg.get_seed("run.seed");
    m.started_at = now_iso8601();
    m.out_dir = out_dir;
    m.save(out_dir + "/manifest.json");
    return m;
}

void finish_manifest(RunManifest& m) {
    m.finished_at = now_iso8601();
    m.save(m.out_dir + "/manifest.json");
}

void write_results(const std::string& out_dir, const json& results) {
    std::ofstream f(out_dir + "/results.json");
    f << json{{"results", results}}.dump(2) << "\n";
}

FeatureView raw_view(const ImageDataset& ds) {
    return {ds.images.data(), ds.labels.data(), ds.n, ds.sample_size()};
}

FeatureView embed_view(const EmbeddedDataset& e) {
    return {e.features.data(), e.labels.data(), e.n, e.d};
}

std::vector<int32_t> all_class_ids(const ImageDataset& ds) {
    std::vector<int32_t> ids(ds.num_classes);
    for (int i = 0; i < ds.num_classes; ++i) ids[i] = i;
    return ids;
}

// ---- subcommand bodies ----

int cmd_baseline_lc(const CommonOpts& opts,
                    const std::vector<std::string>& argv) {
    const Config cfg = resolve_config(opts);
    const std::string name = cfg.get_str("dataset.name");
    const std::string out =
        opts.out.empty() ? "runs/baseline-lc-" + name : opts.out;
    RunManifest manifest = begin_manifest("baseline-lc", argv, cfg, out);

    const LoadedDataset ds = load_from(cfg);
    LinearClassifier clf =
        make_classifier(ds.train.sample_size(), all_class_ids(ds.train));
    train_linear(raw_view(ds.train), train_config_from(cfg), clf);
    const double acc = evaluate(clf, raw_view(ds.test));

    std::cout << "baseline-lc " << name << " test accuracy: " << acc * 100
              << "%\n";
    save_classifier(clf, out + "/classifier.ckpt");
    write_results(out, json::array({{{"label", "baseline-lc " + name},
                                     {"anchor", "baseline-lc/" + name},
                                     {"accuracy_pct", acc * 100}}}));
    finish_manifest(manifest);
    return 0;
}

int cmd_eval_arch(const CommonOpts& opts, const std::string& arch_arg,
                  int seeds, const std::vector<std::string>& argv) {
    const Config cfg = resolve_config(opts);
    const std::string name = cfg.get_str("dataset.name");
    const auto named = named_reference_arch(arch_arg);
    const std::string arch_str = named ? *named : arch_arg;

    const std::string out =
        opts.out.empty() ? "runs/eval-arch-" + name : opts.out;
    RunManifest manifest = begin_manifest("eval-arch", argv, cfg, out);

    const LoadedDataset ds = load_from(cfg);
    const ArchitectureSpec spec = parse_arch(arch_str, ds.train.shape);
    const auto shapes = infer_shapes(spec);
    if (!shapes.valid())
        throw ValidationError(std::string("invalid architecture: ") +
                              to_string(shapes.reason));

    const int embed_batch = int(cfg.get_int("run.embed_batch"));
    const uint64_t gseed = cfg.get_seed("run.seed");
    std::vector<double> accs;
    for (int s = 0; s < seeds; ++s) {
        const DeepPrior prior = init_weights(spec, mix_seed(gseed, 0xE7A1, s));
        const auto tr = embed_dataset(prior, ds.train, embed_batch);
        LinearClassifier clf = make_classifier(tr.d, all_class_ids(ds.train));
        TrainConfig tc = train_config_from(cfg);
        tc.shuffle_seed = mix_seed(gseed, 0xE7A2, s);
        train_linear(embed_view(tr), tc, clf);
        const auto te = embed_dataset(prior, ds.test, embed_batch);
        accs.push_back(evaluate(clf, embed_view(te)));
        std::cout << "seed " << s << ": test accuracy " << accs.back() * 100
                  << "%\n";
    }
    auto sorted = accs;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    std::cout << "median over " << seeds << " seeds: " << median * 100
              << "%\n";

    json results = json::array();
    const std::string anchor_key =
        named ? "eval-arch/" + arch_arg + "/" + name : "";
    results.push_back({{"label", "eval-arch " + arch_arg + " " + name},
                       {"anchor", anchor_key},
                       {"accuracy_pct", median * 100},
                       {"per_seed", accs}});
    write_results(out, results);
    finish_manifest(manifest);
    return 0;
}

int cmd_search(const CommonOpts& opts, bool desk_preset, bool resume_flag,
               const std::vector<std::string>& argv) {
    Config cfg = resolve_config(opts);
    const std::string name = cfg.get_str("dataset.name");
    const std::string out = opts.out.empty() ? "runs/search-" + name : opts.out;

    SearchConfig scfg = search_config_from(cfg);
    if (desk_preset) {
        apply_desk_preset(scfg);
        cfg.set("search.total", std::to_string(scfg.total_architectures));
        cfg.set("search.explore", std::to_string(scfg.explore_len));
        cfg.set("search.decay_every", std::to_string(scfg.decay_every));
        cfg.set("search.flat_cap", std::to_string(scfg.limits.flat_cap));
        cfg.set("search.max_channels", std::to_string(scfg.limits.max_channels));
        cfg.set("search.max_kernel", std::to_string(scfg.limits.max_kernel));
        cfg.set("search.train_cap", std::to_string(scfg.search_train_cap));
        cfg.set("search.val_cap", std::to_string(scfg.search_val_cap));
    }
    if (!resume_flag && fs::exists(out + "/search_log.jsonl"))
        throw ConfigError(out + " already holds a search log; pass --resume "
                          "to continue it");

    RunManifest manifest = begin_manifest("search", argv, cfg, out);
    const LoadedDataset ds = load_from(cfg);
    const SearchResult res = run_search(ds, scfg, out);

    const auto top = select_top(res.log, std::min<size_t>(5, res.log.size()));
    std::cout << "search complete: " << res.log.size() << " architectures\n";
    for (size_t i = 0; i < top.size(); ++i)
        std::cout << "top-" << i + 1 << " reward "
                  << res.log[top[i]].val_accuracy << "  " << res.log[top[i]].spec_str
                  << "\n";
    finish_manifest(manifest);
    return 0;
}

int cmd_reinit_ablation(const CommonOpts& opts, const std::string& search_dir,
                        int num_specs, int repeats,
                        const std::vector<std::string>& argv) {
    Config cfg = resolve_config(opts);
    const std::string out =
        opts.out.empty() ? search_dir + "/reinit-ablation" : opts.out;
    RunManifest manifest = begin_manifest("reinit-ablation", argv, cfg, out);

    // adopt the search run's own configuration for comparable rewards
    const RunManifest src = RunManifest::load(search_dir + "/manifest.json");
    Config scfgc = Config::defaults();
    for (const auto& [k, v] : src.config) scfgc.set(k, v);
    const SearchConfig scfg = search_config_from(scfgc);
    cfg.set("dataset.name", scfgc.get_str("dataset.name"));
    const LoadedDataset ds = load_from(cfg);

    const SearchResult res = load_search(search_dir, scfg);
    const auto order = select_top(res.log, res.log.size());

    // sample specs from the top / median / low segments of the ranking
    const int per_seg = std::max(1, num_specs / 3);
    std::vector<std::pair<std::string, double>> picks;
    auto take = [&](size_t start) {
        for (int i = 0; i < per_seg && start + i < order.size(); ++i) {
            const auto& e = res.log[order[start + i]];
            picks.emplace_back(e.spec_str, e.val_accuracy);
        }
    };
    take(0);                                   // top
    take(order.size() / 2 - per_seg / 2);      // around the median
    take(order.size() - per_seg);              // lowest
    const auto rows = reinit_ablation(ds, picks, repeats, scfg);

    std::ofstream csv(out + "/ablation.csv");
    csv << "spec,search_reward,median,q1,q3,min,max\n";
    for (const auto& r : rows)
        csv << "\"" << r.spec_str << "\"," << r.search_reward << ","
            << r.median << "," << r.q1 << "," << r.q3 << "," << r.lo << ","
            << r.hi << "\n";
    std::cout << "ablation complete over " << rows.size() << " specs x "
              << repeats << " weight seeds -> " << out << "/ablation.csv\n";
    finish_manifest(manifest);
    return 0;
}

// Top search entry -> (spec, weight seed) used for continual runs.
std::pair<ArchitectureSpec, uint64_t> prior_from_search_dir(
    const std::string& dir, const LoadedDataset& ds,
    const std::vector<int>& first_task) {
    const RunManifest src = RunManifest::load(dir + "/manifest.json");
    Config scfgc = Config::defaults();
    for (const auto& [k, v] : src.config) scfgc.set(k, v);
    const SearchConfig scfg = search_config_from(scfgc);
    if (!first_task.empty() && scfg.class_subset != first_task)
        std::cerr << "warning: search " << dir
                  << " was not restricted to the stream's first task\n";
    const SearchResult res = load_search(dir, scfg);
    const auto top = select_top(res.log, 1);
    const auto& e = res.log[top[0]];
    return {parse_arch(e.spec_str, ds.train.shape), e.weight_seed};
}

CoreSetConfig parse_core(const std::string& text, uint64_t seed) {
    CoreSetConfig c;
    c.seed = seed;
    const auto colon = text.find(':');
    if (colon == std::string::npos)
        throw ConfigError("core spec must be per-task:<N> or total:<N>");
    const std::string kind = text.substr(0, colon);
    c.amount = std::stoll(text.substr(colon + 1));
    if (kind == "per-task")
        c.policy = CoreSetConfig::Policy::PerTask;
    else if (kind == "total")
        c.policy = CoreSetConfig::Policy::TotalBudget;
    else
        throw ConfigError("unknown core policy '" + kind + "'");
    return c;
}

int cmd_continual(const CommonOpts& opts, const std::string& mode,
                  const std::string& prior_arg, int64_t arch_seed,
                  const std::string& core_override,
                  const std::string& increments_override,
                  const std::vector<std::string>& argv) {
    Config cfg = resolve_config(opts);
    if (!core_override.empty()) cfg.set("continual.core", core_override);
    if (!increments_override.empty())
        cfg.set("continual.increments", increments_override);
    const std::string name = cfg.get_str("dataset.name");
    const std::string out =
        opts.out.empty() ? "runs/continual-" + mode + "-" + name : opts.out;
    RunManifest manifest = begin_manifest("continual", argv, cfg, out);

    const LoadedDataset ds = load_from(cfg);
    const auto increments = parse_increments(cfg.get_str("continual.increments"));
    const TaskStream stream = make_task_stream(ds, increments);

    ArchitectureSpec spec;
    uint64_t wseed;
    if (fs::exists(prior_arg + "/search_log.jsonl")) {
        std::tie(spec, wseed) =
            prior_from_search_dir(prior_arg, ds, stream.tasks.front());
    } else {
        spec = parse_arch(named_reference_arch(prior_arg).value_or(prior_arg),
                          ds.train.shape);
        wseed = arch_seed >= 0 ? uint64_t(arch_seed)
                               : mix_seed(cfg.get_seed("run.seed"), 0xA5);
    }
    const DeepPrior prior = init_weights(spec, wseed);

    const TrainConfig tc = train_config_from(cfg);
    const int embed_batch = int(cfg.get_int("run.embed_batch"));
    ContinualResult res;
    if (mode == "multi-head") {
        res = run_multi_head(prior, stream, tc, embed_batch);
    } else if (mode == "single-head") {
        const auto core = parse_core(cfg.get_str("continual.core"),
                                     mix_seed(cfg.get_seed("run.seed"), 0xC0));
        res = run_single_head(prior, stream, tc, core, embed_batch);
    } else if (mode == "accumulate") {
        res = run_accumulation_baseline(prior, stream, tc, embed_batch);
    } else {
        throw ConfigError("unknown mode '" + mode + "'");
    }

    res.write_csv(out + "/continual_results.csv");
    for (const auto& r : res.rows)
        std::cout << "increment " << r.increment << ": accuracy "
                  << r.accuracy * 100 << "% (core " << r.core_size << ")\n";
    std::cout << res.scenario << " final average: " << res.final_average * 100
              << "%\n";

    // protocol-specific anchors for the report
    std::string anchor;
    if (mode == "multi-head" && increments.size() == 5)
        anchor = "multi-head/" + name;
    else if (mode == "single-head" && name == "mnist" && increments.size() == 5)
        anchor = "single-head/mnist";
    else if (mode == "single-head" && name == "cifar10" &&
             increments.size() == 2)
        anchor = "single-head/cifar10-a10d5";
    write_results(out,
                  json::array({{{"label", res.scenario + " " + name + " (" +
                                              serialize(spec) + ")"},
                                {"anchor", anchor},
                                {"accuracy_pct", res.final_average * 100}}}));
    finish_manifest(manifest);
    return 0;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"deep prior architecture search and continual learning"};
    app.require_subcommand(1);
    std::vector<std::string> raw_args(argv, argv + argc);

    // config
    auto* config_cmd = app.add_subcommand("config", "show configuration");
    CommonOpts config_opts;
    bool dump = false;
    add_common(config_cmd, config_opts, false);
    config_cmd->add_flag("--dump", dump, "print the resolved configuration");

    // search
    auto* search_cmd = app.add_subcommand("search", "run DP-NAS");
    CommonOpts search_opts;
    std::string preset;
    bool resume = false;
    add_common(search_cmd, search_opts);
    search_cmd->add_option("--preset", preset, "'desk' for the 12%-scale run");
    search_cmd->add_flag("--resume", resume, "continue an interrupted run");

    // baseline-lc
    auto* lc_cmd = app.add_subcommand("baseline-lc",
                                      "linear classifier on raw pixels");
    CommonOpts lc_opts;
    add_common(lc_cmd, lc_opts);

    // eval-arch
    auto* eval_cmd = app.add_subcommand("eval-arch", "evaluate a fixed prior");
    CommonOpts eval_opts;
    std::string arch;
    int seeds = 3;
    add_common(eval_cmd, eval_opts);
    eval_cmd->add_option("--arch", arch,
                         "architecture string, or cnn2l-ref / lenet-ref")
        ->required();
    eval_cmd->add_option("--seeds", seeds, "number of weight seeds");

    // reinit-ablation
    auto* abl_cmd = app.add_subcommand("reinit-ablation",
                                       "weight re-initialization ablation");
    CommonOpts abl_opts;
    std::string search_dir;
    int num_specs = 18, repeats = 10;
    add_common(abl_cmd, abl_opts, false);
    abl_cmd->add_option("--search-dir", search_dir, "finished search run")
        ->required();
    abl_cmd->add_option("--specs", num_specs, "specs to sample (6/6/6 split)");
    abl_cmd->add_option("--repeats", repeats, "weight seeds per spec");

    // continual
    auto* cont_cmd = app.add_subcommand("continual",
                                        "class-incremental experiments");
    CommonOpts cont_opts;
    std::string mode = "single-head", prior_arg, core, increments;
    int64_t arch_seed = -1;
    add_common(cont_cmd, cont_opts);
    cont_cmd->add_option("--mode", mode, "multi-head | single-head | accumulate");
    cont_cmd->add_option("--prior", prior_arg,
                         "search run dir, arch string, or named ref")
        ->required();
    cont_cmd->add_option("--arch-seed", arch_seed, "weight seed for --prior strings");
    cont_cmd->add_option("--core", core, "per-task:<N> or total:<N>");
    cont_cmd->add_option("--increments", increments, "e.g. 0,1|2,3|4,5");

    // report
    auto* report_cmd = app.add_subcommand("report", "consolidate run dirs");
    CommonOpts report_opts;
    std::vector<std::string> run_dirs;
    add_common(report_cmd, report_opts, false);
    report_cmd->add_option("dirs", run_dirs, "finished run directories")
        ->required();

    CLI11_PARSE(app, argc, argv);

    if (config_cmd->parsed()) {
        const Config cfg = resolve_config(config_opts);
        if (dump) std::cout << cfg.dump();
        return 0;
    }
    if (search_cmd->parsed()) {
        if (!preset.empty() && preset != "desk")
            throw ConfigError("unknown preset '" + preset + "'");
        return cmd_search(search_opts, preset == "desk", resume, raw_args);
    }
    if (lc_cmd->parsed()) return cmd_baseline_lc(lc_opts, raw_args);
    if (eval_cmd->parsed())
        return cmd_eval_arch(eval_opts, arch, seeds, raw_args);
    if (abl_cmd->parsed())
        return cmd_reinit_ablation(abl_opts, search_dir, num_specs, repeats,
                                   raw_args);
    if (cont_cmd->parsed())
        return cmd_continual(cont_opts, mode, prior_arg, arch_seed, core,
                             increments, raw_args);
    if (report_cmd->parsed()) {
        const std::string out =
            report_opts.out.empty() ? "runs/report" : report_opts.out;
        const int flagged = write_report(run_dirs, out);
        std::cout << "report written to " << out << "/report.md";
        if (flagged) std::cout << " (" << flagged << " values deviate)";
        std::cout << "\n";
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
