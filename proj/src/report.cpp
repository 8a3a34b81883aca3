#include "dpnas/report.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dpnas/common.hpp"
#include "dpnas/manifest.hpp"

namespace dpnas {

using nlohmann::json;
namespace fs = std::filesystem;

std::optional<std::string> named_reference_arch(const std::string& name) {
    if (name == "cnn2l-ref")
        return "conv c64 k5 s1 | pool f2 s2 | conv c128 k5 s1 | pool f2 s2";
    if (name == "lenet-ref")
        return "conv c6 k5 s1 | apool f2 s2 | conv c16 k5 s1 | apool f2 s2 | "
               "conv c120 k5 s1";
    return std::nullopt;
}

const std::vector<Anchor>& anchors() {
    static const std::vector<Anchor> a = {
        {"baseline-lc/mnist", 91.48, 1.5, "linear classifier on raw pixels"},
        {"baseline-lc/fashion-mnist", 85.91, 1.5,
         "linear classifier on raw pixels"},
        {"baseline-lc/cifar10", 41.12, 1.5, "linear classifier on raw pixels"},
        {"eval-arch/cnn2l-ref/mnist", 98.01, 2.5, "random CNN-2L + LC"},
        {"eval-arch/cnn2l-ref/fashion-mnist", 89.29, 2.5,
         "random CNN-2L + LC"},
        {"eval-arch/cnn2l-ref/cifar10", 60.26, 2.5, "random CNN-2L + LC"},
        {"eval-arch/lenet-ref/mnist", 88.76, 2.5, "random LeNet + LC"},
        {"eval-arch/lenet-ref/fashion-mnist", 80.33, 2.5,
         "random LeNet + LC"},
        {"eval-arch/lenet-ref/cifar10", 43.40, 2.5, "random LeNet + LC"},
        {"multi-head/mnist", 99.79, 0.79, "deep prior, searched on task 1"},
        {"multi-head/fashion-mnist", 99.37, 1.37,
         "deep prior, searched on task 1"},
        {"single-head/mnist", 76.31, 4.0, "deep prior + core, 10 per task"},
        {"single-head/cifar10-a10d5", 65.15, 25.0,
         "deep prior + core, 2000 buffer (desk-scale search; anchor is "
         "full-scale)"},
    };
    return a;
}

const Anchor* find_anchor(const std::string& key) {
    for (const auto& a : anchors())
        if (a.key == key) return &a;
    return nullptr;
}

const std::vector<LiteratureRow>& literature_rows() {
    static const std::vector<LiteratureRow> rows = {
        // multi-head, 5 tasks x 2 classes
        {"multi-head/mnist", "EWC (Kirkpatrick et al. 2017)", 99.3,
         "as reported by Chaudhry et al. 2018"},
        {"multi-head/mnist", "RWalk (Chaudhry et al. 2018)", 99.3,
         "Chaudhry et al. 2018"},
        {"multi-head/mnist", "VCL + core (Nguyen et al. 2018)", 98.6,
         "as reported by Farquhar & Gal 2018"},
        {"multi-head/mnist", "VCL (Nguyen et al. 2018)", 97.0,
         "as reported by Farquhar & Gal 2018"},
        {"multi-head/mnist", "VGR (Farquhar & Gal 2018)", 99.3,
         "Farquhar & Gal 2018"},
        {"multi-head/fashion-mnist", "EWC (Kirkpatrick et al. 2017)", 95.3,
         "as reported by Farquhar & Gal 2018"},
        {"multi-head/fashion-mnist", "VCL + core (Nguyen et al. 2018)", 97.1,
         "as reported by Farquhar & Gal 2018"},
        {"multi-head/fashion-mnist", "VCL (Nguyen et al. 2018)", 80.6,
         "as reported by Farquhar & Gal 2018"},
        {"multi-head/fashion-mnist", "VGR (Farquhar & Gal 2018)", 99.2,
         "Farquhar & Gal 2018"},
        // single-head MNIST, 10 classes after 5 increments of 2
        {"single-head/mnist", "EWC (Kirkpatrick et al. 2017)", 55.80,
         "as reported by Chaudhry et al. 2018"},
        {"single-head/mnist", "IMM (Lee et al. 2017)", 67.25,
         "as reported by Hu et al. 2019"},
        {"single-head/mnist", "DGR (Shin et al. 2017)", 75.47,
         "as reported by Hu et al. 2019"},
        {"single-head/mnist", "PGMA (Hu et al. 2019)", 81.70,
         "Hu et al. 2019"},
        {"single-head/mnist", "RWalk (Chaudhry et al. 2018)", 82.50,
         "Chaudhry et al. 2018"},
        {"single-head/mnist", "iCarl (Rebuffi et al. 2017)", 55.80,
         "as reported by Chaudhry et al. 2018"},
        // single-head CIFAR-10, 5 classes with increments of 1
        {"single-head/cifar10-a5d1", "IMM (Lee et al. 2017)", 32.36,
         "as reported by Hu et al. 2019"},
        {"single-head/cifar10-a5d1", "DGR (Shin et al. 2017)", 31.09,
         "as reported by Hu et al. 2019"},
        {"single-head/cifar10-a5d1", "PGMA (Hu et al. 2019)", 40.47,
         "Hu et al. 2019"},
        {"single-head/cifar10-a5d1", "iCarl (Rebuffi et al. 2017)", 57.30,
         "as reported by Ayub & Wagner 2021"},
        {"single-head/cifar10-a5d1", "DGM (Ostapenko et al. 2019)", 64.94,
         "as reported by Ayub & Wagner 2021"},
        {"single-head/cifar10-a5d1", "EEC (Ayub & Wagner 2021)", 85.12,
         "Ayub & Wagner 2021"},
        // single-head CIFAR-10, 10 classes after two increments of 5
        {"single-head/cifar10-a10d5", "EWC (Kirkpatrick et al. 2017)", 37.75,
         "as reported by Hu et al. 2019"},
        {"single-head/cifar10-a10d5", "IMM (Lee et al. 2017)", 62.98,
         "as reported by Hu et al. 2019"},
        {"single-head/cifar10-a10d5", "DGR (Shin et al. 2017)", 65.11,
         "as reported by Hu et al. 2019"},
        {"single-head/cifar10-a10d5", "PGMA (Hu et al. 2019)", 69.51,
         "Hu et al. 2019"},
    };
    return rows;
}

namespace {

struct MeasuredValue {
    std::string key;  // anchor key
    std::string label;
    double accuracy_pct;
};

void collect_results(const std::string& dir, const RunManifest& m,
                     std::vector<MeasuredValue>& values,
                     std::ostringstream& md) {
    const std::string results_path = dir + "/results.json";
    if (fs::exists(results_path)) {
        std::ifstream f(results_path);
        json j;
        f >> j;
        for (const auto& item : j.at("results")) {
            MeasuredValue v;
            v.key = item.value("anchor", "");
            v.label = item.at("label").get<std::string>();
            v.accuracy_pct = item.at("accuracy_pct").get<double>();
            values.push_back(v);
        }
    }
    if (m.command == "search" && fs::exists(dir + "/rolling_reward.csv")) {
        md << "- search run `" << dir << "`: rolling reward series at `"
           << dir << "/rolling_reward.csv`\n";
    }
}

}  // namespace

int write_report(const std::vector<std::string>& run_dirs,
                 const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<MeasuredValue> values;
    std::ostringstream extras;

    // merged continual curves, one labeled series per run dir
    std::ofstream curves(out_dir + "/continual_curves.csv");
    curves << "run,increment,accuracy,core_size\n";

    for (const auto& dir : run_dirs) {
        const std::string mpath = dir + "/manifest.json";
        if (!fs::exists(mpath))
            throw DataError("missing manifest: " + mpath);
        const RunManifest m = RunManifest::load(mpath);
        collect_results(dir, m, values, extras);

        const std::string cont = dir + "/continual_results.csv";
        if (fs::exists(cont)) {
            std::ifstream f(cont);
            std::string line;
            std::getline(f, line);  // header
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                // increment,seen,accuracy,core -> run,increment,accuracy,core
                const auto c1 = line.find(',');
                const auto c2 = line.rfind(',');
                const auto q2 = line.rfind('"');
                const std::string increment = line.substr(0, c1);
                const std::string core = line.substr(c2 + 1);
                const std::string acc =
                    line.substr(q2 + 2, c2 - q2 - 2);
                curves << fs::path(dir).filename().string() << ","
                       << increment << "," << acc << "," << core << "\n";
            }
        }
    }

    int flagged = 0;
    std::ofstream md(out_dir + "/report.md");
    md << "# Run report\n\n## Measured accuracies\n\n";
    md << "| run | accuracy % | reference % | delta | status |\n";
    md << "|---|---|---|---|---|\n";
    for (const auto& v : values) {
        const Anchor* a = v.key.empty() ? nullptr : find_anchor(v.key);
        md << "| " << v.label << " | " << v.accuracy_pct << " | ";
        if (a) {
            const double delta = v.accuracy_pct - a->value;
            const bool ok = std::abs(delta) <= a->tolerance;
            flagged += !ok;
            md << a->value << " (" << a->citation << ") | " << delta << " | "
               << (ok ? "ok" : "DEVIATES") << " |\n";
        } else {
            md << "- | - | unanchored |\n";
        }
    }

    md << "\n## Published comparison values\n\n";
    md << "| scenario | method | accuracy % | reported in |\n|---|---|---|---|\n";
    for (const auto& r : literature_rows())
        md << "| " << r.scenario << " | " << r.method << " | " << r.accuracy
           << " | " << r.citation << " |\n";

    const auto extra = extras.str();
    if (!extra.empty()) md << "\n## Series\n\n" << extra;
    return flagged;
}

}  // namespace dpnas
