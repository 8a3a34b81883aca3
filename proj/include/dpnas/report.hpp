#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dpnas/arch.hpp"

namespace dpnas {

// Named reference architectures for the fixed-prior evaluations. Channel
// widths follow the classical LeNet-5 stem and a common two-block CNN;
// both are best-effort reconstructions, evaluated with a widened
// tolerance.
std::optional<std::string> named_reference_arch(const std::string& name);

// Published accuracies (in %) used as comparison constants in reports.
struct Anchor {
    std::string key;      // e.g. "baseline-lc/mnist"
    double value;         // published accuracy
    double tolerance;     // |measured - value| beyond this gets flagged
    std::string citation;
};

const std::vector<Anchor>& anchors();
const Anchor* find_anchor(const std::string& key);

// Literature rows rendered next to measured values (method, dataset
// scenario, accuracy, citation of the reporting work).
struct LiteratureRow {
    std::string scenario;  // multi-head/mnist, single-head/cifar10-a10d5, ...
    std::string method;
    double accuracy;
    std::string citation;
};

const std::vector<LiteratureRow>& literature_rows();

// Consolidates finished run directories into markdown tables and
// plot-ready CSVs under out_dir. Returns the number of measured values
// that deviated from their anchor beyond tolerance.
int write_report(const std::vector<std::string>& run_dirs,
                 const std::string& out_dir);

}  // namespace dpnas
