#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dpnas {

struct TrainConfig {
    int epochs = 30;
    float lr = 1e-3f;
    int batch = 128;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    uint64_t shuffle_seed = 0;
};

// Softmax linear classifier. Rows are appendable (single-head growth)
// without disturbing existing rows.
struct LinearClassifier {
    int64_t dim = 0;
    std::vector<int32_t> class_ids;  // row -> dataset label
    std::vector<float> W;            // C x dim, row-major
    std::vector<float> b;

    int num_classes() const { return int(class_ids.size()); }
    int row_of(int32_t class_id) const;
};

LinearClassifier make_classifier(int64_t dim,
                                 const std::vector<int32_t>& class_ids);

// Adam moments; kept outside the classifier so continual runs can carry
// optimizer state across increments.
struct AdamState {
    int64_t t = 0;
    std::vector<float> mW, vW, mb, vb;
};

struct FeatureView {
    const float* x = nullptr;
    const int32_t* y = nullptr;
    int64_t n = 0;
    int64_t d = 0;
};

// Mini-batch Adam on mean softmax cross-entropy; per-epoch shuffling is
// deterministic in cfg.shuffle_seed; no early stopping. Returns the mean
// training loss of each epoch.
std::vector<double> train_linear(const FeatureView& data,
                                 const TrainConfig& cfg, LinearClassifier& clf,
                                 AdamState* opt = nullptr);

void logits(const LinearClassifier& clf, const float* x, int64_t n,
            float* out);

// Fraction of samples whose argmax logit matches the label; ties go to the
// lowest class id.
double evaluate(const LinearClassifier& clf, const FeatureView& data);

// Appends zero-initialized rows for new_ids; existing rows (and their Adam
// moments, when given) are untouched.
void grow_classes(LinearClassifier& clf, const std::vector<int32_t>& new_ids,
                  AdamState* opt = nullptr);

void save_classifier(const LinearClassifier& clf, const std::string& path);
LinearClassifier load_classifier(const std::string& path);

}  // namespace dpnas
