#include "dpnas/linear_head.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include "dpnas/common.hpp"

namespace dpnas {

int LinearClassifier::row_of(int32_t class_id) const {
    for (size_t r = 0; r < class_ids.size(); ++r)
        if (class_ids[r] == class_id) return int(r);
    return -1;
}

LinearClassifier make_classifier(int64_t dim,
                                 const std::vector<int32_t>& class_ids) {
    LinearClassifier clf;
    clf.dim = dim;
    clf.class_ids = class_ids;
    clf.W.assign(size_t(dim) * class_ids.size(), 0.0f);
    clf.b.assign(class_ids.size(), 0.0f);
    return clf;
}

namespace {

void ensure_adam(AdamState& s, size_t wn, size_t bn) {
    s.mW.resize(wn, 0.0f);
    s.vW.resize(wn, 0.0f);
    s.mb.resize(bn, 0.0f);
    s.vb.resize(bn, 0.0f);
}

void adam_step(float* p, float* m, float* v, const float* g, size_t n,
               const TrainConfig& cfg, double bc1, double bc2) {
    for (size_t i = 0; i < n; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= float(cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
}

}  // namespace

void logits(const LinearClassifier& clf, const float* x, int64_t n,
            float* out) {
    const int c = clf.num_classes();
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(n), c,
                int(clf.dim), 1.0f, x, int(clf.dim), clf.W.data(),
                int(clf.dim), 0.0f, out, c);
    for (int64_t i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[i * c + j] += clf.b[j];
}

std::vector<double> train_linear(const FeatureView& data,
                                 const TrainConfig& cfg, LinearClassifier& clf,
                                 AdamState* opt) {
    if (data.d != clf.dim)
        throw ValidationError("feature dim " + std::to_string(data.d) +
                              " does not match classifier dim " +
                              std::to_string(clf.dim));
    const int c = clf.num_classes();
    std::unordered_map<int32_t, int> row;
    for (int r = 0; r < c; ++r) row[clf.class_ids[r]] = r;
    for (int64_t i = 0; i < data.n; ++i)
        if (!row.count(data.y[i]))
            throw ValidationError("label " + std::to_string(data.y[i]) +
                                  " not among classifier classes");

    AdamState local;
    AdamState& adam = opt ? *opt : local;
    ensure_adam(adam, clf.W.size(), clf.b.size());

    const int64_t bsz = std::max(1, cfg.batch);
    std::vector<int64_t> perm(data.n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(cfg.shuffle_seed);

    std::vector<float> xb(bsz * data.d), lg(bsz * c), grad(bsz * c);
    std::vector<float> dW(clf.W.size()), db(clf.b.size());
    std::vector<double> epoch_loss;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), rng);
        double loss_sum = 0.0;
        for (int64_t start = 0; start < data.n; start += bsz) {
            const int bn = int(std::min(bsz, data.n - start));
            for (int i = 0; i < bn; ++i)
                std::memcpy(xb.data() + int64_t(i) * data.d,
                            data.x + perm[start + i] * data.d,
                            sizeof(float) * data.d);

            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, bn, c,
                        int(clf.dim), 1.0f, xb.data(), int(clf.dim),
                        clf.W.data(), int(clf.dim), 0.0f, lg.data(), c);

            // softmax rows; grad = p - onehot(y)
            for (int i = 0; i < bn; ++i) {
                float* l = lg.data() + i * c;
                for (int j = 0; j < c; ++j) l[j] += clf.b[j];
                const float mx = *std::max_element(l, l + c);
                double z = 0.0;
                for (int j = 0; j < c; ++j) z += std::exp(double(l[j] - mx));
                const int yr = row[data.y[perm[start + i]]];
                loss_sum += std::log(z) - double(l[yr] - mx);
                float* g = grad.data() + i * c;
                for (int j = 0; j < c; ++j)
                    g[j] = float(std::exp(double(l[j] - mx)) / z);
                g[yr] -= 1.0f;
            }

            const float inv_b = 1.0f / float(bn);
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, c,
                        int(clf.dim), bn, inv_b, grad.data(), c, xb.data(),
                        int(clf.dim), 0.0f, dW.data(), int(clf.dim));
            std::fill(db.begin(), db.end(), 0.0f);
            for (int i = 0; i < bn; ++i)
                for (int j = 0; j < c; ++j) db[j] += grad[i * c + j] * inv_b;

            adam.t += 1;
            const double bc1 = 1.0 - std::pow(double(cfg.beta1), double(adam.t));
            const double bc2 = 1.0 - std::pow(double(cfg.beta2), double(adam.t));
            adam_step(clf.W.data(), adam.mW.data(), adam.vW.data(), dW.data(),
                      clf.W.size(), cfg, bc1, bc2);
            adam_step(clf.b.data(), adam.mb.data(), adam.vb.data(), db.data(),
                      clf.b.size(), cfg, bc1, bc2);
        }
        epoch_loss.push_back(loss_sum / double(data.n));
    }
    return epoch_loss;
}

double evaluate(const LinearClassifier& clf, const FeatureView& data) {
    if (data.d != clf.dim)
        throw ValidationError("feature dim does not match classifier dim");
    const int c = clf.num_classes();
    const int64_t chunk = 2048;
    std::vector<float> lg(chunk * c);
    int64_t correct = 0;
    for (int64_t start = 0; start < data.n; start += chunk) {
        const int64_t bn = std::min(chunk, data.n - start);
        logits(clf, data.x + start * data.d, bn, lg.data());
        for (int64_t i = 0; i < bn; ++i) {
            const float* l = lg.data() + i * c;
            int best = 0;
            for (int j = 1; j < c; ++j) {
                if (l[j] > l[best] ||
                    (l[j] == l[best] && clf.class_ids[j] < clf.class_ids[best]))
                    best = j;
            }
            correct += (clf.class_ids[best] == data.y[start + i]);
        }
    }
    return double(correct) / double(data.n);
}

void grow_classes(LinearClassifier& clf, const std::vector<int32_t>& new_ids,
                  AdamState* opt) {
    for (int32_t id : new_ids)
        if (clf.row_of(id) >= 0)
            throw ValidationError("class " + std::to_string(id) +
                                  " already present");
    clf.class_ids.insert(clf.class_ids.end(), new_ids.begin(), new_ids.end());
    clf.W.resize(size_t(clf.dim) * clf.class_ids.size(), 0.0f);
    clf.b.resize(clf.class_ids.size(), 0.0f);
    if (opt) ensure_adam(*opt, clf.W.size(), clf.b.size());
}

namespace {
constexpr char kClfMagic[4] = {'D', 'P', 'L', 'C'};
constexpr uint32_t kClfVersion = 1;
}  // namespace

void save_classifier(const LinearClassifier& clf, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    auto put = [&f](const void* p, size_t n) {
        f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
    };
    f.write(kClfMagic, 4);
    put(&kClfVersion, 4);
    const uint32_t c = uint32_t(clf.class_ids.size());
    put(&c, 4);
    put(&clf.dim, 8);
    put(clf.W.data(), clf.W.size() * 4);
    put(clf.b.data(), clf.b.size() * 4);
    put(clf.class_ids.data(), clf.class_ids.size() * 4);
    if (!f) throw DataError("short write on " + path);
}

LinearClassifier load_classifier(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    char magic[4];
    uint32_t version = 0, c = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), 4);
    if (!f || std::memcmp(magic, kClfMagic, 4) != 0 || version != kClfVersion)
        throw DataError(path + ": not a classifier checkpoint");
    f.read(reinterpret_cast<char*>(&c), 4);
    LinearClassifier clf;
    f.read(reinterpret_cast<char*>(&clf.dim), 8);
    clf.W.resize(size_t(clf.dim) * c);
    clf.b.resize(c);
    clf.class_ids.resize(c);
    f.read(reinterpret_cast<char*>(clf.W.data()),
           std::streamsize(clf.W.size() * 4));
    f.read(reinterpret_cast<char*>(clf.b.data()), std::streamsize(c * 4));
    f.read(reinterpret_cast<char*>(clf.class_ids.data()),
           std::streamsize(c * 4));
    if (!f) throw DataError(path + ": truncated checkpoint");
    return clf;
}

}  // namespace dpnas
