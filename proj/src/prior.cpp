#include "dpnas/prior.hpp"

#include <cblas.h>

#include <cstdlib>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dpnas/common.hpp"
#include "dpnas/dataset.hpp"

namespace dpnas {

namespace {

// Older OpenBLAS dynamic-arch builds do not recognize recent Xeons and
// fall back to a pre-AVX kernel (~4x slower GEMM). Hint the proper core
// before the first BLAS call; an explicit user setting wins.
const bool kOpenblasCoreHint = [] {
    if (__builtin_cpu_supports("avx512f") &&
        __builtin_cpu_supports("avx512vl") &&
        __builtin_cpu_supports("avx512bw") &&
        __builtin_cpu_supports("avx512dq"))
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", /*overwrite=*/0);
    return true;
}();

}  // namespace

uint64_t DeepPrior::fingerprint() const {
    return fnv1a(serialize(spec) + "#" + std::to_string(seed));
}

namespace {

// Index of the closing conv for a skip opened at layer `opener` (the next
// conv layer after it). infer_shapes guarantees one exists in valid specs.
int closing_conv(const ArchitectureSpec& spec, int opener) {
    for (size_t i = opener + 1; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::Conv) return int(i);
    throw ValidationError("skip opened at layer " + std::to_string(opener) +
                          " has no closing conv");
}

}  // namespace

DeepPrior init_weights(const ArchitectureSpec& spec, uint64_t seed) {
    const auto shapes = infer_shapes(spec);
    if (!shapes.valid())
        throw ValidationError(std::string("invalid architecture: ") +
                              to_string(shapes.reason));

    DeepPrior prior;
    prior.spec = spec;
    prior.seed = seed;
    GaussianRng rng(seed);

    Shape3 cur = spec.input_shape;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (l.kind == LayerKind::Conv) {
            const int fan_in = cur.c * l.kernel * l.kernel;
            const float stddev = std::sqrt(2.0f / float(fan_in));
            std::vector<float> w(size_t(l.out_channels) * fan_in);
            for (auto& v : w) v = rng.next_f(stddev);
            prior.conv_weights.push_back(std::move(w));
            if (l.skip_source) {
                const int close = closing_conv(spec, int(i));
                const int proj_out = spec.layers[close].out_channels;
                const float proj_std = std::sqrt(2.0f / float(cur.c));
                std::vector<float> p(size_t(proj_out) * cur.c);
                for (auto& v : p) v = rng.next_f(proj_std);
                prior.skip_weights.push_back(std::move(p));
            }
        }
        cur = shapes.trace->after[i];
    }
    return prior;
}

namespace {

struct PadSpec {
    int out, pad_top;
};

// TF-style SAME padding: out = ceil(in/stride), pad split with the smaller
// half first. For stride 1 and odd k this is the usual k/2 on both sides.
PadSpec same_pad(int in, int k, int stride) {
    const int out = conv_out_size(in, stride);
    const int total = std::max((out - 1) * stride + k - in, 0);
    return {out, total / 2};
}

void im2col(const float* img, int c, int h, int w, int k, int stride,
            int out_h, int out_w, int pad_top, int pad_left, float* col,
            int col_stride) {
    // writes a (c*k*k) x (out_h*out_w) block into col, whose rows are
    // col_stride floats apart (several images share one matrix)
    const int plane = h * w;
    for (int ci = 0; ci < c; ++ci) {
        const float* src = img + ci * plane;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* dst = col + int64_t((ci * k + ky) * k + kx) * col_stride;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad_top + ky;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst + oy * out_w, 0, sizeof(float) * out_w);
                        continue;
                    }
                    const float* row = src + iy * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad_left + kx;
                        dst[oy * out_w + ox] =
                            (ix >= 0 && ix < w) ? row[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// out (n, oc, out_h, out_w) = W (oc, c*k*k) * im2col(in). Images are
// grouped into one wide GEMM; each output column is an independent dot
// product over the same k-order, so results do not depend on grouping.
void conv_forward(const float* in, int n, int c, int h, int w,
                  const float* weights, int oc, int k, int stride,
                  float* out, int out_h, int out_w, int pad_top, int pad_left,
                  std::vector<float>& col_buf, std::vector<float>& gemm_buf) {
    const int in_plane = c * h * w;
    const int out_plane = oc * out_h * out_w;
    const int ocols = out_h * out_w;
    const int kk = c * k * k;
    const int group = std::clamp(4096 / ocols, 1, std::max(1, n));

    col_buf.resize(size_t(kk) * group * ocols);
    gemm_buf.resize(size_t(oc) * group * ocols);
    for (int start = 0; start < n; start += group) {
        const int g = std::min(group, n - start);
        const int cols = g * ocols;
        for (int i = 0; i < g; ++i)
            im2col(in + int64_t(start + i) * in_plane, c, h, w, k, stride,
                   out_h, out_w, pad_top, pad_left,
                   col_buf.data() + int64_t(i) * ocols, cols);
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, oc, cols, kk,
                    1.0f, weights, kk, col_buf.data(), cols, 0.0f,
                    gemm_buf.data(), cols);
        // scatter the column blocks back to per-image planes
        for (int i = 0; i < g; ++i) {
            float* dst = out + int64_t(start + i) * out_plane;
            for (int o = 0; o < oc; ++o)
                std::memcpy(dst + int64_t(o) * ocols,
                            gemm_buf.data() + int64_t(o) * cols + i * ocols,
                            sizeof(float) * ocols);
        }
    }
}

// 1x1 projection sampled on the main path's output grid: rows y*stride,
// cols x*stride of the captured input, added into out.
void skip_project_add(const float* captured, int n, int c, int h, int w,
                      const float* proj, int oc, int stride, float* out,
                      int out_h, int out_w, std::vector<float>& gather_buf,
                      std::vector<float>& proj_buf) {
    const int in_plane = c * h * w;
    const int out_plane = oc * out_h * out_w;
    const int ocols = out_h * out_w;
    gather_buf.resize(size_t(c) * ocols);
    proj_buf.resize(size_t(oc) * ocols);
    for (int i = 0; i < n; ++i) {
        const float* img = captured + i * in_plane;
        for (int ci = 0; ci < c; ++ci) {
            float* dst = gather_buf.data() + ci * ocols;
            const float* src = img + ci * h * w;
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox)
                    dst[oy * out_w + ox] = src[oy * stride * w + ox * stride];
        }
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, oc, ocols, c,
                    1.0f, proj, c, gather_buf.data(), ocols, 0.0f,
                    proj_buf.data(), ocols);
        float* dst = out + i * out_plane;
        for (int j = 0; j < out_plane; ++j) dst[j] += proj_buf[j];
    }
}

void pool_forward(const float* in, int n, int c, int h, int w, int field,
                  int stride, bool avg, float* out, int out_h, int out_w) {
    const int in_plane = c * h * w;
    const int out_plane = c * out_h * out_w;
    const float inv_area = 1.0f / float(field * field);
    for (int i = 0; i < n; ++i) {
        for (int ci = 0; ci < c; ++ci) {
            const float* src = in + i * in_plane + ci * h * w;
            float* dst = out + i * out_plane + ci * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                for (int ox = 0; ox < out_w; ++ox) {
                    const int iy = oy * stride, ix = ox * stride;
                    float acc = avg ? 0.0f : -INFINITY;
                    for (int fy = 0; fy < field; ++fy) {
                        const float* row = src + (iy + fy) * w + ix;
                        for (int fx = 0; fx < field; ++fx)
                            acc = avg ? acc + row[fx] : std::max(acc, row[fx]);
                    }
                    dst[oy * out_w + ox] = avg ? acc * inv_area : acc;
                }
            }
        }
    }
}

struct PendingSkip {
    std::vector<float> captured;  // input of the opening conv
    Shape3 shape;
    int stride_product = 1;
    int weight_index = -1;
};

}  // namespace

std::vector<float> forward(const DeepPrior& prior, const float* batch,
                           int batch_n) {
    const auto& spec = prior.spec;
    const auto shapes = infer_shapes(spec);
    assert(shapes.valid());

    Shape3 cur_shape = spec.input_shape;
    std::vector<float> cur(batch, batch + size_t(batch_n) * cur_shape.flat());
    std::vector<float> next, col_buf, gemm_buf, gather_buf, proj_buf;
    std::optional<PendingSkip> pending;

    int conv_idx = 0, skip_idx = 0;
    for (size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& l = spec.layers[li];
        const Shape3 out_shape = shapes.trace->after[li];
        next.resize(size_t(batch_n) * out_shape.flat());

        if (l.kind == LayerKind::Conv) {
            const auto pv = same_pad(cur_shape.h, l.kernel, l.stride);
            const auto ph = same_pad(cur_shape.w, l.kernel, l.stride);
            conv_forward(cur.data(), batch_n, cur_shape.c, cur_shape.h,
                         cur_shape.w, prior.conv_weights[conv_idx].data(),
                         l.out_channels, l.kernel, l.stride, next.data(),
                         out_shape.h, out_shape.w, pv.pad_top, ph.pad_top,
                         col_buf, gemm_buf);
            ++conv_idx;

            if (pending && pending->weight_index >= 0) {
                pending->stride_product *= l.stride;
                skip_project_add(pending->captured.data(), batch_n,
                                 pending->shape.c, pending->shape.h,
                                 pending->shape.w,
                                 prior.skip_weights[pending->weight_index].data(),
                                 out_shape.c, pending->stride_product,
                                 next.data(), out_shape.h, out_shape.w,
                                 gather_buf, proj_buf);
                pending.reset();
            }

            if (l.skip_source) {
                PendingSkip p;
                p.captured = std::move(cur);
                p.shape = cur_shape;
                p.stride_product = l.stride;
                p.weight_index = skip_idx++;
                pending = std::move(p);
            }

            for (auto& v : next) v = std::max(v, 0.0f);  // ReLU after skip-sum
        } else {
            pool_forward(cur.data(), batch_n, cur_shape.c, cur_shape.h,
                         cur_shape.w, l.field, l.stride,
                         l.kind == LayerKind::AvgPool, next.data(), out_shape.h,
                         out_shape.w);
            if (pending) pending->stride_product *= l.stride;
        }

        cur = std::move(next);
        next.clear();
        cur_shape = out_shape;
    }
    return cur;  // (batch_n, flat_dim), row-major c,h,w per sample
}

EmbeddedDataset embed_dataset(const DeepPrior& prior, const ImageDataset& ds,
                              int batch_size) {
    const auto shapes = infer_shapes(prior.spec);
    if (!shapes.valid())
        throw ValidationError(std::string("invalid architecture: ") +
                              to_string(shapes.reason));
    if (!(ds.shape == prior.spec.input_shape))
        throw ValidationError("dataset shape does not match prior input shape");
    if (ds.n == 0) throw ValidationError("cannot embed an empty dataset");
    batch_size = std::max(1, batch_size);

    EmbeddedDataset out;
    out.n = ds.n;
    out.d = shapes.trace->flat_dim;
    out.prior_fingerprint = prior.fingerprint();
    out.labels = ds.labels;
    out.features.resize(size_t(out.n) * out.d);

    const int64_t sample = ds.sample_size();
    for (int64_t start = 0; start < ds.n; start += batch_size) {
        const int bn = int(std::min<int64_t>(batch_size, ds.n - start));
        const auto feats = forward(prior, ds.images.data() + start * sample, bn);
        std::copy(feats.begin(), feats.end(),
                  out.features.begin() + start * out.d);
    }
    return out;
}

namespace {
constexpr char kCacheMagic[4] = {'D', 'P', 'E', 'C'};
constexpr uint32_t kCacheVersion = 1;
}  // namespace

void save_embedding(const EmbeddedDataset& e, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(kCacheMagic, 4);
    auto put = [&f](const void* p, size_t n) {
        f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
    };
    put(&kCacheVersion, 4);
    put(&e.prior_fingerprint, 8);
    put(&e.n, 8);
    put(&e.d, 8);
    put(e.features.data(), e.features.size() * 4);
    put(e.labels.data(), e.labels.size() * 4);
    if (!f) throw DataError("short write on " + path);
}

bool load_embedding(const std::string& path, uint64_t expected_fingerprint,
                    EmbeddedDataset& out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return false;
    char magic[4];
    uint32_t version = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), 4);
    if (!f || std::memcmp(magic, kCacheMagic, 4) != 0 ||
        version != kCacheVersion)
        return false;
    EmbeddedDataset e;
    f.read(reinterpret_cast<char*>(&e.prior_fingerprint), 8);
    f.read(reinterpret_cast<char*>(&e.n), 8);
    f.read(reinterpret_cast<char*>(&e.d), 8);
    if (!f || e.prior_fingerprint != expected_fingerprint) return false;
    e.features.resize(size_t(e.n) * e.d);
    e.labels.resize(size_t(e.n));
    f.read(reinterpret_cast<char*>(e.features.data()),
           std::streamsize(e.features.size() * 4));
    f.read(reinterpret_cast<char*>(e.labels.data()),
           std::streamsize(e.labels.size() * 4));
    if (!f) return false;
    out = std::move(e);
    return true;
}

}  // namespace dpnas
