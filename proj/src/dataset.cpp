#include "dpnas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dpnas/common.hpp"

namespace dpnas {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw DataError("short read on " + path);
    return bytes;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
    if (off + 4 > b.size())
        throw DataError(path + ": truncated at byte offset " + std::to_string(off));
    return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) |
           (uint32_t(b[off + 2]) << 8) | uint32_t(b[off + 3]);
}

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
    uint32_t count, rows, cols;
    size_t data_off;
    std::vector<uint8_t> bytes;
};

IdxImages read_idx_images(const std::string& path) {
    IdxImages r;
    r.bytes = read_file(path);
    const uint32_t magic = be32(r.bytes, 0, path);
    if (magic != kIdxImagesMagic) {
        char buf[128];
        std::snprintf(buf, sizeof buf,
                      "%s: bad magic 0x%08x at byte offset 0 (want 0x%08x)",
                      path.c_str(), magic, kIdxImagesMagic);
        throw DataError(buf);
    }
    r.count = be32(r.bytes, 4, path);
    r.rows = be32(r.bytes, 8, path);
    r.cols = be32(r.bytes, 12, path);
    r.data_off = 16;
    const size_t want = r.data_off + size_t(r.count) * r.rows * r.cols;
    if (r.bytes.size() < want)
        throw DataError(path + ": truncated at byte offset " +
                        std::to_string(r.bytes.size()) + " (want " +
                        std::to_string(want) + ")");
    return r;
}

std::vector<uint8_t> read_idx_labels(const std::string& path, uint32_t expect_count,
                                     int num_classes) {
    auto bytes = read_file(path);
    const uint32_t magic = be32(bytes, 0, path);
    if (magic != kIdxLabelsMagic) {
        char buf[128];
        std::snprintf(buf, sizeof buf,
                      "%s: bad magic 0x%08x at byte offset 0 (want 0x%08x)",
                      path.c_str(), magic, kIdxLabelsMagic);
        throw DataError(buf);
    }
    const uint32_t count = be32(bytes, 4, path);
    if (count != expect_count)
        throw DataError(path + ": label count " + std::to_string(count) +
                        " does not match image count " + std::to_string(expect_count));
    if (bytes.size() < 8 + size_t(count))
        throw DataError(path + ": truncated at byte offset " +
                        std::to_string(bytes.size()));
    std::vector<uint8_t> labels(bytes.begin() + 8, bytes.begin() + 8 + count);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes)
            throw DataError(path + ": label " + std::to_string(labels[i]) +
                            " out of range at byte offset " + std::to_string(8 + i));
    }
    return labels;
}

ImageDataset idx_split(const std::string& dir, const std::string& images_file,
                       const std::string& labels_file, const std::string& name,
                       const std::string& tag) {
    const auto imgs = read_idx_images(dir + "/" + images_file);
    const auto labels =
        read_idx_labels(dir + "/" + labels_file, imgs.count, 10);

    ImageDataset ds;
    ds.name = name;
    ds.split_tag = tag;
    ds.shape = {1, int(imgs.rows), int(imgs.cols)};
    ds.num_classes = 10;
    ds.n = imgs.count;
    ds.images.resize(size_t(ds.n) * ds.shape.flat());
    for (size_t i = 0; i < ds.images.size(); ++i)
        ds.images[i] = float(imgs.bytes[imgs.data_off + i]) * (1.0f / 255.0f);
    ds.labels.assign(labels.begin(), labels.end());
    return ds;
}

constexpr size_t kCifarRecord = 1 + 3 * 32 * 32;

void append_cifar_batch(const std::string& path, ImageDataset& ds) {
    const auto bytes = read_file(path);
    if (bytes.size() % kCifarRecord != 0)
        throw DataError(path + ": size " + std::to_string(bytes.size()) +
                        " is not a multiple of the " +
                        std::to_string(kCifarRecord) + "-byte record");
    const size_t records = bytes.size() / kCifarRecord;
    const int64_t flat = ds.shape.flat();
    ds.images.reserve(ds.images.size() + records * flat);
    for (size_t r = 0; r < records; ++r) {
        const size_t off = r * kCifarRecord;
        const uint8_t label = bytes[off];
        if (label >= 10)
            throw DataError(path + ": label " + std::to_string(label) +
                            " out of range at byte offset " + std::to_string(off));
        ds.labels.push_back(label);
        for (int64_t j = 0; j < flat; ++j)
            ds.images.push_back(float(bytes[off + 1 + j]) * (1.0f / 255.0f));
    }
    ds.n += int64_t(records);
}

ImageDataset cifar_split(const std::string& dir,
                         const std::vector<std::string>& files,
                         const std::string& tag) {
    ImageDataset ds;
    ds.name = "cifar10";
    ds.split_tag = tag;
    ds.shape = {3, 32, 32};
    ds.num_classes = 10;
    for (const auto& f : files) append_cifar_batch(dir + "/" + f, ds);
    return ds;
}

}  // namespace

LoadedDataset load_dataset(const std::string& name, const std::string& root) {
    LoadedDataset out;
    out.name = name;
    const std::string dir = root + "/" + name;
    if (name == "mnist" || name == "fashion-mnist") {
        out.train = idx_split(dir, "train-images-idx3-ubyte",
                              "train-labels-idx1-ubyte", name, "train");
        out.test = idx_split(dir, "t10k-images-idx3-ubyte",
                             "t10k-labels-idx1-ubyte", name, "test");
    } else if (name == "cifar10") {
        out.train = cifar_split(dir,
                                {"data_batch_1.bin", "data_batch_2.bin",
                                 "data_batch_3.bin", "data_batch_4.bin",
                                 "data_batch_5.bin"},
                                "train");
        out.test = cifar_split(dir, {"test_batch.bin"}, "test");
    } else {
        throw DataError("unknown dataset '" + name +
                        "' (expected mnist, fashion-mnist or cifar10)");
    }
    return out;
}

namespace {

ImageDataset gather(const ImageDataset& ds, const std::vector<int64_t>& idx,
                    const std::string& tag) {
    ImageDataset out;
    out.name = ds.name;
    out.split_tag = tag;
    out.shape = ds.shape;
    out.num_classes = ds.num_classes;
    out.n = int64_t(idx.size());
    const int64_t flat = ds.shape.flat();
    out.images.resize(out.n * flat);
    out.labels.resize(out.n);
    for (int64_t i = 0; i < out.n; ++i) {
        std::copy_n(ds.sample(idx[i]), flat, out.images.data() + i * flat);
        out.labels[i] = ds.labels[idx[i]];
    }
    return out;
}

std::vector<std::vector<int64_t>> indices_by_class(const ImageDataset& ds) {
    std::vector<std::vector<int64_t>> per_class(ds.num_classes);
    for (int64_t i = 0; i < ds.n; ++i) per_class[ds.labels[i]].push_back(i);
    return per_class;
}

}  // namespace

std::pair<ImageDataset, ImageDataset> split_validation(const ImageDataset& ds,
                                                       double fraction,
                                                       uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ValidationError("validation fraction must be in (0,1), got " +
                              std::to_string(fraction));
    auto per_class = indices_by_class(ds);
    std::vector<int64_t> val_idx, train_idx;
    for (int c = 0; c < ds.num_classes; ++c) {
        auto& idx = per_class[c];
        if (idx.size() < 2 && !idx.empty())
            throw ValidationError("class " + std::to_string(c) +
                                  " has fewer than 2 samples");
        std::mt19937_64 rng(mix_seed(seed, uint64_t(c)));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto take = int64_t(std::llround(fraction * double(idx.size())));
        val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + take);
        train_idx.insert(train_idx.end(), idx.begin() + take, idx.end());
    }
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    return {gather(ds, train_idx, "train"), gather(ds, val_idx, "val")};
}

ImageDataset subsample_stratified(const ImageDataset& ds, int64_t cap,
                                  uint64_t seed) {
    if (cap <= 0 || cap >= ds.n) return ds;
    auto per_class = indices_by_class(ds);
    std::vector<int64_t> keep;
    for (int c = 0; c < ds.num_classes; ++c) {
        auto& idx = per_class[c];
        if (idx.empty()) continue;
        auto take = int64_t(std::llround(double(cap) * double(idx.size()) /
                                         double(ds.n)));
        take = std::clamp<int64_t>(take, 1, int64_t(idx.size()));
        std::mt19937_64 rng(mix_seed(seed, 0x5b5e7, uint64_t(c)));
        std::shuffle(idx.begin(), idx.end(), rng);
        keep.insert(keep.end(), idx.begin(), idx.begin() + take);
    }
    std::sort(keep.begin(), keep.end());
    return gather(ds, keep, ds.split_tag);
}

ImageDataset filter_classes(const ImageDataset& ds,
                            const std::vector<int>& classes) {
    std::set<int> want(classes.begin(), classes.end());
    std::vector<int64_t> keep;
    for (int64_t i = 0; i < ds.n; ++i)
        if (want.count(ds.labels[i])) keep.push_back(i);
    return gather(ds, keep, ds.split_tag);
}

TaskStream make_task_stream(const LoadedDataset& ds,
                            const std::vector<std::vector<int>>& increments) {
    std::set<int> seen;
    for (const auto& inc : increments) {
        if (inc.empty()) throw ValidationError("empty class set in task stream");
        for (int c : inc) {
            if (c < 0 || c >= ds.train.num_classes)
                throw ValidationError("unknown class id " + std::to_string(c));
            if (!seen.insert(c).second)
                throw ValidationError("class " + std::to_string(c) +
                                      " appears in more than one task");
        }
    }
    TaskStream stream;
    stream.source = &ds;
    stream.tasks = increments;
    // Class order within a task is ascending unless configured otherwise.
    for (auto& t : stream.tasks) std::sort(t.begin(), t.end());
    return stream;
}

ImageDataset TaskStream::task_train(size_t t) const {
    return filter_classes(source->train, tasks.at(t));
}

ImageDataset TaskStream::task_test(size_t t) const {
    return filter_classes(source->test, tasks.at(t));
}

std::vector<int> TaskStream::classes_up_to(size_t t) const {
    std::vector<int> all;
    for (size_t i = 0; i <= t && i < tasks.size(); ++i)
        all.insert(all.end(), tasks[i].begin(), tasks[i].end());
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<std::vector<int>> parse_increments(const std::string& text) {
    std::vector<std::vector<int>> out;
    std::stringstream ss(text);
    std::string group;
    while (std::getline(ss, group, '|')) {
        std::vector<int> ids;
        std::stringstream gs(group);
        std::string tok;
        while (std::getline(gs, tok, ',')) {
            if (tok.empty()) continue;
            ids.push_back(std::stoi(tok));
        }
        if (!ids.empty()) out.push_back(ids);
    }
    return out;
}

}  // namespace dpnas
