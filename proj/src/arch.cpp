#include "dpnas/arch.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dpnas {

int ArchitectureSpec::conv_count() const {
    int n = 0;
    for (const auto& l : layers) n += (l.kind == LayerKind::Conv);
    return n;
}

const char* to_string(InvalidReason r) {
    switch (r) {
        case InvalidReason::None: return "none";
        case InvalidReason::PoolTooLarge: return "pool-too-large";
        case InvalidReason::ZeroSpatial: return "zero-spatial";
        case InvalidReason::FlatDimExceeded: return "flat-dim-exceeded";
        case InvalidReason::SkipAtTail: return "skip-at-tail";
    }
    return "?";
}

int conv_out_size(int in, int stride) {
    return (in + stride - 1) / stride;  // stride 1: in, stride 2: ceil(in/2)
}

int pool_out_size(int in, int field, int stride) {
    return (in - field) / stride + 1;
}

ShapeResult infer_shapes(const ArchitectureSpec& spec, long long flat_cap) {
    ShapeTrace trace;
    Shape3 cur = spec.input_shape;
    int convs_after_skip = -1;  // >= 0 while a skip span is open

    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::Conv) {
            cur = {l.out_channels, conv_out_size(cur.h, l.stride),
                   conv_out_size(cur.w, l.stride)};
            if (convs_after_skip >= 0) ++convs_after_skip;
            if (convs_after_skip == 1) convs_after_skip = -1;  // span closed
            if (l.skip_source) convs_after_skip = 0;
        } else {
            if (cur.h < l.field || cur.w < l.field)
                return {std::nullopt, InvalidReason::PoolTooLarge};
            cur = {cur.c, pool_out_size(cur.h, l.field, l.stride),
                   pool_out_size(cur.w, l.field, l.stride)};
        }
        if (cur.h < 1 || cur.w < 1)
            return {std::nullopt, InvalidReason::ZeroSpatial};
        trace.after.push_back(cur);
    }

    if (convs_after_skip >= 0) return {std::nullopt, InvalidReason::SkipAtTail};
    trace.flat_dim = cur.flat();
    if (trace.flat_dim > flat_cap)
        return {std::nullopt, InvalidReason::FlatDimExceeded};
    return {trace, InvalidReason::None};
}

ConstructionState start_state(Shape3 input_shape) {
    ConstructionState s;
    s.shape = input_shape;
    return s;
}

ConstructionState apply_action(const ConstructionState& s, const Action& a) {
    if (a.terminate) throw std::logic_error("apply_action: terminal action");
    ConstructionState n = s;
    const auto& l = a.layer;
    if (l.kind == LayerKind::Conv) {
        n.depth = s.depth + 1;
        n.shape = {l.out_channels, conv_out_size(s.shape.h, l.stride),
                   conv_out_size(s.shape.w, l.stride)};
        n.dangling_skip = l.skip_source;
    } else {
        n.shape = {s.shape.c, pool_out_size(s.shape.h, l.field, l.stride),
                   pool_out_size(s.shape.w, l.field, l.stride)};
    }
    n.has_layers = true;
    n.last_layer = l;
    return n;
}

std::vector<Action> enumerate_actions(const ConstructionState& s,
                                      const GrammarLimits& limits) {
    std::vector<Action> out;

    const int conv_cap = std::min(limits.max_conv_layers, kMaxConvLayers);
    if (s.depth < conv_cap) {
        const bool room_for_another = s.depth + 1 < conv_cap;
        for (int c : kConvChannels) {
            if (c > limits.max_channels) continue;
            for (int k : kConvKernels) {
                if (k > limits.max_kernel) continue;
                for (int st : kConvStrides) {
                    LayerDescriptor l;
                    l.kind = LayerKind::Conv;
                    l.out_channels = c;
                    l.kernel = k;
                    l.stride = st;
                    out.push_back({false, l});
                    if (room_for_another) {
                        l.skip_source = true;
                        out.push_back({false, l});
                    }
                }
            }
        }
    }

    // Pooling: not as the first layer, never two in a row, field must fit.
    const bool last_was_pool =
        s.has_layers && s.last_layer.kind != LayerKind::Conv;
    if (s.has_layers && !last_was_pool) {
        for (int f : kPoolFields) {
            if (f > s.shape.h || f > s.shape.w) continue;
            for (int st : kPoolStrides) {
                LayerDescriptor l;
                l.kind = LayerKind::MaxPool;
                l.field = f;
                l.stride = st;
                out.push_back({false, l});
            }
        }
    }

    if (s.depth >= 1 && !s.dangling_skip) {
        if (s.shape.flat() <= limits.flat_cap || out.empty())
            out.push_back({true, {}});
    }
    return out;
}

int spatial_bucket(int spatial) {
    if (spatial <= 3) return 0;
    if (spatial <= 7) return 1;
    if (spatial <= 14) return 2;
    return 3;
}

std::string layer_token(const LayerDescriptor& l) {
    char buf[64];
    switch (l.kind) {
        case LayerKind::Conv:
            std::snprintf(buf, sizeof buf, "conv c%d k%d s%d%s", l.out_channels,
                          l.kernel, l.stride, l.skip_source ? " skip" : "");
            break;
        case LayerKind::MaxPool:
            std::snprintf(buf, sizeof buf, "pool f%d s%d", l.field, l.stride);
            break;
        case LayerKind::AvgPool:
            std::snprintf(buf, sizeof buf, "apool f%d s%d", l.field, l.stride);
            break;
    }
    return buf;
}

std::string action_token(const Action& a) {
    return a.terminate ? "terminate" : layer_token(a.layer);
}

std::string state_key(const ConstructionState& s) {
    static const char* bucket_names[] = {"1-3", "4-7", "8-14", "15+"};
    std::string key = "d" + std::to_string(s.depth) + "|";
    key += s.has_layers ? layer_token(s.last_layer) : "start";
    key += "|sb";
    key += bucket_names[spatial_bucket(std::min(s.shape.h, s.shape.w))];
    if (s.dangling_skip) key += "|open-skip";
    return key;
}

std::string serialize(const ArchitectureSpec& spec) {
    std::string out = "in " + std::to_string(spec.input_shape.c) + "x" +
                      std::to_string(spec.input_shape.h) + "x" +
                      std::to_string(spec.input_shape.w);
    for (const auto& l : spec.layers) out += " | " + layer_token(l);
    return out;
}

namespace {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s, char delim) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, delim)) parts.push_back(item);
    return parts;
}

std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> w;
    std::stringstream ss(s);
    std::string t;
    while (ss >> t) w.push_back(t);
    return w;
}

int field_value(const std::string& w, char prefix, const std::string& ctx) {
    if (w.size() < 2 || w[0] != prefix)
        throw ParseError("expected '" + std::string(1, prefix) +
                         "<num>' in '" + ctx + "', got '" + w + "'");
    return std::stoi(w.substr(1));
}

}  // namespace

Action parse_action(const std::string& token) {
    const auto w = words(token);
    if (w.empty()) throw ParseError("empty action token");
    if (w[0] == "terminate") return {true, {}};

    LayerDescriptor l;
    if (w[0] == "conv") {
        if (w.size() < 4) throw ParseError("conv needs c/k/s: '" + token + "'");
        l.kind = LayerKind::Conv;
        l.out_channels = field_value(w[1], 'c', token);
        l.kernel = field_value(w[2], 'k', token);
        l.stride = field_value(w[3], 's', token);
        if (w.size() > 4) {
            if (w[4] != "skip") throw ParseError("bad conv suffix: '" + token + "'");
            l.skip_source = true;
        }
    } else if (w[0] == "pool" || w[0] == "apool") {
        if (w.size() != 3) throw ParseError("pool needs f/s: '" + token + "'");
        l.kind = w[0] == "pool" ? LayerKind::MaxPool : LayerKind::AvgPool;
        l.field = field_value(w[1], 'f', token);
        l.stride = field_value(w[2], 's', token);
    } else {
        throw ParseError("unknown layer '" + w[0] + "'");
    }
    return {false, l};
}

ArchitectureSpec parse_arch(const std::string& text,
                            std::optional<Shape3> fallback_shape) {
    ArchitectureSpec spec;
    bool have_shape = false;
    int col = 1;
    for (const auto& raw : split(text, '|')) {
        const auto w = words(raw);
        if (w.empty()) throw ParseError("empty layer term at column " +
                                        std::to_string(col));
        if (w[0] == "in") {
            if (w.size() != 2) throw ParseError("input term needs CxHxW");
            const auto dims = split(w[1], 'x');
            if (dims.size() != 3) throw ParseError("input term needs CxHxW");
            spec.input_shape = {std::stoi(dims[0]), std::stoi(dims[1]),
                                std::stoi(dims[2])};
            have_shape = true;
        } else {
            const Action a = parse_action(raw);
            if (a.terminate) throw ParseError("'terminate' is not a layer");
            spec.layers.push_back(a.layer);
        }
        col += static_cast<int>(raw.size()) + 1;
    }
    if (!have_shape) {
        if (!fallback_shape)
            throw ParseError("no input shape in text and no fallback given");
        spec.input_shape = *fallback_shape;
    }
    return spec;
}

}  // namespace dpnas
