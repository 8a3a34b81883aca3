#pragma once

#include <optional>
#include <string>
#include <vector>

namespace dpnas {

// Search grammar: convolutions with Gaussian random filters plus max
// pooling, ReLU after every conv, optional two-layer skip projections.
// Average pooling exists only for the fixed reference architectures and
// is never enumerated as a search action.

inline constexpr int kConvChannels[] = {16, 32, 64, 128, 256, 512, 1024};
inline constexpr int kConvKernels[] = {1, 3, 5, 7, 9, 11};
inline constexpr int kConvStrides[] = {1, 2};
inline constexpr int kPoolFields[] = {2, 3, 4};
inline constexpr int kPoolStrides[] = {2, 3, 4};
inline constexpr int kMaxConvLayers = 12;
inline constexpr long long kDefaultFlatCap = 262144;

enum class LayerKind { Conv, MaxPool, AvgPool };

struct LayerDescriptor {
    LayerKind kind = LayerKind::Conv;
    // conv
    int out_channels = 0;
    int kernel = 0;
    bool skip_source = false;
    // pool
    int field = 0;
    // both
    int stride = 1;

    bool operator==(const LayerDescriptor&) const = default;
};

struct Shape3 {
    int c = 0;
    int h = 0;
    int w = 0;

    long long flat() const { return 1LL * c * h * w; }
    bool operator==(const Shape3&) const = default;
};

struct ArchitectureSpec {
    std::vector<LayerDescriptor> layers;
    Shape3 input_shape;

    bool operator==(const ArchitectureSpec&) const = default;
    int conv_count() const;
};

enum class InvalidReason {
    None,
    PoolTooLarge,
    ZeroSpatial,
    FlatDimExceeded,
    SkipAtTail,
};

const char* to_string(InvalidReason r);

// Per-layer output shapes. after[i] is the shape after layers[i].
struct ShapeTrace {
    std::vector<Shape3> after;
    long long flat_dim = 0;
};

struct ShapeResult {
    std::optional<ShapeTrace> trace;
    InvalidReason reason = InvalidReason::None;

    bool valid() const { return trace.has_value(); }
};

// Output-size rules: conv uses same-style zero padding, stride 1 keeps the
// spatial size, stride 2 gives ceil(in/2); pooling is unpadded,
// floor((in - field)/stride) + 1.
int conv_out_size(int in, int stride);
int pool_out_size(int in, int field, int stride);

ShapeResult infer_shapes(const ArchitectureSpec& spec,
                         long long flat_cap = kDefaultFlatCap);

// A construction step: either append a layer or terminate.
struct Action {
    bool terminate = false;
    LayerDescriptor layer;

    bool operator==(const Action&) const = default;
};

// Exact state of an architecture under construction. Action legality is
// decided on this; the q-table keys on its coarser projection (q_key).
struct ConstructionState {
    int depth = 0;  // convs placed so far
    bool has_layers = false;
    LayerDescriptor last_layer;
    Shape3 shape;
    bool dangling_skip = false;  // an opened skip still needs its closing conv

    bool operator==(const ConstructionState&) const = default;
};

ConstructionState start_state(Shape3 input_shape);
ConstructionState apply_action(const ConstructionState& s, const Action& a);

// Search-space restriction knobs (desk preset, toy grammars in tests).
// Defaults are the full grammar.
struct GrammarLimits {
    int max_channels = 1024;
    int max_kernel = 11;
    int max_conv_layers = kMaxConvLayers;
    long long flat_cap = kDefaultFlatCap;
};

// All grammar-legal next actions from s. TERMINATE is included once at
// least one conv is placed and no skip is dangling; when the flattened dim
// exceeds the cap, TERMINATE is withheld unless it is the only move left
// (the sampled spec is then rejected downstream, keeping sampling total).
std::vector<Action> enumerate_actions(const ConstructionState& s,
                                      const GrammarLimits& limits = {});

// Spatial-size bucket used by the q-table state key: 1-3, 4-7, 8-14, 15+.
int spatial_bucket(int spatial);

std::string layer_token(const LayerDescriptor& l);
std::string action_token(const Action& a);
std::string state_key(const ConstructionState& s);

// Line format: "in 1x28x28 | conv c64 k5 s1 | pool f2 s2". The leading
// input term is optional on parse; fallback_shape is used when absent.
std::string serialize(const ArchitectureSpec& spec);
ArchitectureSpec parse_arch(const std::string& text,
                            std::optional<Shape3> fallback_shape = std::nullopt);
Action parse_action(const std::string& token);

}  // namespace dpnas
