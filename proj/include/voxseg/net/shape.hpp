#pragma once

#include <string>

#include "voxseg/volume.hpp"

namespace voxseg {

// Architecture hyperparameters of the 3D U-Net. Channels double per level;
// the synthesis path mirrors the analysis path with channel-preserving
// 2x2x2 up-convolutions.
struct unet_spec {
    int levels = 4;
    int base_channels = 32;
    int in_channels = 1;
    int num_classes = 8;
    dims3 input_tile{132, 132, 116};
};

// Valid-convolution size bookkeeping. Per level on the way down: two 3^3
// convs (-2 each), then a 2^3 pool (/2, size must be even). Two convs at the
// bottom. On the way up per level: up-conv (x2) then two convs (-2 each).
inline int shape_arithmetic_axis(int size, int levels, int axis) {
    auto axis_name = [](int a) { return a == 0 ? "x" : a == 1 ? "y" : "z"; };
    auto conv2 = [&](int s, int level) {
        s -= 4;
        if (s <= 0)
            fail_config("non-positive size after convolutions at level " + std::to_string(level) +
                        ", axis " + axis_name(axis));
        return s;
    };
    if (levels < 2) fail_config("unet needs at least 2 resolution levels");
    int s = size;
    for (int l = 0; l < levels - 1; ++l) {
        s = conv2(s, l);
        if (s % 2 != 0)
            fail_config("odd before pool at level " + std::to_string(l) + ", axis " + axis_name(axis));
        s /= 2;
        if (s <= 0) fail_config("non-positive size after pool at level " + std::to_string(l));
    }
    s = conv2(s, levels - 1);
    for (int l = levels - 2; l >= 0; --l) {
        s *= 2;
        s = conv2(s, l);
    }
    return s;
}

inline dims3 shape_arithmetic(const dims3& input, int levels) {
    return {shape_arithmetic_axis(input.x, levels, 0), shape_arithmetic_axis(input.y, levels, 1),
            shape_arithmetic_axis(input.z, levels, 2)};
}

inline dims3 output_tile(const unet_spec& s) { return shape_arithmetic(s.input_tile, s.levels); }

// Margin between input and output windows; integral by construction.
inline dims3 tile_margin(const unet_spec& s) {
    dims3 out = output_tile(s);
    return {(s.input_tile.x - out.x) / 2, (s.input_tile.y - out.y) / 2, (s.input_tile.z - out.z) / 2};
}

inline void check_spec(const unet_spec& s) {
    if (s.num_classes < 2) fail_config("num_classes must be >= 2");
    if (s.base_channels < 1) fail_config("base_channels must be >= 1");
    if (s.in_channels < 1) fail_config("in_channels must be >= 1");
    dims3 out = output_tile(s); // throws on invalid tile/levels
    dims3 m = tile_margin(s);
    if ((s.input_tile.x - out.x) % 2 || (s.input_tile.y - out.y) % 2 || (s.input_tile.z - out.z) % 2)
        fail_config("input/output tile margin is not integral");
    (void)m;
}

} // namespace voxseg
