#include <doctest.h>

#include "testutil.hpp"
#include "voxseg/net/checkpoint.hpp"
#include "voxseg/net/unet.hpp"

using namespace voxseg;
using net::fmap;

TEST_SUITE_BEGIN("network-shape");

TEST_CASE("four-level shape arithmetic reproduces the 132x132x116 -> 44x44x28 mapping") {
    CHECK(shape_arithmetic({132, 132, 116}, 4) == dims3{44, 44, 28});
}

TEST_CASE("two-level shape arithmetic: 44 -> 28") {
    // 44 -> 40, pool 20, -> 16, up 32, -> 28
    CHECK(shape_arithmetic({44, 44, 44}, 2) == dims3{28, 28, 28});
}

TEST_CASE("odd size before pooling is rejected with level and axis context") {
    CHECK_THROWS_WITH_AS(shape_arithmetic({133, 132, 116}, 4),
                         doctest::Contains("odd before pool at level 0, axis x"), error);
    CHECK_THROWS_WITH_AS(shape_arithmetic({132, 132, 117}, 4),
                         doctest::Contains("axis z"), error);
}

TEST_CASE("too-small inputs are rejected as non-positive") {
    CHECK_THROWS_WITH_AS(shape_arithmetic({10, 44, 44}, 4), doctest::Contains("non-positive"), error);
    CHECK_THROWS_AS(shape_arithmetic({4, 4, 4}, 2), error);
}

TEST_CASE("margins: paper spec gives 44 per axis, two-level desk spec gives 8") {
    unet_spec paper;
    CHECK(tile_margin(paper) == dims3{44, 44, 44});
    unet_spec desk{2, 8, 1, 4, {44, 44, 44}};
    CHECK(tile_margin(desk) == dims3{8, 8, 8});
}

TEST_CASE("default four-level spec parameter count is over 19 million") {
    unet_spec spec; // levels 4, base 32, K 8
    size_t n = net::unet3d<float>::parameter_count(spec);
    CHECK(n > 19'000'000);
    CHECK(n < 20'000'000);
    // frozen exact inventory: conv weights+biases 19,069,448 plus 2*2,336
    // batch-norm scale/shift parameters
    CHECK(n == 19'074'120);
}

TEST_CASE("parameter count depends on the layer inventory, not the tile") {
    CHECK(net::unet3d<float>::parameter_count({2, 8, 1, 4, {28, 28, 28}}) ==
          net::unet3d<float>::parameter_count({2, 8, 1, 4, {44, 44, 44}}));
    CHECK(net::unet3d<float>::parameter_count({2, 8, 1, 4, {28, 28, 28}}) !=
          net::unet3d<float>::parameter_count({2, 8, 1, 5, {28, 28, 28}}));
}

TEST_CASE("all-zero parameters produce all-zero logits") {
    unet_spec desk{2, 4, 1, 3, {20, 20, 20}};
    net::unet3d<float> net(desk);
    // params default to zero; gamma zero as well in the raw store
    fmap<float> in(1, desk.input_tile);
    rng r(55);
    for (auto& v : in.v) v = float(r.normal());
    fmap<float> logits = net.forward_train(in);
    CHECK(logits.channels == 3);
    CHECK(logits.d == shape_arithmetic(desk.input_tile, 2));
    for (float v : logits.v) CHECK(v == 0.f);
}

TEST_CASE("desk spec forward produces K x 28^3 logits from a 44^3 tile") {
    unet_spec desk{2, 8, 1, 4, {44, 44, 44}};
    net::unet3d<float> net(desk);
    net.init_params(99);
    fmap<float> in(1, desk.input_tile);
    rng r(56);
    for (auto& v : in.v) v = float(r.normal());
    fmap<float> logits = net.forward_eval(in);
    CHECK(logits.channels == 4);
    CHECK(logits.d == dims3{28, 28, 28});
    for (float v : logits.v) CHECK(std::isfinite(v));
}

TEST_CASE("identical seeds give bit-identical parameters; eval forward is deterministic") {
    unet_spec desk{2, 4, 1, 2, {20, 20, 20}};
    net::unet3d<float> a(desk), b(desk);
    a.init_params(1234);
    b.init_params(1234);
    CHECK(a.params().flat == b.params().flat);

    fmap<float> in(1, desk.input_tile);
    rng r(57);
    for (auto& v : in.v) v = float(r.normal());
    fmap<float> l1 = a.forward_eval(in);
    fmap<float> l2 = a.forward_eval(in);
    CHECK(l1.v == l2.v); // bit-identical affine eval path
}

TEST_CASE("conv stack is translation covariant before batch norm") {
    rng r(58);
    const int n = 10;
    fmap<double> base(1, {n + 1, n + 1, n + 1});
    for (auto& v : base.v) v = r.normal();
    // two views shifted by one voxel relative to each other
    fmap<double> in0(1, {n, n, n}), in1(1, {n, n, n});
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                in0.v[in0.index(x, y, z)] = base.v[base.index(x, y, z)];
                in1.v[in1.index(x, y, z)] = base.v[base.index(x + 1, y + 1, z + 1)];
            }
    std::vector<double> w1(8 * 1 * 27), b1(8), w2(4 * 8 * 27), b2(4);
    for (auto& v : w1) v = r.normal(0, 0.2);
    for (auto& v : b1) v = r.normal(0, 0.2);
    for (auto& v : w2) v = r.normal(0, 0.2);
    for (auto& v : b2) v = r.normal(0, 0.2);
    fmap<double> h0, h1, a0, a1, o0, o1;
    net::conv3_forward(in0, w1.data(), b1.data(), 8, h0);
    net::conv3_forward(in1, w1.data(), b1.data(), 8, h1);
    net::relu_forward(h0, a0);
    net::relu_forward(h1, a1);
    net::conv3_forward(a0, w2.data(), b2.data(), 4, o0);
    net::conv3_forward(a1, w2.data(), b2.data(), 4, o1);
    // o1 at p equals o0 at p+1 on the overlapping interior, bit-exactly
    const int m = n - 4;
    for (int c = 0; c < 4; ++c)
        for (int z = 0; z + 1 < m; ++z)
            for (int y = 0; y + 1 < m; ++y)
                for (int x = 0; x + 1 < m; ++x)
                    CHECK(o1.slab(c)[o1.index(x, y, z)] == o0.slab(c)[o0.index(x + 1, y + 1, z + 1)]);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    unet_spec desk{2, 4, 1, 3, {20, 20, 20}};
    net::train_state<float> st(desk);
    st.net.init_params(777);
    st.seed = 777;
    st.iteration = 42;
    st.learning_rate = 0.0125f;
    st.momentum_coeff = 0.9f;
    st.best_val_dice = 0.625;
    st.best_val_iteration = 40;
    rng r(59);
    for (auto& m : st.momentum) m = float(r.normal());
    for (auto& rm : st.net.params().running_mean)
        for (auto& v : rm) v = float(r.normal());
    for (auto& rv : st.net.params().running_var)
        for (auto& v : rv) v = float(std::abs(r.normal()) + 0.5);

    auto path = (std::filesystem::temp_directory_path() / "voxseg_ckpt_test.ckpt").string();
    net::write_checkpoint(st, path);
    auto back = net::read_checkpoint<float>(path);
    CHECK(back.net.spec().levels == 2);
    CHECK(back.net.spec().input_tile == desk.input_tile);
    CHECK(back.iteration == 42);
    CHECK(back.seed == 777);
    CHECK(back.learning_rate == 0.0125f);
    CHECK(back.best_val_dice == 0.625);
    CHECK(back.net.params().flat == st.net.params().flat);
    CHECK(back.momentum == st.momentum);
    CHECK(back.net.params().running_mean == st.net.params().running_mean);
    CHECK(back.net.params().running_var == st.net.params().running_var);

    // a second write of the reloaded state is byte-identical
    auto path2 = (std::filesystem::temp_directory_path() / "voxseg_ckpt_test2.ckpt").string();
    net::write_checkpoint(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK_THROWS_AS(net::read_checkpoint<double>(path), error); // dtype mismatch
}

TEST_SUITE_END();
