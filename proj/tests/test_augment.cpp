#include <doctest.h>

#include "testutil.hpp"
#include "voxseg/augment.hpp"

using namespace voxseg;

TEST_SUITE_BEGIN("augment");

TEST_CASE("zero deformation field is the identity on volumes and labels") {
    rng r(301);
    volume v({10, 9, 8}, {1, 1, 1});
    for (auto& x : v.raw()) x = float(r.normal());
    label_map m({10, 9, 8}, {1, 1, 1}, 4);
    for (auto& x : m.raw()) x = uint8_t(r.uniform_index(4));
    deformation_field f(v.dim(), 4);
    CHECK(deform(v, f) == v);
    CHECK(deform(m, f) == m);
}

TEST_CASE("cubic B-spline weights form a partition of unity") {
    // a constant control grid must reproduce that displacement everywhere
    dims3 d{20, 16, 12};
    deformation_field f(d, 5);
    rng r(302);
    const double dx = r.normal(), dy = r.normal(), dz = r.normal();
    for (int k = -1; k < (d.z - 1) / 5 + 3; ++k)
        for (int j = -1; j < (d.y - 1) / 5 + 3; ++j)
            for (int i = -1; i < (d.x - 1) / 5 + 3; ++i) {
                f.control(0, i, j, k) = dx;
                f.control(1, i, j, k) = dy;
                f.control(2, i, j, k) = dz;
            }
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                double disp[3];
                f.displacement(x, y, z, disp);
                CHECK(std::fabs(disp[0] - dx) < 1e-9);
                CHECK(std::fabs(disp[1] - dy) < 1e-9);
                CHECK(std::fabs(disp[2] - dz) < 1e-9);
            }
}

TEST_CASE("constant unit displacement shifts a coordinate ramp by one voxel") {
    dims3 d{12, 10, 10};
    volume v(d, {1, 1, 1});
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) v.at(x, y, z) = float(x);
    deformation_field f(d, 4);
    for (int k = -1; k < (d.z - 1) / 4 + 3; ++k)
        for (int j = -1; j < (d.y - 1) / 4 + 3; ++j)
            for (int i = -1; i < (d.x - 1) / 4 + 3; ++i) f.control(0, i, j, k) = 1.0;
    volume out = deform(v, f);
    for (int z = 1; z < d.z - 1; ++z)
        for (int y = 1; y < d.y - 1; ++y)
            for (int x = 1; x < d.x - 2; ++x)
                CHECK(out.at(x, y, z) == doctest::Approx(x + 1.0).epsilon(1e-6));
}

TEST_CASE("deformed label maps use only original labels") {
    rng r(303);
    label_map m({14, 14, 14}, {1, 1, 1}, 5);
    for (auto& x : m.raw()) x = uint8_t(1 + r.uniform_index(3)); // labels {1,2,3} only
    deformation_field f = deformation_field::random(m.dim(), 4, 3.0, r);
    label_map out = deform(m, f);
    for (uint8_t l : out.raw()) {
        CHECK(l >= 1);
        CHECK(l <= 3);
    }
}

TEST_CASE("rotation by zero degrees is the identity") {
    rng r(304);
    volume v({9, 9, 9}, {1, 1, 1});
    for (auto& x : v.raw()) x = float(r.normal());
    for (int axis = 0; axis < 3; ++axis) CHECK(rotate(v, 0.0, axis) == v);
}

TEST_CASE("four 90-degree rotations compose to the identity on an asymmetric mask") {
    label_map m({11, 11, 7}, {1, 1, 1}, 2);
    rng r(305);
    for (auto& x : m.raw()) x = r.uniform01() < 0.3;
    m.at(1, 2, 3) = 1; // clearly asymmetric content
    m.at(8, 2, 1) = 0;
    label_map rot = m;
    for (int i = 0; i < 4; ++i) rot = rotate(rot, 90.0, 2);
    CHECK(rot == m);
}

TEST_CASE("rotated label maps use only original labels") {
    rng r(306);
    label_map m({10, 10, 10}, {1, 1, 1}, 6);
    for (auto& x : m.raw()) x = uint8_t(r.uniform_index(6));
    label_map out = rotate(m, 4.5, 1);
    std::vector<bool> present(6, false);
    for (uint8_t l : m.raw()) present[l] = true;
    for (uint8_t l : out.raw()) CHECK(present[l]);
}

TEST_CASE("rotation outside the configured bound is rejected") {
    volume v({6, 6, 6}, {1, 1, 1});
    CHECK_THROWS_AS(rotate_checked(v, 7.0, 0, 5.0), error);
    CHECK_NOTHROW(rotate_checked(v, -4.9, 1, 5.0));
}

TEST_CASE("window margins: paper geometry gives 44 per axis, desk two-level gives 8") {
    unet_spec paper; // 4 levels, tile 132x132x116
    sample_window w = make_window({0, 0, 0}, paper);
    CHECK(w.margin == dims3{44, 44, 44});
    CHECK(w.in_origin == dims3{-44, -44, -44});
    CHECK(w.out_dims == dims3{44, 44, 28});

    unet_spec desk{2, 8, 1, 4, {44, 44, 44}};
    sample_window wd = make_window({10, 10, 10}, desk);
    CHECK(wd.margin == dims3{8, 8, 8});
    CHECK(wd.in_origin == dims3{2, 2, 2});
}

TEST_CASE("a single-voxel region is contained in every sampled window") {
    unet_spec desk{2, 4, 1, 2, {20, 20, 20}}; // output 4^3
    mask3 region({24, 24, 24}, {1, 1, 1});
    region.at(17, 5, 11) = 1;
    rng r(307);
    for (int trial = 0; trial < 50; ++trial) {
        sample_window w = sample_window_from_region(region, desk, r);
        CHECK(w.out_origin.x <= 17);
        CHECK(17 < w.out_origin.x + w.out_dims.x);
        CHECK(w.out_origin.y <= 5);
        CHECK(5 < w.out_origin.y + w.out_dims.y);
        CHECK(w.out_origin.z <= 11);
        CHECK(11 < w.out_origin.z + w.out_dims.z);
    }
}

TEST_CASE("sampling from an empty region is an error") {
    unet_spec desk{2, 4, 1, 2, {20, 20, 20}};
    mask3 region({24, 24, 24}, {1, 1, 1});
    rng r(308);
    CHECK_THROWS_AS(sample_window_from_region(region, desk, r), error);
}

TEST_CASE("qualifying origins enumerate exactly the windows that touch the region") {
    rng r(309);
    mask3 region({10, 9, 8}, {1, 1, 1});
    for (auto& v : region.raw()) v = r.uniform01() < 0.1;
    dims3 out{4, 3, 2};
    auto origins = qualifying_origins(region, out);
    // brute force check
    size_t expect = 0;
    for (int z = 0; z + out.z <= 8; ++z)
        for (int y = 0; y + out.y <= 9; ++y)
            for (int x = 0; x + out.x <= 10; ++x) {
                bool any = false;
                for (int dz = 0; dz < out.z && !any; ++dz)
                    for (int dy = 0; dy < out.y && !any; ++dy)
                        for (int dx = 0; dx < out.x && !any; ++dx)
                            any = region.at(x + dx, y + dy, z + dz);
                expect += any;
            }
    CHECK(origins.size() == expect);
    for (const auto& o : origins) {
        bool any = false;
        for (int dz = 0; dz < out.z && !any; ++dz)
            for (int dy = 0; dy < out.y && !any; ++dy)
                for (int dx = 0; dx < out.x && !any; ++dx)
                    any = region.at(o.x + dx, o.y + dy, o.z + dz);
        CHECK(any);
    }
}

TEST_CASE("mirror padding reflects without repeating the border") {
    CHECK(mirror_index(-1, 10) == 1);
    CHECK(mirror_index(-2, 10) == 2);
    CHECK(mirror_index(10, 10) == 8);
    CHECK(mirror_index(11, 10) == 7);
    CHECK(mirror_index(0, 10) == 0);
    CHECK(mirror_index(9, 10) == 9);

    unet_spec desk{2, 4, 1, 2, {20, 20, 20}};
    volume v({24, 24, 24}, {1, 1, 1});
    for (int z = 0; z < 24; ++z)
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) v.at(x, y, z) = float(x + 100 * y + 10000 * z);
    sample_window w = make_window({0, 0, 0}, desk); // input origin -8
    net::fmap<float> tile;
    extract_input_window(v, w, tile);
    REQUIRE(tile.d == dims3{20, 20, 20});
    // tile voxel (0,0,0) maps to volume (-8,-8,-8) -> mirrored (8,8,8)
    CHECK(tile.slab(0)[tile.index(0, 0, 0)] == v.at(8, 8, 8));
    // interior maps straight through: tile (10,10,10) -> volume (2,2,2)
    CHECK(tile.slab(0)[tile.index(10, 10, 10)] == v.at(2, 2, 2));
}

TEST_CASE("image and label map see the identical deformation and rotation") {
    // volume values equal the label index; wherever the sampled neighborhood
    // is label-constant, the warped pair must agree exactly
    rng r(310);
    dims3 d{20, 18, 16};
    label_map labels(d, {1, 1, 1}, 4);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) labels.at(x, y, z) = uint8_t((x / 5 + y / 6 + z / 4) % 4);
    volume vol(d, {1, 1, 1});
    for (size_t i = 0; i < vol.size(); ++i) vol.raw()[i] = float(labels.raw()[i]);

    deformation_field field = deformation_field::random(d, 6, 1.5, r);
    const double angle = r.uniform(-5.0, 5.0);
    const int axis = int(r.uniform_index(3));
    volume vol_t = rotate(deform(vol, field), angle, axis);
    label_map lab_t = rotate(deform(labels, field), angle, axis);

    size_t checked = 0;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const float v = vol_t.at(x, y, z);
                if (v != std::floor(v)) continue; // mixed-label neighborhood
                CHECK(uint8_t(v) == lab_t.at(x, y, z));
                ++checked;
            }
    CHECK(checked > d.voxels() / 20); // plenty of label-constant neighborhoods remain
}

TEST_CASE("deformation field construction is observable for no-augmentation assertions") {
    const uint64_t before = deformation_fields_constructed().load();
    deformation_field f({8, 8, 8}, 4);
    CHECK(deformation_fields_constructed().load() == before + 1);
}

TEST_SUITE_END();
