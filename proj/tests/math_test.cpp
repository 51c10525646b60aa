#include "support.hpp"
#include "vic/error.hpp"
#include "vic/math.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace vic;
using vic::test::error_of;
using vic::test::reference_project;
using vic::test::Rng;

TEST(Projection, AxisPointMapsToScreenCentre)
{
    const Screen screen;
    const Mat4 vp = perspective(CameraParams{}, screen) * Mat4::identity();
    const auto p = world_to_screen(Vec3{0, 0, -25}, vp, screen);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(p->x, 640.0);
    EXPECT_EQ(p->y, 360.0);
}

TEST(Projection, BehindCameraIsNone)
{
    const Screen screen;
    const Mat4 vp = perspective(CameraParams{}, screen);
    EXPECT_FALSE(world_to_screen(Vec3{0, 0, 25}, vp, screen).has_value());
    EXPECT_FALSE(world_to_screen(Vec3{3, -2, 0}, vp, screen).has_value());
}

TEST(Projection, NonFiniteMatrixIsRejected)
{
    Mat4 m = Mat4::identity();
    m.at(1, 2) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_EQ(error_of([&] { (void)world_to_screen(Vec3{}, m, Screen{}); }), ErrorCode::InvalidMatrix);
    m.at(1, 2) = std::numeric_limits<float>::infinity();
    EXPECT_EQ(error_of([&] { (void)world_to_screen(Vec3{}, m, Screen{}); }), ErrorCode::InvalidMatrix);
}

// Half the cases are camera matrices looking at points around the camera, the
// other half are arbitrary dense matrices.
TEST(Projection, MatchesDenseReference)
{
    Rng rng(2024);
    const Screen screen;
    int visible = 0;
    for (int i = 0; i < 10000; ++i) {
        Mat4 m;
        Vec3 p;
        if (i % 2 == 0) {
            const Vec3 eye{rng.uniformf(-4000, 4000), rng.uniformf(-4000, 4000), rng.uniformf(0, 500)};
            CameraParams cam;
            cam.fov_y_deg = rng.uniformf(30, 120);
            m = perspective(cam, screen) * view_matrix(eye, rng.uniformf(-180, 180), rng.uniformf(-89, 89));
            p = Vec3{eye.x + rng.uniformf(-3000, 3000), eye.y + rng.uniformf(-3000, 3000), rng.uniformf(0, 512)};
        } else {
            for (float& v : m.m) {
                v = rng.uniformf(-2, 2);
            }
            p = Vec3{rng.uniformf(-100, 100), rng.uniformf(-100, 100), rng.uniformf(-100, 100)};
        }
        const auto got = world_to_screen(p, m, screen);
        const auto want = reference_project(p, m, screen.width, screen.height);
        ASSERT_EQ(got.has_value(), want.has_value()) << "case " << i;
        if (!got) {
            continue;
        }
        ++visible;
        EXPECT_NEAR(got->x, static_cast<double>((*want)[0]), 1e-4) << "case " << i;
        EXPECT_NEAR(got->y, static_cast<double>((*want)[1]), 1e-4) << "case " << i;
    }
    EXPECT_GT(visible, 3000);
}

TEST(ViewMatrix, OrthonormalWithUnitBottomRow)
{
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 eye{rng.uniformf(-4096, 4096), rng.uniformf(-4096, 4096), rng.uniformf(0, 512)};
        const Mat4 v = view_matrix(eye, rng.uniformf(-360, 360), rng.uniformf(-89, 89));
        EXPECT_EQ(v.at(3, 0), 0.0F);
        EXPECT_EQ(v.at(3, 1), 0.0F);
        EXPECT_EQ(v.at(3, 2), 0.0F);
        EXPECT_EQ(v.at(3, 3), 1.0F);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                double d = 0;
                for (int k = 0; k < 3; ++k) {
                    d += static_cast<double>(v.at(k, a)) * v.at(k, b);
                }
                EXPECT_NEAR(d, a == b ? 1.0 : 0.0, 1e-4);
            }
        }
    }
}

TEST(ViewMatrix, EyeToOriginAndForwardToMinusZ)
{
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        const Vec3 eye{rng.uniformf(-1000, 1000), rng.uniformf(-1000, 1000), rng.uniformf(0, 200)};
        const double yaw = rng.uniform(-180, 180);
        const double pitch = rng.uniform(-80, 80);
        const Mat4 v = view_matrix(eye, static_cast<float>(yaw), static_cast<float>(pitch));
        // Independent forward direction from spherical coordinates.
        const double yr = yaw * M_PI / 180.0;
        const double pr = pitch * M_PI / 180.0;
        const double fwd[3] = {std::cos(yr) * std::cos(pr), std::sin(yr) * std::cos(pr), std::sin(pr)};
        const double pts[2][3] = {{eye.x, eye.y, eye.z},
                                  {eye.x + 10 * fwd[0], eye.y + 10 * fwd[1], eye.z + 10 * fwd[2]}};
        const double want[2][3] = {{0, 0, 0}, {0, 0, -10}};
        for (int k = 0; k < 2; ++k) {
            for (int r = 0; r < 3; ++r) {
                const double got = v.at(r, 0) * pts[k][0] + v.at(r, 1) * pts[k][1] + v.at(r, 2) * pts[k][2] + v.at(r, 3);
                EXPECT_NEAR(got, want[k][r], 5e-3);
            }
        }
    }
}

TEST(Perspective, DepthIsClipW)
{
    const Screen screen;
    const Mat4 vp = perspective(CameraParams{}, screen);
    const auto p = world_to_screen(Vec3{1, 1, -40}, vp, screen);
    ASSERT_TRUE(p.has_value());
    EXPECT_DOUBLE_EQ(p->depth, 40.0);
}

TEST(Mat4, ProductMatchesManual)
{
    Rng rng(8);
    Mat4 a;
    Mat4 b;
    for (int i = 0; i < 16; ++i) {
        a.m[static_cast<std::size_t>(i)] = rng.uniformf(-3, 3);
        b.m[static_cast<std::size_t>(i)] = rng.uniformf(-3, 3);
    }
    const Mat4 c = a * b;
    for (int r = 0; r < 4; ++r) {
        for (int col = 0; col < 4; ++col) {
            double s = 0;
            for (int k = 0; k < 4; ++k) {
                s += static_cast<double>(a.m[static_cast<std::size_t>(k * 4 + r)]) * b.m[static_cast<std::size_t>(col * 4 + k)];
            }
            EXPECT_NEAR(c.at(r, col), s, 1e-5);
        }
    }
}
