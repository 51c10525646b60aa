#pragma once

#include <array>
#include <cmath>
#include <optional>

namespace vic {

struct Vec3 {
    float x = 0;
    float y = 0;
    float z = 0;

    friend bool operator==(const Vec3&, const Vec3&) = default;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
};

inline float dot(const Vec3& a, const Vec3& b)
{
    return a.x * b.x + a.y * b.y + a.z * b.z;
}

inline Vec3 cross(const Vec3& a, const Vec3& b)
{
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline float length(const Vec3& v)
{
    return std::sqrt(dot(v, v));
}

inline Vec3 normalize(const Vec3& v)
{
    const float n = length(v);
    return n > 0 ? v * (1.0F / n) : v;
}

/// 4x4 float matrix stored column-major: m[col * 4 + row].
struct Mat4 {
    std::array<float, 16> m{};

    static Mat4 identity();
    [[nodiscard]] float at(int row, int col) const { return m[static_cast<std::size_t>(col * 4 + row)]; }
    float& at(int row, int col) { return m[static_cast<std::size_t>(col * 4 + row)]; }
    [[nodiscard]] bool is_finite() const;

    friend bool operator==(const Mat4&, const Mat4&) = default;
};

Mat4 operator*(const Mat4& a, const Mat4& b);

struct Screen {
    int width = 1280;
    int height = 720;
};

struct CameraParams {
    float fov_y_deg = 90.0F;
    float near_plane = 0.1F;
    float far_plane = 10000.0F;
};

/// Right-handed look transform: world z is up, the camera looks down -Z in
/// view space. Columns 0..2 hold the orientation axes, column 3 the
/// translation, bottom row (0, 0, 0, 1).
Mat4 view_matrix(const Vec3& eye, float yaw_deg, float pitch_deg);
/// OpenGL-style clip transform; clip.w equals view-space depth.
Mat4 perspective(const CameraParams& cam, const Screen& screen);
Vec3 forward_vector(float yaw_deg, float pitch_deg);

struct ScreenPoint {
    double x = 0;
    double y = 0;
    double depth = 0; // clip.w
};

/// Points with clip.w at or below this are treated as behind the camera.
inline constexpr double kClipEpsilon = 1e-6;

/// Throws InvalidMatrix on non-finite entries; nullopt behind the camera.
std::optional<ScreenPoint> world_to_screen(const Vec3& point, const Mat4& view_proj, const Screen& screen);

} // namespace vic
