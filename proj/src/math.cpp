#include "vic/math.hpp"

#include "vic/error.hpp"

#include <numbers>

namespace vic {

Mat4 Mat4::identity()
{
    Mat4 r;
    for (int i = 0; i < 4; ++i) {
        r.at(i, i) = 1.0F;
    }
    return r;
}

bool Mat4::is_finite() const
{
    for (float v : m) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

Mat4 operator*(const Mat4& a, const Mat4& b)
{
    Mat4 r;
    for (int row = 0; row < 4; ++row) {
        for (int col = 0; col < 4; ++col) {
            double s = 0;
            for (int k = 0; k < 4; ++k) {
                s += static_cast<double>(a.at(row, k)) * b.at(k, col);
            }
            r.at(row, col) = static_cast<float>(s);
        }
    }
    return r;
}

Vec3 forward_vector(float yaw_deg, float pitch_deg)
{
    const double yaw = yaw_deg * std::numbers::pi / 180.0;
    const double pitch = pitch_deg * std::numbers::pi / 180.0;
    return {static_cast<float>(std::cos(yaw) * std::cos(pitch)), static_cast<float>(std::sin(yaw) * std::cos(pitch)),
            static_cast<float>(std::sin(pitch))};
}

Mat4 view_matrix(const Vec3& eye, float yaw_deg, float pitch_deg)
{
    const Vec3 f = normalize(forward_vector(yaw_deg, pitch_deg));
    const Vec3 r = normalize(cross(f, Vec3{0, 0, 1}));
    const Vec3 u = cross(r, f);
    // Rows are the camera basis; the matrix maps world into view space.
    Mat4 v = Mat4::identity();
    v.at(0, 0) = r.x;
    v.at(0, 1) = r.y;
    v.at(0, 2) = r.z;
    v.at(1, 0) = u.x;
    v.at(1, 1) = u.y;
    v.at(1, 2) = u.z;
    v.at(2, 0) = -f.x;
    v.at(2, 1) = -f.y;
    v.at(2, 2) = -f.z;
    v.at(0, 3) = -dot(r, eye);
    v.at(1, 3) = -dot(u, eye);
    v.at(2, 3) = dot(f, eye);
    return v;
}

Mat4 perspective(const CameraParams& cam, const Screen& screen)
{
    const double f = 1.0 / std::tan(cam.fov_y_deg * std::numbers::pi / 360.0);
    const double aspect = static_cast<double>(screen.width) / screen.height;
    const double n = cam.near_plane;
    const double fa = cam.far_plane;
    Mat4 p;
    p.at(0, 0) = static_cast<float>(f / aspect);
    p.at(1, 1) = static_cast<float>(f);
    p.at(2, 2) = static_cast<float>((fa + n) / (n - fa));
    p.at(2, 3) = static_cast<float>(2.0 * fa * n / (n - fa));
    p.at(3, 2) = -1.0F;
    return p;
}

std::optional<ScreenPoint> world_to_screen(const Vec3& point, const Mat4& view_proj, const Screen& screen)
{
    if (!view_proj.is_finite()) {
        fail(ErrorCode::InvalidMatrix, "view-projection matrix has non-finite entries");
    }
    const double in[4] = {point.x, point.y, point.z, 1.0};
    double clip[4] = {0, 0, 0, 0};
    for (int row = 0; row < 4; ++row) {
        for (int k = 0; k < 4; ++k) {
            clip[row] += static_cast<double>(view_proj.at(row, k)) * in[k];
        }
    }
    if (!(clip[3] > kClipEpsilon)) {
        return std::nullopt;
    }
    const double ndc_x = clip[0] / clip[3];
    const double ndc_y = clip[1] / clip[3];
    return ScreenPoint{(ndc_x + 1.0) / 2.0 * screen.width, (1.0 - ndc_y) / 2.0 * screen.height, clip[3]};
}

} // namespace vic
