#include "qser/quat.hpp"

#include <stdexcept>

namespace qser::quat {

Quaternion::Quaternion(double r, double i, double j, double k) : c_{r, i, j, k}
{
    for (double v : c_)
        if (!std::isfinite(v))
            throw std::invalid_argument("quaternion component is not finite");
}

std::array<double, 4> QuatMatrix4::apply(const std::array<double, 4>& v) const noexcept
{
    std::array<double, 4> out{};
    for (int r = 0; r < 4; ++r)
        out[r] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
    return out;
}

QuatMatrix4 QuatMatrix4::operator*(const QuatMatrix4& other) const noexcept
{
    QuatMatrix4 out;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k)
                acc += m[r][k] * other.m[k][c];
            out.m[r][c] = acc;
        }
    return out;
}

QuatMatrix4 QuatMatrix4::transposed() const noexcept
{
    QuatMatrix4 out;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            out.m[r][c] = m[c][r];
    return out;
}

Quaternion add(const Quaternion& q, const Quaternion& p)
{
    return {q.r() + p.r(), q.i() + p.i(), q.j() + p.j(), q.k() + p.k()};
}

Quaternion conjugate(const Quaternion& q)
{
    return {q.r(), -q.i(), -q.j(), -q.k()};
}

Quaternion scalar_mul(double lambda, const Quaternion& q)
{
    if (!std::isfinite(lambda))
        throw std::invalid_argument("scalar is not finite");
    return {lambda * q.r(), lambda * q.i(), lambda * q.j(), lambda * q.k()};
}

Quaternion hamilton(const Quaternion& q, const Quaternion& p)
{
    const double q0 = q.r(), q1 = q.i(), q2 = q.j(), q3 = q.k();
    const double p0 = p.r(), p1 = p.i(), p2 = p.j(), p3 = p.k();
    return {q0 * p0 - q1 * p1 - q2 * p2 - q3 * p3,
            q0 * p1 + q1 * p0 + q2 * p3 - q3 * p2,
            q0 * p2 - q1 * p3 + q2 * p0 + q3 * p1,
            q0 * p3 + q1 * p2 - q2 * p1 + q3 * p0};
}

QuatMatrix4 to_matrix(const Quaternion& q)
{
    QuatMatrix4 out;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const auto e = block_entry(r, c);
            out.m[r][c] = e.sign * q[static_cast<std::size_t>(e.component)];
        }
    return out;
}

bool has_quaternion_pattern(const QuatMatrix4& m, double tol)
{
    const std::array<double, 4> first{m.m[0][0], m.m[1][0], m.m[2][0], m.m[3][0]};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const auto e = block_entry(r, c);
            if (std::abs(m.m[r][c] - e.sign * first[static_cast<std::size_t>(e.component)]) > tol)
                return false;
        }
    return true;
}

std::ostream& operator<<(std::ostream& os, const Quaternion& q)
{
    return os << '(' << q.r() << ", " << q.i() << ", " << q.j() << ", " << q.k() << ')';
}

}  // namespace qser::quat
