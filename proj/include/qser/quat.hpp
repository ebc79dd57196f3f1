#pragma once

#include <array>
#include <cmath>
#include <ostream>

namespace qser::quat {

/// Quaternion r + i·i + j·j + k·k in 64-bit precision. Components are always
/// stored in (r, i, j, k) order.
class Quaternion {
public:
    constexpr Quaternion() = default;
    /// Throws std::invalid_argument if any component is NaN or infinite.
    Quaternion(double r, double i, double j, double k);

    constexpr double r() const noexcept { return c_[0]; }
    constexpr double i() const noexcept { return c_[1]; }
    constexpr double j() const noexcept { return c_[2]; }
    constexpr double k() const noexcept { return c_[3]; }
    constexpr double operator[](std::size_t n) const noexcept { return c_[n]; }
    constexpr const std::array<double, 4>& components() const noexcept { return c_; }

    double norm() const noexcept { return std::sqrt(squared_norm()); }
    constexpr double squared_norm() const noexcept
    {
        return c_[0] * c_[0] + c_[1] * c_[1] + c_[2] * c_[2] + c_[3] * c_[3];
    }

    friend constexpr bool operator==(const Quaternion&, const Quaternion&) = default;

private:
    std::array<double, 4> c_{0.0, 0.0, 0.0, 0.0};
};

/// Real 4×4 left-multiplication matrix of a quaternion; m[row][col].
struct QuatMatrix4 {
    std::array<std::array<double, 4>, 4> m{};

    std::array<double, 4> apply(const std::array<double, 4>& v) const noexcept;
    QuatMatrix4 operator*(const QuatMatrix4& other) const noexcept;
    QuatMatrix4 transposed() const noexcept;
};

Quaternion add(const Quaternion& q, const Quaternion& p);
Quaternion conjugate(const Quaternion& q);
Quaternion scalar_mul(double lambda, const Quaternion& q);
Quaternion hamilton(const Quaternion& q, const Quaternion& p);
QuatMatrix4 to_matrix(const Quaternion& q);

/// True when m has the sign/placement pattern produced by to_matrix.
bool has_quaternion_pattern(const QuatMatrix4& m, double tol = 0.0);

/// Which component, and with which sign, sits at (row, col) of the matrix
/// form. Shared by every layer that assembles block weights.
struct BlockEntry {
    int component;
    int sign;
};
constexpr BlockEntry block_entry(int row, int col) noexcept
{
    constexpr BlockEntry table[4][4] = {
        {{0, +1}, {1, -1}, {2, -1}, {3, -1}},
        {{1, +1}, {0, +1}, {3, -1}, {2, +1}},
        {{2, +1}, {3, +1}, {0, +1}, {1, -1}},
        {{3, +1}, {2, -1}, {1, +1}, {0, +1}},
    };
    return table[row][col];
}

inline Quaternion operator+(const Quaternion& q, const Quaternion& p) { return add(q, p); }
inline Quaternion operator*(const Quaternion& q, const Quaternion& p) { return hamilton(q, p); }
inline Quaternion operator*(double s, const Quaternion& q) { return scalar_mul(s, q); }

std::ostream& operator<<(std::ostream& os, const Quaternion& q);

}  // namespace qser::quat
