#include "atomtok/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace atomtok {

Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += a[i * 3 + k] * b[k * 3 + j];
            c[i * 3 + j] = acc;
        }
    return c;
}

Mat3 mat3_transpose(const Mat3& m) { return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}; }

double mat3_det(const Mat3& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

PointCloud apply_rigid(const PointCloud& pc, const Mat3& rotation, const Vec3& translation) {
    PointCloud out = pc;
    const int64_t n = pc.size();
    for (int64_t i = 0; i < n; ++i) {
        const Vec3 v = mat3_apply(rotation, {pc.coords[i * 3], pc.coords[i * 3 + 1], pc.coords[i * 3 + 2]});
        for (int k = 0; k < 3; ++k) out.coords[i * 3 + k] = v[k] + translation[k];
    }
    return out;
}

PointCloud apply_rotation(const PointCloud& pc, const Mat3& rotation) {
    return apply_rigid(pc, rotation, {0, 0, 0});
}

namespace {

// Cyclic Jacobi eigensolver for a symmetric n x n matrix (n small).
// Fills eigenvalues and column eigenvectors; deterministic sweep order.
template <int N>
void jacobi_eigen(std::array<double, N * N> a, std::array<double, N>& eval,
                  std::array<double, N * N>& evec) {
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) evec[i * N + j] = i == j ? 1.0 : 0.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0;
        for (int p = 0; p < N; ++p)
            for (int q = p + 1; q < N; ++q) off += a[p * N + q] * a[p * N + q];
        if (off < 1e-30) break;
        for (int p = 0; p < N; ++p)
            for (int q = p + 1; q < N; ++q) {
                const double apq = a[p * N + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * N + q] - a[p * N + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < N; ++k) {
                    const double akp = a[k * N + p], akq = a[k * N + q];
                    a[k * N + p] = c * akp - s * akq;
                    a[k * N + q] = s * akp + c * akq;
                }
                for (int k = 0; k < N; ++k) {
                    const double apk = a[p * N + k], aqk = a[q * N + k];
                    a[p * N + k] = c * apk - s * aqk;
                    a[q * N + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < N; ++k) {
                    const double vkp = evec[k * N + p], vkq = evec[k * N + q];
                    evec[k * N + p] = c * vkp - s * vkq;
                    evec[k * N + q] = s * vkp + c * vkq;
                }
            }
    }
    for (int i = 0; i < N; ++i) eval[i] = a[i * N + i];
}

Mat3 quat_to_rotation(double w, double x, double y, double z) {
    const double norm = std::sqrt(w * w + x * x + y * y + z * z);
    w /= norm;
    x /= norm;
    y /= norm;
    z /= norm;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

// Rank of a centered point set (number of scatter eigenvalues above a
// relative floor). Rank <= 1 means coincident or collinear.
int scatter_rank(const std::vector<double>& coords, const Vec3& centroid) {
    const int64_t n = static_cast<int64_t>(coords.size()) / 3;
    std::array<double, 9> s{};
    for (int64_t i = 0; i < n; ++i) {
        const double d[3] = {coords[i * 3] - centroid[0], coords[i * 3 + 1] - centroid[1],
                             coords[i * 3 + 2] - centroid[2]};
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) s[a * 3 + b] += d[a] * d[b];
    }
    std::array<double, 3> ev{};
    std::array<double, 9> vec{};
    jacobi_eigen<3>(s, ev, vec);
    const double mx = std::max({std::abs(ev[0]), std::abs(ev[1]), std::abs(ev[2]), 1e-300});
    int rank = 0;
    for (double e : ev)
        if (e > 1e-9 * mx) ++rank;
    return rank;
}

}  // namespace

AlignmentResult kabsch_align(const PointCloud& target, const PointCloud& moving) {
    const int64_t n = target.size();
    if (n != moving.size())
        throw std::invalid_argument("kabsch_align: atom counts differ (" + std::to_string(n) + " vs " +
                                    std::to_string(moving.size()) + ")");
    if (n < 1) throw std::invalid_argument("kabsch_align: empty clouds");

    const Vec3 cx = target.centroid();
    const Vec3 cp = moving.centroid();

    // Cross-covariance S[a][b] = sum_i p'_{i,a} x'_{i,b} (moving, target).
    std::array<double, 9> S{};
    for (int64_t i = 0; i < n; ++i) {
        const double p[3] = {moving.coords[i * 3] - cp[0], moving.coords[i * 3 + 1] - cp[1],
                             moving.coords[i * 3 + 2] - cp[2]};
        const double x[3] = {target.coords[i * 3] - cx[0], target.coords[i * 3 + 1] - cx[1],
                             target.coords[i * 3 + 2] - cx[2]};
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) S[a * 3 + b] += p[a] * x[b];
    }

    // Horn's quaternion form: the eigenvector of K for the largest
    // eigenvalue is the optimal rotation, proper by construction.
    const double sxx = S[0], sxy = S[1], sxz = S[2];
    const double syx = S[3], syy = S[4], syz = S[5];
    const double szx = S[6], szy = S[7], szz = S[8];
    std::array<double, 16> K = {
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz};
    std::array<double, 4> eval{};
    std::array<double, 16> evec{};
    jacobi_eigen<4>(K, eval, evec);
    int best = 0;
    for (int i = 1; i < 4; ++i)
        if (eval[i] > eval[best]) best = i;

    AlignmentResult res;
    res.rotation = quat_to_rotation(evec[0 * 4 + best], evec[1 * 4 + best], evec[2 * 4 + best],
                                    evec[3 * 4 + best]);
    const Vec3 rc = mat3_apply(res.rotation, cp);
    res.translation = {cx[0] - rc[0], cx[1] - rc[1], cx[2] - rc[2]};
    res.aligned = apply_rigid(moving, res.rotation, res.translation);
    res.rmse = rmse_value(target, res.aligned);
    res.degenerate = std::min(scatter_rank(target.coords, cx), scatter_rank(moving.coords, cp)) <= 1;
    return res;
}

double rmse_value(const PointCloud& a, const PointCloud& b) {
    const int64_t n = a.size();
    if (n != b.size()) throw std::invalid_argument("rmse_value: atom counts differ");
    double acc = 0;
    for (size_t i = 0; i < a.coords.size(); ++i) {
        const double d = a.coords[i] - b.coords[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(n));
}

double kabsch_rmse(const PointCloud& target, const PointCloud& moving) {
    return kabsch_align(target, moving).rmse;
}

double interatomic_distance_value(const PointCloud& target, const PointCloud& recon,
                                  const std::vector<std::vector<int64_t>>& groups) {
    if (target.size() != recon.size()) throw std::invalid_argument("interatomic: atom counts differ");
    double q = 0;
    for (const auto& g : groups) {
        for (size_t a = 0; a < g.size(); ++a)
            for (size_t b = a + 1; b < g.size(); ++b) {
                const int64_t i = g[a], j = g[b];
                double dt = 0, dr = 0;
                for (int k = 0; k < 3; ++k) {
                    const double u = target.coords[i * 3 + k] - target.coords[j * 3 + k];
                    const double v = recon.coords[i * 3 + k] - recon.coords[j * 3 + k];
                    dt += u * u;
                    dr += v * v;
                }
                const double diff = std::sqrt(dt) - std::sqrt(dr);
                q += 2.0 * diff * diff;
            }
    }
    return std::sqrt(q);
}

double total_loss_value(const PointCloud& target, const PointCloud& recon,
                        const std::vector<std::vector<int64_t>>& groups) {
    const AlignmentResult al = kabsch_align(target, recon);
    return 0.5 * al.rmse + 0.5 * interatomic_distance_value(target, recon, groups);
}

Mat3 random_rotation(RandomStream& rng) {
    double q[4];
    for (double& v : q) v = rng.normal();
    return quat_to_rotation(q[0], q[1], q[2], q[3]);
}

Mat3 axis_rotation(int axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    switch (axis) {
        case 0: return {1, 0, 0, 0, c, -s, 0, s, c};
        case 1: return {c, 0, s, 0, 1, 0, -s, 0, c};
        case 2: return {c, -s, 0, s, c, 0, 0, 0, 1};
        default: throw std::invalid_argument("axis_rotation: axis must be 0, 1 or 2");
    }
}

std::vector<int64_t> tm_anchor_indices(const PointCloud& pc, TmMode mode) {
    std::vector<int64_t> idx;
    if (pc.atom_name.empty()) return idx;
    const char* want = mode == TmMode::protein_ca ? "CA" : "C3'";
    for (int64_t i = 0; i < pc.size(); ++i)
        if (pc.atom_name[i] == want) idx.push_back(i);
    return idx;
}

double tm_score(const PointCloud& reference, const PointCloud& model, TmMode mode) {
    if (reference.size() != model.size()) throw std::invalid_argument("tm_score: atom counts differ");
    const auto anchors = tm_anchor_indices(reference, mode);
    if (anchors.empty()) throw std::invalid_argument("tm_score: no anchor atoms found");

    auto subset = [&](const PointCloud& pc) {
        PointCloud s;
        for (int64_t i : anchors) {
            s.coords.push_back(pc.coords[i * 3]);
            s.coords.push_back(pc.coords[i * 3 + 1]);
            s.coords.push_back(pc.coords[i * 3 + 2]);
        }
        return s;
    };
    const PointCloud ref_a = subset(reference);
    const PointCloud mod_a = subset(model);
    const AlignmentResult al = kabsch_align(ref_a, mod_a);

    const double L = static_cast<double>(anchors.size());
    double d0;
    if (mode == TmMode::protein_ca)
        d0 = L > 15 ? 1.24 * std::cbrt(L - 15.0) - 1.8 : 0.5;
    else
        d0 = L > 0.5 ? 0.6 * std::sqrt(L - 0.5) - 2.5 : 0.5;
    d0 = std::max(d0, 0.5);

    double acc = 0;
    for (int64_t i = 0; i < ref_a.size(); ++i) {
        double d2 = 0;
        for (int k = 0; k < 3; ++k) {
            const double d = ref_a.coords[i * 3 + k] - al.aligned.coords[i * 3 + k];
            d2 += d * d;
        }
        acc += 1.0 / (1.0 + d2 / (d0 * d0));
    }
    return acc / L;
}

}  // namespace atomtok
