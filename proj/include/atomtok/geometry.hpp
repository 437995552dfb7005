#pragma once

// Rigid alignment, reconstruction losses, rotation sampling, and TM-score.
// Plain double-precision entry points live in geometry.cpp; the templated
// loss ops at the bottom plug the same formulas into the autodiff graph with
// the alignment held constant.

#include <array>
#include <cmath>
#include <vector>

#include "atomtok/pointcloud.hpp"
#include "atomtok/rng.hpp"
#include "atomtok/tensor.hpp"

namespace atomtok {

using Mat3 = std::array<double, 9>;  // row-major 3x3
using Vec3 = std::array<double, 3>;

struct AlignmentResult {
    Mat3 rotation;     // proper rotation mapping the second cloud onto the first
    Vec3 translation;
    PointCloud aligned;  // second cloud after the rigid map
    double rmse = 0.0;   // Angstrom
    bool degenerate = false;  // collinear/coincident input flagged, result still valid
};

Mat3 mat3_identity();
Vec3 mat3_apply(const Mat3& m, const Vec3& v);
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Mat3 mat3_transpose(const Mat3& m);
double mat3_det(const Mat3& m);

PointCloud apply_rigid(const PointCloud& pc, const Mat3& rotation, const Vec3& translation);
PointCloud apply_rotation(const PointCloud& pc, const Mat3& rotation);

// Optimal proper rigid superposition of `moving` onto `target` under
// positional correspondence (quaternion formulation of the Kabsch/Umeyama
// problem; the returned rotation always has det = +1).
AlignmentResult kabsch_align(const PointCloud& target, const PointCloud& moving);

// sqrt(mean squared distance) between corresponding atoms, no alignment.
double rmse_value(const PointCloud& a, const PointCloud& b);

// Convenience: align then report the residual.
double kabsch_rmse(const PointCloud& target, const PointCloud& moving);

// sqrt( sum_r sum_{i != j in r} (|x_i - x_j| - |x~_i - x~_j|)^2 ) over
// ordered pairs within each residue group. Rigid-invariant by construction.
double interatomic_distance_value(const PointCloud& target, const PointCloud& recon,
                                  const std::vector<std::vector<int64_t>>& groups);

// 0.5 * aligned RMSE + 0.5 * inter-atomic distance loss.
double total_loss_value(const PointCloud& target, const PointCloud& recon,
                        const std::vector<std::vector<int64_t>>& groups);

// Uniform random proper rotation (normalized quaternion from 4 normals).
Mat3 random_rotation(RandomStream& rng);

// Rotation by angle about one of the coordinate axes (0=x, 1=y, 2=z).
Mat3 axis_rotation(int axis, double angle);

enum class TmMode { protein_ca, rna_c3 };

// Size-normalized structural similarity over backbone anchor atoms
// (CA for proteins, C3' for RNA), Kabsch-superposed on the anchors with
// positional correspondence. d0 conventions:
//   protein: d0 = 1.24 * cbrt(L - 15) - 1.8   (floored at 0.5)
//   RNA:     d0 = 0.6 * sqrt(L - 0.5) - 2.5   (floored at 0.5)
double tm_score(const PointCloud& reference, const PointCloud& model, TmMode mode);

// Indices of anchor atoms for a TM mode; empty when annotations are missing.
std::vector<int64_t> tm_anchor_indices(const PointCloud& pc, TmMode mode);

// ---------------------------------------------------------------------------
// Autodiff loss ops. The rotation/translation are captured as constants:
// gradients do not flow through the alignment (the alignment is re-solved on
// every forward pass, and at the optimum the envelope theorem makes the
// partial gradient equal the total one).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> rmse_loss_op(const PointCloud& target, const Tensor<T>& pred, const Mat3& R, const Vec3& t) {
    const int64_t n = target.size();
    if (pred.ndim() != 2 || pred.dim(0) != n || pred.dim(1) != 3)
        throw std::invalid_argument("rmse_loss: prediction " + pred.shape_str() + " vs " +
                                    std::to_string(n) + " target atoms");
    auto err = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * 3);
    const T* pp = pred.ptr();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            const double m = R[k * 3] * pp[i * 3] + R[k * 3 + 1] * pp[i * 3 + 1] +
                             R[k * 3 + 2] * pp[i * 3 + 2] + t[k];
            const double e = m - target.coords[i * 3 + k];
            (*err)[i * 3 + k] = e;
            acc += e * e;
        }
    }
    const double loss = std::sqrt(acc / static_cast<double>(n));
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
    if (auto node = detail::attach_node(out, {&pred})) {
        auto pn = pred.node;
        Node<T>* self = node.get();
        node->backprop = [self, pn, err, R, n, loss]() {
            pn->ensure_grad();
            const double g = self->grad[0];
            const double inv = g / (static_cast<double>(n) * std::max(loss, 1e-12));
            for (int64_t i = 0; i < n; ++i)
                for (int k = 0; k < 3; ++k) {
                    // d loss / d pred = R^T err / (n * loss)
                    const double v = R[k] * (*err)[i * 3] + R[3 + k] * (*err)[i * 3 + 1] +
                                     R[6 + k] * (*err)[i * 3 + 2];
                    pn->grad[i * 3 + k] += static_cast<T>(inv * v);
                }
        };
    }
    return out;
}

template <typename T>
Tensor<T> interatomic_loss_op(const PointCloud& target, const Tensor<T>& pred,
                              const std::vector<std::vector<int64_t>>& groups) {
    const int64_t n = target.size();
    if (pred.ndim() != 2 || pred.dim(0) != n || pred.dim(1) != 3)
        throw std::invalid_argument("interatomic_loss: prediction " + pred.shape_str() + " vs " +
                                    std::to_string(n) + " target atoms");
    const T* pp = pred.ptr();
    const double* px = target.coords.data();

    double q = 0.0;
    for (const auto& g : groups) {
        const size_t m = g.size();
        for (size_t a = 0; a < m; ++a)
            for (size_t b = a + 1; b < m; ++b) {
                const int64_t i = g[a], j = g[b];
                double dt = 0, dr = 0;
                for (int k = 0; k < 3; ++k) {
                    const double u = px[i * 3 + k] - px[j * 3 + k];
                    const double v = static_cast<double>(pp[i * 3 + k]) - static_cast<double>(pp[j * 3 + k]);
                    dt += u * u;
                    dr += v * v;
                }
                const double diff = std::sqrt(dt) - std::sqrt(dr);
                q += 2.0 * diff * diff;  // ordered pairs counted both ways
            }
    }
    const double loss = std::sqrt(q);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
    if (auto node = detail::attach_node(out, {&pred})) {
        auto pn = pred.node;
        auto pdata = pred.data;
        auto tcoords = target.coords;
        auto grp = groups;
        Node<T>* self = node.get();
        node->backprop = [self, pn, pdata, tcoords, grp, loss]() {
            pn->ensure_grad();
            const double g = self->grad[0];
            const double scale = g / std::max(loss, 1e-12);
            const T* pp = pdata->data();
            for (const auto& gr : grp) {
                const size_t m = gr.size();
                for (size_t a = 0; a < m; ++a)
                    for (size_t b = a + 1; b < m; ++b) {
                        const int64_t i = gr[a], j = gr[b];
                        double dt = 0, dr = 0, d[3];
                        for (int k = 0; k < 3; ++k) {
                            const double u = tcoords[i * 3 + k] - tcoords[j * 3 + k];
                            d[k] = static_cast<double>(pp[i * 3 + k]) - static_cast<double>(pp[j * 3 + k]);
                            dt += u * u;
                            dr += d[k] * d[k];
                        }
                        const double drr = std::sqrt(dr);
                        const double diff = drr - std::sqrt(dt);
                        // dq/dp_i = 4 * diff * (p_i - p_j) / |p_i - p_j|
                        const double f = scale * 2.0 * diff / std::max(drr, 1e-12);
                        for (int k = 0; k < 3; ++k) {
                            pn->grad[i * 3 + k] += static_cast<T>(f * d[k]);
                            pn->grad[j * 3 + k] -= static_cast<T>(f * d[k]);
                        }
                    }
            }
        };
    }
    return out;
}

}  // namespace atomtok
