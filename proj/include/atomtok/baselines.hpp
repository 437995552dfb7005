#pragma once

// Non-learned spatial codecs used to calibrate the learned tokenizer:
// a uniform voxel grid with its analytic error model, and a k-means
// (Lloyd + k-means++) Voronoi codebook.
//
// The voxel error model works in mean-distance-to-center units:
// rmsd_v(a) = c * a with c the average distance from a unit cube's center,
// estimated once by Monte-Carlo integration (c ~ 0.48). The voxel budget for
// a cube of side A at a target accuracy is N_v = (0.48 * A / rmsd)^3, with
// the 0.48 constant used literally.

#include <cstdint>
#include <string>
#include <vector>

#include "atomtok/pointcloud.hpp"
#include "atomtok/rng.hpp"

namespace atomtok {

// Monte-Carlo constant c (1e7 samples, fixed seed; computed once).
double voxel_rmsd_constant();

// Expected mean reconstruction distance of a voxel of side a.
double voxel_rmsd(double a);

// round((0.48 * A / target_rmsd)^3).
int64_t voxel_count(double side_A, double target_rmsd);

struct VoxelGrid {
    double side_A = 0;   // cube side, centered at the origin
    double voxel_a = 0;  // voxel side

    int64_t per_axis() const { return static_cast<int64_t>(std::ceil(side_A / voxel_a)); }
    int64_t total_voxels() const { const int64_t m = per_axis(); return m * m * m; }
};

// Mixed-radix voxel ids (same packing scheme as the quantizer's token ids).
// Points outside the cube are clamped; `clamped` counts them when given.
std::vector<uint32_t> voxel_encode(const PointCloud& pc, const VoxelGrid& grid, int64_t* clamped = nullptr);
PointCloud voxel_decode(const std::vector<uint32_t>& ids, const VoxelGrid& grid);

struct VoronoiCodebook {
    std::vector<double> centroids;  // K x 3
    int64_t size() const { return static_cast<int64_t>(centroids.size()) / 3; }
};

struct KmeansStats {
    std::vector<double> objective_per_iter;  // mean squared distance, non-increasing
    int64_t reseeded_clusters = 0;
};

// k-means++ seeding followed by Lloyd iterations. Empty clusters are
// re-seeded from the point farthest from its centroid. Deterministic for a
// fixed seed (thread count does not change the result).
VoronoiCodebook kmeans_codebook(const std::vector<double>& points, int64_t k, int iters, uint64_t seed,
                                int threads = 1, KmeansStats* stats = nullptr);

// Nearest-centroid encoding (ties resolved to the lowest index).
std::vector<uint32_t> voronoi_encode(const PointCloud& pc, const VoronoiCodebook& cb, int threads = 1);
PointCloud voronoi_decode(const std::vector<uint32_t>& ids, const VoronoiCodebook& cb);

void save_codebook(const std::string& path, const VoronoiCodebook& cb);
VoronoiCodebook load_codebook(const std::string& path);

// Mean Euclidean distance between corresponding atoms (the voxel model's
// accuracy unit; distinct from the root-mean-square RMSE used for model
// evaluation).
double mean_distance(const PointCloud& a, const PointCloud& b);

}  // namespace atomtok
