#include <algorithm>
#include <cmath>
#include <filesystem>

#include "atomtok/baselines.hpp"
#include "atomtok/data.hpp"
#include "atomtok/geometry.hpp"
#include "doctest.h"

using namespace atomtok;

TEST_CASE("voxel constant: Monte-Carlo lands on the mean center distance of a unit cube") {
    const double c = voxel_rmsd_constant();
    // Closed form: ~0.480296. The headline approximation is 0.48.
    CHECK(std::abs(c - 0.480296) <= 0.001);
    CHECK(std::abs(c - 0.48) <= 0.005);
    CHECK(voxel_rmsd(2.0) == doctest::Approx(2.0 * c));
    CHECK_THROWS_AS(voxel_rmsd(0.0), std::invalid_argument);
}

TEST_CASE("voxel counts: headline cases and scaling consistency") {
    CHECK(voxel_count(100, 1.0) == 110592);
    // A = m*a at target 0.48*a gives exactly m^3.
    CHECK(voxel_count(8.0 * 2.5, 0.48 * 2.5) == 8 * 8 * 8);
    CHECK(voxel_count(24, 0.2) == 191103);
}

TEST_CASE("voxel codec: centers are exact, ids in range, mean error matches the model") {
    VoxelGrid grid{10.0, 1.0};
    CHECK(grid.per_axis() == 10);
    CHECK(grid.total_voxels() == 1000);

    // A voxel center round-trips exactly.
    PointCloud pc;
    pc.coords = {0.5, 0.5, 0.5, -4.5, 3.5, -0.5};
    auto ids = voxel_encode(pc, grid);
    auto back = voxel_decode(ids, grid);
    for (size_t i = 0; i < pc.coords.size(); ++i) CHECK(back.coords[i] == doctest::Approx(pc.coords[i]));

    // Uniform points: empirical mean distance within 2% of c*a.
    RandomStream rng(91);
    PointCloud uni;
    const int64_t n = 100000;
    uni.coords.resize(n * 3);
    for (auto& v : uni.coords) v = rng.uniform(-5.0, 5.0);
    int64_t clamped = 0;
    auto uids = voxel_encode(uni, grid, &clamped);
    CHECK(clamped == 0);
    for (uint32_t id : uids) CHECK(id < grid.total_voxels());
    const double err = mean_distance(uni, voxel_decode(uids, grid));
    CHECK(std::abs(err - voxel_rmsd(1.0)) / voxel_rmsd(1.0) <= 0.02);
}

TEST_CASE("voxel codec clamps and counts out-of-cube points") {
    VoxelGrid grid{4.0, 1.0};
    PointCloud pc;
    pc.coords = {100.0, 0.0, 0.0};
    int64_t clamped = 0;
    auto ids = voxel_encode(pc, grid, &clamped);
    CHECK(clamped == 1);
    CHECK(ids[0] < grid.total_voxels());
}

TEST_CASE("kmeans: memorization at K = sample size gives zero error") {
    RandomStream rng(92);
    std::vector<double> pts;
    for (int i = 0; i < 40 * 3; ++i) pts.push_back(rng.normal() * 3);
    auto cb = kmeans_codebook(pts, 40, 10, 7);
    PointCloud pc;
    pc.coords = pts;
    auto recon = voronoi_decode(voronoi_encode(pc, cb), cb);
    CHECK(rmse_value(pc, recon) <= 1e-9);
}

TEST_CASE("kmeans: Lloyd objective is non-increasing per iteration") {
    RandomStream rng(93);
    std::vector<double> pts;
    for (int i = 0; i < 3000; ++i) pts.push_back(rng.normal() * 4);
    KmeansStats stats;
    kmeans_codebook(pts, 16, 20, 11, 1, &stats);
    REQUIRE(stats.objective_per_iter.size() == 20);
    for (size_t i = 1; i < stats.objective_per_iter.size(); ++i)
        CHECK(stats.objective_per_iter[i] <= stats.objective_per_iter[i - 1] + 1e-12);
}

TEST_CASE("kmeans: three-cluster toy recovers pair midpoints (exhaustive oracle)") {
    // Points on the x axis: {0, 0.1, 5, 5.1, 10, 10.1}; optimum is the pair
    // midpoints, verified by enumerating all 3^6 assignments.
    std::vector<double> xs = {0.0, 0.1, 5.0, 5.1, 10.0, 10.1};
    std::vector<double> pts;
    for (double x : xs) {
        pts.push_back(x);
        pts.push_back(0);
        pts.push_back(0);
    }
    double best_cost = 1e300;
    std::vector<double> best_centroids;
    for (int mask = 0; mask < 729; ++mask) {
        int m = mask;
        int assign[6];
        bool used[3] = {false, false, false};
        for (int i = 0; i < 6; ++i) {
            assign[i] = m % 3;
            used[assign[i]] = true;
            m /= 3;
        }
        if (!used[0] || !used[1] || !used[2]) continue;
        double sum[3] = {0, 0, 0};
        int cnt[3] = {0, 0, 0};
        for (int i = 0; i < 6; ++i) {
            sum[assign[i]] += xs[i];
            cnt[assign[i]] += 1;
        }
        double cost = 0;
        for (int i = 0; i < 6; ++i) {
            const double c = sum[assign[i]] / cnt[assign[i]];
            cost += (xs[i] - c) * (xs[i] - c);
        }
        if (cost < best_cost) {
            best_cost = cost;
            best_centroids = {sum[0] / cnt[0], sum[1] / cnt[1], sum[2] / cnt[2]};
        }
    }
    std::sort(best_centroids.begin(), best_centroids.end());
    REQUIRE(best_centroids.size() == 3);
    CHECK(best_centroids[0] == doctest::Approx(0.05));
    CHECK(best_centroids[1] == doctest::Approx(5.05));
    CHECK(best_centroids[2] == doctest::Approx(10.05));

    auto cb = kmeans_codebook(pts, 3, 30, 13);
    std::vector<double> got = {cb.centroids[0], cb.centroids[3], cb.centroids[6]};
    std::sort(got.begin(), got.end());
    for (int i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(best_centroids[i]).epsilon(1e-9));
}

TEST_CASE("kmeans is deterministic in the seed and independent of thread count") {
    RandomStream rng(94);
    std::vector<double> pts;
    for (int i = 0; i < 9000; ++i) pts.push_back(rng.normal() * 2);
    auto a = kmeans_codebook(pts, 32, 8, 21, 1);
    auto b = kmeans_codebook(pts, 32, 8, 21, 2);
    REQUIRE(a.centroids.size() == b.centroids.size());
    for (size_t i = 0; i < a.centroids.size(); ++i) CHECK(a.centroids[i] == b.centroids[i]);
}

TEST_CASE("kmeans beats the uniform voxel grid at equal codebook size on structure points") {
    RandomStream rng(95);
    std::vector<PointCloud> clouds;
    std::vector<double> sample;
    double extent = 0;
    for (int i = 0; i < 20; ++i) {
        PointCloud pc = center(synth_polymer(rng, 40, 3, SynthStyle::mixed));
        for (double v : pc.coords) extent = std::max(extent, std::abs(v));
        PointCloud rot = apply_rotation(pc, random_rotation(rng));
        sample.insert(sample.end(), rot.coords.begin(), rot.coords.end());
        clouds.push_back(std::move(pc));
    }
    const int64_t K = 512;
    auto cb = kmeans_codebook(sample, K, 12, 31);
    VoxelGrid grid{2.0 * extent + 1.0, (2.0 * extent + 1.0) / 8.0};  // 8^3 = 512 voxels
    REQUIRE(grid.total_voxels() == K);

    double kmeans_err = 0, voxel_err = 0;
    for (const auto& pc : clouds) {
        kmeans_err += rmse_value(pc, voronoi_decode(voronoi_encode(pc, cb), cb));
        voxel_err += rmse_value(pc, voxel_decode(voxel_encode(pc, grid), grid));
    }
    MESSAGE("kmeans rmse: ", kmeans_err / 20, " voxel rmse: ", voxel_err / 20);
    CHECK(kmeans_err < voxel_err);
}

TEST_CASE("codebook container round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "atomtok_codebook_test";
    fs::create_directories(dir);
    RandomStream rng(96);
    std::vector<double> pts;
    for (int i = 0; i < 300; ++i) pts.push_back(rng.normal());
    auto cb = kmeans_codebook(pts, 8, 5, 17);
    save_codebook((dir / "cb.atk").string(), cb);
    auto loaded = load_codebook((dir / "cb.atk").string());
    REQUIRE(loaded.size() == cb.size());
    for (size_t i = 0; i < cb.centroids.size(); ++i)
        CHECK(loaded.centroids[i] == doctest::Approx(cb.centroids[i]).epsilon(1e-6));
    fs::remove_all(dir);
}
