#include "atomtok/baselines.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "atomtok/checkpoint.hpp"

namespace atomtok {

double voxel_rmsd_constant() {
    static const double c = [] {
        RandomStream rng(0x766f78656cULL);
        const int64_t n = 10'000'000;
        double acc = 0;
        for (int64_t i = 0; i < n; ++i) {
            const double x = rng.uniform() - 0.5;
            const double y = rng.uniform() - 0.5;
            const double z = rng.uniform() - 0.5;
            acc += std::sqrt(x * x + y * y + z * z);
        }
        return acc / static_cast<double>(n);
    }();
    return c;
}

double voxel_rmsd(double a) {
    if (!(a > 0)) throw std::invalid_argument("voxel_rmsd: voxel side must be positive");
    return voxel_rmsd_constant() * a;
}

int64_t voxel_count(double side_A, double target_rmsd) {
    if (!(side_A > 0) || !(target_rmsd > 0))
        throw std::invalid_argument("voxel_count: side and target accuracy must be positive");
    const double n = std::pow(0.48 * side_A / target_rmsd, 3.0);
    return static_cast<int64_t>(std::llround(n));
}

std::vector<uint32_t> voxel_encode(const PointCloud& pc, const VoxelGrid& grid, int64_t* clamped) {
    if (!(grid.voxel_a > 0) || grid.side_A < grid.voxel_a)
        throw std::invalid_argument("voxel_encode: invalid grid");
    const int64_t m = grid.per_axis();
    const double half = grid.side_A / 2.0;
    int64_t clamp_count = 0;
    std::vector<uint32_t> ids(pc.size());
    for (int64_t i = 0; i < pc.size(); ++i) {
        int64_t idx[3];
        for (int k = 0; k < 3; ++k) {
            const double v = pc.coords[i * 3 + k];
            int64_t c = static_cast<int64_t>(std::floor((v + half) / grid.voxel_a));
            if (c < 0 || c >= m) {
                ++clamp_count;
                c = std::clamp<int64_t>(c, 0, m - 1);
            }
            idx[k] = c;
        }
        ids[i] = static_cast<uint32_t>(idx[0] + m * (idx[1] + m * idx[2]));
    }
    if (clamped) *clamped = clamp_count;
    return ids;
}

PointCloud voxel_decode(const std::vector<uint32_t>& ids, const VoxelGrid& grid) {
    const int64_t m = grid.per_axis();
    const double half = grid.side_A / 2.0;
    PointCloud pc;
    pc.coords.reserve(ids.size() * 3);
    for (uint32_t id : ids) {
        int64_t rest = id;
        for (int k = 0; k < 3; ++k) {
            const int64_t c = rest % m;
            rest /= m;
            pc.coords.push_back((static_cast<double>(c) + 0.5) * grid.voxel_a - half);
        }
    }
    return pc;
}

namespace {

// Deterministic parallel map over fixed-size chunks; merge order is chunk
// order, independent of the thread count.
template <typename Fn>
void for_chunks(int64_t n, int64_t chunk, int threads, Fn&& fn) {
    const int64_t n_chunks = (n + chunk - 1) / chunk;
    if (threads <= 1) {
        for (int64_t c = 0; c < n_chunks; ++c) fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        return;
    }
    std::atomic<int64_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const int64_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

int64_t nearest_centroid(const double* p, const std::vector<double>& centroids, int64_t k) {
    int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < k; ++c) {
        const double dx = p[0] - centroids[c * 3];
        const double dy = p[1] - centroids[c * 3 + 1];
        const double dz = p[2] - centroids[c * 3 + 2];
        const double d = dx * dx + dy * dy + dz * dz;
        if (d < best_d) {  // strict: ties keep the lowest index
            best_d = d;
            best = c;
        }
    }
    return best;
}

}  // namespace

VoronoiCodebook kmeans_codebook(const std::vector<double>& points, int64_t k, int iters, uint64_t seed,
                                int threads, KmeansStats* stats) {
    const int64_t n = static_cast<int64_t>(points.size()) / 3;
    if (n < k) throw std::invalid_argument("kmeans: sample smaller than codebook");
    RandomStream rng(seed);

    // k-means++ seeding.
    VoronoiCodebook cb;
    cb.centroids.reserve(k * 3);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    {
        const int64_t first = rng.integer(n);
        cb.centroids.insert(cb.centroids.end(), {points[first * 3], points[first * 3 + 1], points[first * 3 + 2]});
    }
    for (int64_t c = 1; c < k; ++c) {
        const double* last = &cb.centroids[(c - 1) * 3];
        double total = 0;
        for (int64_t i = 0; i < n; ++i) {
            const double dx = points[i * 3] - last[0];
            const double dy = points[i * 3 + 1] - last[1];
            const double dz = points[i * 3 + 2] - last[2];
            d2[i] = std::min(d2[i], dx * dx + dy * dy + dz * dz);
            total += d2[i];
        }
        // D^2 sampling; falls back to uniform if everything coincides.
        int64_t pick = 0;
        if (total > 0) {
            double r = rng.uniform() * total;
            for (int64_t i = 0; i < n; ++i) {
                r -= d2[i];
                if (r <= 0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int64_t>(rng.integer(n));
        }
        cb.centroids.insert(cb.centroids.end(), {points[pick * 3], points[pick * 3 + 1], points[pick * 3 + 2]});
    }

    // Lloyd iterations.
    std::vector<int64_t> assign(n);
    std::vector<double> point_d2(n);
    const int64_t chunk = 4096;
    const int64_t n_chunks = (n + chunk - 1) / chunk;
    std::vector<std::vector<double>> sums(n_chunks);
    std::vector<std::vector<int64_t>> counts(n_chunks);
    if (stats) {
        stats->objective_per_iter.clear();
        stats->reseeded_clusters = 0;
    }

    for (int it = 0; it < iters; ++it) {
        for_chunks(n, chunk, threads, [&](int64_t ci, int64_t lo, int64_t hi) {
            auto& s = sums[ci];
            auto& cnt = counts[ci];
            s.assign(k * 3, 0.0);
            cnt.assign(k, 0);
            for (int64_t i = lo; i < hi; ++i) {
                const int64_t a = nearest_centroid(&points[i * 3], cb.centroids, k);
                assign[i] = a;
                const double dx = points[i * 3] - cb.centroids[a * 3];
                const double dy = points[i * 3 + 1] - cb.centroids[a * 3 + 1];
                const double dz = points[i * 3 + 2] - cb.centroids[a * 3 + 2];
                point_d2[i] = dx * dx + dy * dy + dz * dz;
                s[a * 3] += points[i * 3];
                s[a * 3 + 1] += points[i * 3 + 1];
                s[a * 3 + 2] += points[i * 3 + 2];
                cnt[a] += 1;
            }
        });

        std::vector<double> sum(k * 3, 0.0);
        std::vector<int64_t> cnt(k, 0);
        double objective = 0;
        for (int64_t ci = 0; ci < n_chunks; ++ci) {
            for (int64_t c = 0; c < k; ++c) {
                sum[c * 3] += sums[ci][c * 3];
                sum[c * 3 + 1] += sums[ci][c * 3 + 1];
                sum[c * 3 + 2] += sums[ci][c * 3 + 2];
                cnt[c] += counts[ci][c];
            }
        }
        for (int64_t i = 0; i < n; ++i) objective += point_d2[i];
        if (stats) stats->objective_per_iter.push_back(objective / static_cast<double>(n));

        for (int64_t c = 0; c < k; ++c) {
            if (cnt[c] == 0) {
                // Re-seed from the farthest point.
                int64_t far = 0;
                double far_d = -1;
                for (int64_t i = 0; i < n; ++i)
                    if (point_d2[i] > far_d) {
                        far_d = point_d2[i];
                        far = i;
                    }
                cb.centroids[c * 3] = points[far * 3];
                cb.centroids[c * 3 + 1] = points[far * 3 + 1];
                cb.centroids[c * 3 + 2] = points[far * 3 + 2];
                point_d2[far] = 0;
                if (stats) stats->reseeded_clusters += 1;
            } else {
                cb.centroids[c * 3] = sum[c * 3] / cnt[c];
                cb.centroids[c * 3 + 1] = sum[c * 3 + 1] / cnt[c];
                cb.centroids[c * 3 + 2] = sum[c * 3 + 2] / cnt[c];
            }
        }
    }
    return cb;
}

std::vector<uint32_t> voronoi_encode(const PointCloud& pc, const VoronoiCodebook& cb, int threads) {
    const int64_t n = pc.size(), k = cb.size();
    std::vector<uint32_t> ids(n);
    for_chunks(n, 4096, threads, [&](int64_t, int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i)
            ids[i] = static_cast<uint32_t>(nearest_centroid(&pc.coords[i * 3], cb.centroids, k));
    });
    return ids;
}

PointCloud voronoi_decode(const std::vector<uint32_t>& ids, const VoronoiCodebook& cb) {
    PointCloud pc;
    pc.coords.reserve(ids.size() * 3);
    for (uint32_t id : ids) {
        if (static_cast<int64_t>(id) >= cb.size()) throw std::out_of_range("voronoi_decode: bad id");
        pc.coords.insert(pc.coords.end(),
                         {cb.centroids[id * 3], cb.centroids[id * 3 + 1], cb.centroids[id * 3 + 2]});
    }
    return pc;
}

void save_codebook(const std::string& path, const VoronoiCodebook& cb) {
    Container c;
    c.meta = json{{"kind", "voronoi_codebook"}, {"k", cb.size()}};
    std::vector<float> data(cb.centroids.begin(), cb.centroids.end());
    c.tensors.emplace_back("centroids", TensorF::from({cb.size(), 3}, std::move(data)));
    write_container(path, c);
}

VoronoiCodebook load_codebook(const std::string& path) {
    Container c = read_container(path);
    if (c.meta.value("kind", "") != "voronoi_codebook")
        throw std::runtime_error("codebook: " + path + " is not a codebook file");
    const TensorF* t = c.find("centroids");
    if (!t) throw std::runtime_error("codebook: missing centroids in " + path);
    VoronoiCodebook cb;
    cb.centroids.assign(t->data->begin(), t->data->end());
    return cb;
}

double mean_distance(const PointCloud& a, const PointCloud& b) {
    if (a.size() != b.size()) throw std::invalid_argument("mean_distance: atom counts differ");
    double acc = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d2 = 0;
        for (int k = 0; k < 3; ++k) {
            const double d = a.coords[i * 3 + k] - b.coords[i * 3 + k];
            d2 += d * d;
        }
        acc += std::sqrt(d2);
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace atomtok
