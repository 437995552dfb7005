#pragma once

// Diagnostic studies over trained tokenizers: mixing radius under single-atom
// deletion, rotation sweeps, error-vs-distance-to-center profiles, and the
// training studies (codebook scaling, token compression, the ablation
// ladder). Reports serialize to plot-ready columnar text.

#include <cstdint>
#include <string>
#include <vector>

#include "atomtok/model.hpp"
#include "atomtok/pointcloud.hpp"
#include "atomtok/training.hpp"

namespace atomtok {

struct SweepReport {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    std::vector<std::pair<std::string, std::string>> metadata;  // echoed as comments

    std::string to_text() const;
    void save(const std::string& path) const;
};

struct MixingResult {
    double mean_radius = 0;  // half-width of the changed-token span
    double std_radius = 0;
    double mean_raw = 0;     // without the deletion-index alignment
    double std_raw = 0;
    int64_t samples = 0;
};

// Deletes sampled interior atoms, re-tokenizes, and counts token positions
// that change. Comparison aligns by skipping the deleted index; the raw
// (unaligned) count is reported as well. Requires compression == 1.
MixingResult mixing_radius(TokenizerModel<float>& model, const std::vector<PointCloud>& structures,
                           int n_deletions, uint64_t seed, int64_t edge_margin = 16);

// Tokenize/decode under rotations of 2*pi*j/n_angles about one axis.
// Columns: theta, rmse, changed_tokens (vs theta=0), token_<i> per atom.
SweepReport rotation_sweep(TokenizerModel<float>& model, const PointCloud& structure, int axis,
                           int n_angles, int64_t max_token_columns = 64);

// Per-atom reconstruction error vs distance to the structure center.
SweepReport center_distance_profile(TokenizerModel<float>& model, const std::vector<PointCloud>& structures,
                                    int64_t n_points, uint64_t seed, int threads = 1);

// Mean of `values` per distance bin; used for trend checks on the profile.
std::vector<double> binned_means(const SweepReport& profile, int n_bins);

struct PowerLawFit {
    double alpha = 0;  // slope of log(rmse) vs log(size)
    double beta = 0;
    double r2 = 0;
};

PowerLawFit fit_power_law(const std::vector<double>& sizes, const std::vector<double>& values);

// Shared budget for the desk-scale training studies.
struct StudyBudget {
    int64_t steps = 1500;
    int effective_batch = 4;
    double lr_start = 1e-3;
    int threads = 1;
    uint64_t seed = 0;
};

// Trains one model per quantizer dimensionality (levels fixed at 4) and fits
// the power law of test RMSE vs codebook size. Diverged runs are excluded
// from the fit and flagged in the metadata.
SweepReport codebook_scaling_study(const TokenizerConfig& base, const std::vector<int>& d_values,
                                   const std::vector<PointCloud>& train_set,
                                   const std::vector<PointCloud>& test_set, const StudyBudget& budget);

// Trains per compression factor; reports RMSE, the ratio to k=1, and the
// token count contract ceil(N/k).
SweepReport compression_study(const TokenizerConfig& base, const std::vector<int>& k_values,
                              const std::vector<PointCloud>& train_set,
                              const std::vector<PointCloud>& test_set, const StudyBudget& budget);

// The cumulative modification ladder: small unidirectional model, +rotation
// augmentation, +bidirectionality, +deeper stacks, +inter-atomic loss.
// Reports per-rung mean test RMSE over the given seeds.
SweepReport ablation_harness(const TokenizerConfig& base, const std::vector<PointCloud>& train_set,
                             const std::vector<PointCloud>& test_set, const StudyBudget& budget,
                             const std::vector<uint64_t>& seeds);

// Convenience used by the studies: train on a budget, return mean test RMSE.
double train_and_test_rmse(const TokenizerConfig& cfg, const std::vector<PointCloud>& train_set,
                           const std::vector<PointCloud>& test_set, const StudyBudget& budget,
                           bool augment, bool use_interatomic);

}  // namespace atomtok
