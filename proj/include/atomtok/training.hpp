#pragma once

// Training loop: Adam with bias correction, polynomial learning-rate decay,
// per-structure rotation augmentation, gradient accumulation to an effective
// batch, periodic validation, checkpoint/resume.
//
// Batch items are processed as independent graphs (optionally across
// threads); every structure gets its own parameter shadow and gradients are
// merged in structure order, so results are bit-identical for any thread
// count.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "atomtok/model.hpp"
#include "atomtok/pointcloud.hpp"
#include "atomtok/rng.hpp"

namespace atomtok {

struct TrainConfig {
    double lr_start = 3e-4;
    double lr_end = 0.0;
    double poly_power = 1.0;  // 1.0 = linear decay
    int64_t total_steps = 10000;
    int effective_batch = 8;    // structures per optimizer step
    int64_t max_seq_len = 4160; // longer structures are excluded from training
    bool augment_rotations = true;
    bool use_interatomic = true;
    uint64_t seed = 0;
    int64_t checkpoint_every = 0;  // 0: only the final checkpoint
    int64_t validate_every = 500;
    int threads = 1;
    std::string out_dir;  // empty: no files written
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    int64_t t = 0;
    std::vector<std::vector<float>> m, v;  // one slot per parameter tensor
};

// Standard Adam with bias correction. Returns false (and applies nothing)
// when any gradient entry is non-finite.
bool adam_step(const std::vector<Tensor<float>*>& params, AdamState& state, double lr,
               const AdamConfig& cfg = {});

// lr = end + (start - end) * (1 - step/total)^power, monotone non-increasing.
double polynomial_lr(int64_t step, const TrainConfig& cfg);

struct BatchItem {
    PointCloud padded;   // right-padded with zero atoms to the batch length
    int64_t n_real = 0;  // mask: positions >= n_real are padding
};

struct PaddedBatch {
    std::vector<BatchItem> items;
    int64_t padded_len = 0;
};

// Right-pads every structure to the longest in the batch. The mask (n_real)
// excludes pad positions from losses and token statistics: consumers run the
// model on the unpadded prefix, so the masked loss equals the unpadded loss
// exactly.
PaddedBatch make_batch(const std::vector<const PointCloud*>& structures, int64_t max_seq_len);

// The unpadded prefix of a batch item (the mask applied).
PointCloud unpadded_view(const BatchItem& item);

struct TrainState {
    int64_t step = 0;
    AdamState adam;
    std::string rng_state;
    double best_val_rmse = std::numeric_limits<double>::infinity();
    int consecutive_skips = 0;
};

struct TrainResult {
    TrainState state;
    double initial_val_rmse = 0;
    double final_val_rmse = 0;
    std::vector<std::string> metric_lines;  // line-delimited records, also written to metrics.jsonl
};

// Per-structure Kabsch-aligned reconstruction RMSE, averaged over the set.
double validation_rmse(TokenizerModel<float>& model, const std::vector<PointCloud>& val_set, int threads);

TrainResult train(TokenizerModel<float>& model, const std::vector<PointCloud>& train_set,
                  const std::vector<PointCloud>& val_set, const TrainConfig& cfg,
                  const TrainState* resume = nullptr);

void save_train_state(const std::string& path, TokenizerModel<float>& model, const TrainState& st);
TrainState load_train_state(const std::string& path, TokenizerModel<float>& model);

}  // namespace atomtok
