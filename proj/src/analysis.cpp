#include "atomtok/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "atomtok/geometry.hpp"

namespace atomtok {

std::string SweepReport::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : metadata) os << "# " << k << ": " << v << "\n";
    for (size_t i = 0; i < columns.size(); ++i) os << (i ? "\t" : "") << columns[i];
    os << "\n";
    char buf[64];
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.10g", row[i]);
            os << (i ? "\t" : "") << buf;
        }
        os << "\n";
    }
    return os.str();
}

void SweepReport::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("report: cannot write " + path);
    f << to_text();
}

MixingResult mixing_radius(TokenizerModel<float>& model, const std::vector<PointCloud>& structures,
                           int n_deletions, uint64_t seed, int64_t edge_margin) {
    if (model.cfg.compression != 1)
        throw std::invalid_argument("mixing_radius: requires one token per atom (compression 1)");
    RandomStream rng(seed);
    std::vector<double> radii, raws;
    while (static_cast<int>(radii.size()) < n_deletions) {
        const auto& pc = structures[rng.integer(structures.size())];
        const int64_t n = pc.size();
        if (n < 3) continue;
        const int64_t margin = std::min(edge_margin, (n - 1) / 2);
        const int64_t span = n - 2 * margin;
        if (span <= 0) continue;
        const int64_t i = margin + static_cast<int64_t>(rng.integer(span));

        // Both tokenizations run in the original centered frame so the probe
        // measures the encoder's positional mixing, not centroid drift.
        NoGradGuard inference;
        const PointCloud centered = center(pc);
        TensorF coords = model.coords_tensor(centered);
        const TokenSequence base = fsq_quantize(model.encode_coords(coords), model.fsq).second;

        std::vector<float> del_coords;
        del_coords.reserve((n - 1) * 3);
        for (int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            for (int k = 0; k < 3; ++k) del_coords.push_back(static_cast<float>(centered.coords[j * 3 + k]));
        }
        TensorF del = TensorF::from({n - 1, 3}, std::move(del_coords));
        const TokenSequence after = fsq_quantize(model.encode_coords(del), model.fsq).second;

        int64_t changed = 0;
        for (int64_t j = 0; j < i; ++j) changed += base.ids[j] != after.ids[j];
        for (int64_t j = i + 1; j < n; ++j) changed += base.ids[j] != after.ids[j - 1];
        radii.push_back(static_cast<double>(changed) / 2.0);

        int64_t raw = 0;
        for (int64_t j = 0; j + 1 < n; ++j) raw += base.ids[j] != after.ids[j];
        raws.push_back(static_cast<double>(raw) / 2.0);
    }

    auto mean_std = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= v.size();
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return std::pair<double, double>(m, std::sqrt(s / v.size()));
    };
    MixingResult res;
    std::tie(res.mean_radius, res.std_radius) = mean_std(radii);
    std::tie(res.mean_raw, res.std_raw) = mean_std(raws);
    res.samples = static_cast<int64_t>(radii.size());
    return res;
}

SweepReport rotation_sweep(TokenizerModel<float>& model, const PointCloud& structure, int axis,
                           int n_angles, int64_t max_token_columns) {
    if (n_angles < 1) throw std::invalid_argument("rotation_sweep: need at least one angle");
    const PointCloud base = center(structure);
    const int64_t n_tokens = (base.size() + model.cfg.compression - 1) / model.cfg.compression;
    const int64_t n_cols = std::min<int64_t>(n_tokens, max_token_columns);

    SweepReport rep;
    rep.metadata = {{"study", "rotation_sweep"},
                    {"axis", std::string(1, "xyz"[axis])},
                    {"atoms", std::to_string(base.size())},
                    {"token_columns", std::to_string(n_cols)}};
    rep.columns = {"theta", "rmse", "changed_tokens"};
    for (int64_t i = 0; i < n_cols; ++i) rep.columns.push_back("token_" + std::to_string(i));

    std::vector<uint32_t> first_ids;
    for (int j = 0; j < n_angles; ++j) {
        const double theta = 2.0 * M_PI * j / n_angles;
        const PointCloud rotated = apply_rotation(base, axis_rotation(axis, theta));
        const TokenSequence toks = model.tokenize(rotated);
        const PointCloud recon = model.decode(toks, rotated.size());
        const double rmse = kabsch_rmse(rotated, recon);
        if (j == 0) first_ids = toks.ids;
        int64_t changed = 0;
        for (size_t t = 0; t < toks.ids.size(); ++t) changed += toks.ids[t] != first_ids[t];
        std::vector<double> row = {theta, rmse, static_cast<double>(changed)};
        for (int64_t i = 0; i < n_cols; ++i) row.push_back(static_cast<double>(toks.ids[i]));
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

SweepReport center_distance_profile(TokenizerModel<float>& model, const std::vector<PointCloud>& structures,
                                    int64_t n_points, uint64_t seed, int threads) {
    (void)threads;
    RandomStream rng(seed);
    // Per-structure per-atom errors after structure-level alignment.
    std::vector<std::pair<double, double>> samples;  // (distance, error)
    std::vector<std::vector<std::pair<double, double>>> per_structure(structures.size());
    for (size_t si = 0; si < structures.size(); ++si) {
        const PointCloud target = center(structures[si]);
        const TokenSequence toks = model.tokenize(target);
        const PointCloud recon = model.decode(toks, target.size());
        const AlignmentResult al = kabsch_align(target, recon);
        for (int64_t i = 0; i < target.size(); ++i) {
            double dist = 0, err = 0;
            for (int k = 0; k < 3; ++k) {
                dist += target.coords[i * 3 + k] * target.coords[i * 3 + k];
                const double d = target.coords[i * 3 + k] - al.aligned.coords[i * 3 + k];
                err += d * d;
            }
            per_structure[si].emplace_back(std::sqrt(dist), std::sqrt(err));
        }
    }
    std::vector<std::pair<double, double>> all;
    for (auto& v : per_structure) all.insert(all.end(), v.begin(), v.end());
    for (int64_t i = 0; i < n_points && !all.empty(); ++i) samples.push_back(all[rng.integer(all.size())]);

    SweepReport rep;
    rep.metadata = {{"study", "center_distance_profile"}, {"points", std::to_string(samples.size())}};
    rep.columns = {"distance_to_center", "error"};
    for (const auto& [d, e] : samples) rep.rows.push_back({d, e});
    return rep;
}

std::vector<double> binned_means(const SweepReport& profile, int n_bins) {
    double max_d = 0;
    for (const auto& r : profile.rows) max_d = std::max(max_d, r[0]);
    std::vector<double> sum(n_bins, 0);
    std::vector<int64_t> cnt(n_bins, 0);
    for (const auto& r : profile.rows) {
        int b = max_d > 0 ? static_cast<int>(r[0] / max_d * n_bins) : 0;
        b = std::min(b, n_bins - 1);
        sum[b] += r[1];
        cnt[b] += 1;
    }
    std::vector<double> means(n_bins, 0);
    for (int b = 0; b < n_bins; ++b) means[b] = cnt[b] ? sum[b] / cnt[b] : 0;
    return means;
}

PowerLawFit fit_power_law(const std::vector<double>& sizes, const std::vector<double>& values) {
    if (sizes.size() != values.size() || sizes.size() < 2)
        throw std::invalid_argument("fit_power_law: need at least two points");
    const size_t n = sizes.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::vector<double> lx(n), ly(n);
    for (size_t i = 0; i < n; ++i) {
        lx[i] = std::log(sizes[i]);
        ly[i] = std::log(values[i]);
        sx += lx[i];
        sy += ly[i];
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    PowerLawFit fit;
    const double denom = n * sxx - sx * sx;
    fit.alpha = (n * sxy - sx * sy) / denom;
    fit.beta = (sy - fit.alpha * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean_y = sy / n;
    for (size_t i = 0; i < n; ++i) {
        const double pred = fit.alpha * lx[i] + fit.beta;
        ss_res += (ly[i] - pred) * (ly[i] - pred);
        ss_tot += (ly[i] - mean_y) * (ly[i] - mean_y);
    }
    fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

double train_and_test_rmse(const TokenizerConfig& cfg, const std::vector<PointCloud>& train_set,
                           const std::vector<PointCloud>& test_set, const StudyBudget& budget, bool augment,
                           bool use_interatomic) {
    TokenizerModel<float> model = TokenizerModel<float>::init(cfg);
    TrainConfig tc;
    tc.total_steps = budget.steps;
    tc.effective_batch = budget.effective_batch;
    tc.lr_start = budget.lr_start;
    tc.augment_rotations = augment;
    tc.use_interatomic = use_interatomic;
    tc.seed = cfg.seed;
    tc.threads = budget.threads;
    tc.validate_every = 0;
    train(model, train_set, {}, tc);
    return validation_rmse(model, test_set, budget.threads);
}

SweepReport codebook_scaling_study(const TokenizerConfig& base, const std::vector<int>& d_values,
                                   const std::vector<PointCloud>& train_set,
                                   const std::vector<PointCloud>& test_set, const StudyBudget& budget) {
    SweepReport rep;
    rep.columns = {"fsq_dims", "codebook_size", "rmse"};
    std::vector<double> sizes, rmses;
    std::string diverged;
    for (int D : d_values) {
        TokenizerConfig cfg = base;
        cfg.fsq_levels = std::vector<int>(D, 4);
        cfg.seed = budget.seed;
        const double size = std::pow(4.0, D);
        try {
            const double rmse = train_and_test_rmse(cfg, train_set, test_set, budget, true, true);
            if (!std::isfinite(rmse)) throw std::runtime_error("non-finite rmse");
            rep.rows.push_back({static_cast<double>(D), size, rmse});
            sizes.push_back(size);
            rmses.push_back(rmse);
            std::cerr << "scaling: D=" << D << " codebook=" << size << " rmse=" << rmse << "\n";
        } catch (const std::exception& e) {
            diverged += (diverged.empty() ? "" : ",") + std::to_string(D);
            std::cerr << "scaling: D=" << D << " excluded (" << e.what() << ")\n";
        }
    }
    rep.metadata = {{"study", "codebook_scaling"}};
    if (!diverged.empty()) rep.metadata.emplace_back("excluded_dims", diverged);
    if (sizes.size() >= 2) {
        const PowerLawFit fit = fit_power_law(sizes, rmses);
        rep.metadata.emplace_back("power_law_alpha", std::to_string(fit.alpha));
        rep.metadata.emplace_back("power_law_beta", std::to_string(fit.beta));
        rep.metadata.emplace_back("power_law_r2", std::to_string(fit.r2));
    }
    return rep;
}

SweepReport compression_study(const TokenizerConfig& base, const std::vector<int>& k_values,
                              const std::vector<PointCloud>& train_set,
                              const std::vector<PointCloud>& test_set, const StudyBudget& budget) {
    SweepReport rep;
    rep.columns = {"compression", "rmse", "ratio_vs_k1", "tokens_per_100_atoms"};
    double rmse_k1 = -1;
    for (int k : k_values) {
        TokenizerConfig cfg = base;
        cfg.compression = k;
        cfg.seed = budget.seed;
        try {
            const double rmse = train_and_test_rmse(cfg, train_set, test_set, budget, true, true);
            if (!std::isfinite(rmse)) throw std::runtime_error("non-finite rmse");
            if (k == 1) rmse_k1 = rmse;
            const double ratio = rmse_k1 > 0 ? rmse / rmse_k1 : 0.0;
            rep.rows.push_back({static_cast<double>(k), rmse, ratio,
                                static_cast<double>((100 + k - 1) / k)});
            std::cerr << "compression: k=" << k << " rmse=" << rmse << " ratio=" << ratio << "\n";
        } catch (const std::exception& e) {
            std::cerr << "compression: k=" << k << " excluded (" << e.what() << ")\n";
        }
    }
    rep.metadata = {{"study", "compression"}};
    return rep;
}

SweepReport ablation_harness(const TokenizerConfig& base, const std::vector<PointCloud>& train_set,
                             const std::vector<PointCloud>& test_set, const StudyBudget& budget,
                             const std::vector<uint64_t>& seeds) {
    struct Rung {
        const char* name;
        int enc, dec;
        bool bidirectional, augment, interatomic;
    };
    const std::vector<Rung> ladder = {
        {"small", 2, 4, false, false, false},
        {"+rotation", 2, 4, false, true, false},
        {"+bidirectional", 2, 4, true, true, false},
        {"+deeper", 4, 6, true, true, false},
        {"+interatomic", 4, 6, true, true, true},
    };

    SweepReport rep;
    rep.columns = {"rung", "seed", "rmse"};
    rep.metadata = {{"study", "ablation"}};
    for (size_t r = 0; r < ladder.size(); ++r) {
        const Rung& rung = ladder[r];
        double mean = 0;
        int ok = 0;
        for (uint64_t seed : seeds) {
            TokenizerConfig cfg = base;
            cfg.n_encoder_layers = rung.enc;
            cfg.n_decoder_layers = rung.dec;
            cfg.bidirectional = rung.bidirectional;
            cfg.seed = seed;
            StudyBudget b = budget;
            b.seed = seed;
            try {
                const double rmse =
                    train_and_test_rmse(cfg, train_set, test_set, b, rung.augment, rung.interatomic);
                if (!std::isfinite(rmse)) throw std::runtime_error("non-finite rmse");
                rep.rows.push_back({static_cast<double>(r), static_cast<double>(seed), rmse});
                mean += rmse;
                ++ok;
                std::cerr << "ablation: " << rung.name << " seed=" << seed << " rmse=" << rmse << "\n";
            } catch (const std::exception& e) {
                std::cerr << "ablation: " << rung.name << " seed=" << seed << " excluded (" << e.what()
                          << ")\n";
            }
        }
        rep.metadata.emplace_back(std::string("mean_rmse.") + rung.name,
                                  ok ? std::to_string(mean / ok) : "n/a");
    }
    return rep;
}

}  // namespace atomtok
