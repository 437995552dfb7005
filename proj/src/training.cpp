#include "atomtok/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "atomtok/checkpoint.hpp"
#include "atomtok/geometry.hpp"

namespace atomtok {

bool adam_step(const std::vector<Tensor<float>*>& params, AdamState& state, double lr,
               const AdamConfig& cfg) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->numel(), 0.0f);
            state.v[i].assign(params[i]->numel(), 0.0f);
        }
    }
    for (auto* p : params) {
        if (!p->node || static_cast<int64_t>(p->node->grad.size()) != p->numel())
            throw std::invalid_argument("adam_step: parameter without populated gradient");
        for (float g : p->node->grad)
            if (!std::isfinite(g)) return false;
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        const auto& g = p.node->grad;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (int64_t j = 0; j < p.numel(); ++j) {
            const double gj = g[j];
            const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
            p.at(j) = static_cast<float>(p.at(j) - update);
        }
    }
    return true;
}

double polynomial_lr(int64_t step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps) throw std::invalid_argument("polynomial_lr: step out of range");
    const double frac = cfg.total_steps == 0 ? 1.0 : static_cast<double>(step) / cfg.total_steps;
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * std::pow(1.0 - frac, cfg.poly_power);
}

PaddedBatch make_batch(const std::vector<const PointCloud*>& structures, int64_t max_seq_len) {
    if (structures.empty()) throw std::invalid_argument("make_batch: empty batch");
    PaddedBatch batch;
    for (const auto* pc : structures) {
        if (pc->size() > max_seq_len)
            throw std::invalid_argument("make_batch: structure of " + std::to_string(pc->size()) +
                                        " atoms exceeds max_seq_len " + std::to_string(max_seq_len));
        batch.padded_len = std::max(batch.padded_len, pc->size());
    }
    for (const auto* pc : structures) {
        BatchItem item;
        item.n_real = pc->size();
        item.padded = *pc;
        const int64_t pad = batch.padded_len - pc->size();
        for (int64_t i = 0; i < pad; ++i) {
            item.padded.coords.insert(item.padded.coords.end(), {0.0, 0.0, 0.0});
            if (!item.padded.residue_index.empty())
                item.padded.residue_index.push_back(item.padded.residue_index.back());
            if (!item.padded.backbone_flag.empty()) item.padded.backbone_flag.push_back(0);
            if (!item.padded.chain_id.empty()) item.padded.chain_id.push_back(item.padded.chain_id.back());
            if (!item.padded.atom_name.empty()) item.padded.atom_name.push_back("PAD");
            if (!item.padded.element.empty()) item.padded.element.push_back("");
        }
        batch.items.push_back(std::move(item));
    }
    return batch;
}

// The unpadded prefix of a batch item (the mask applied).
PointCloud unpadded_view(const BatchItem& item) {
    PointCloud pc;
    pc.coords.assign(item.padded.coords.begin(), item.padded.coords.begin() + item.n_real * 3);
    auto take = [&](auto& dst, const auto& src) {
        if (!src.empty()) dst.assign(src.begin(), src.begin() + item.n_real);
    };
    take(pc.residue_index, item.padded.residue_index);
    take(pc.backbone_flag, item.padded.backbone_flag);
    take(pc.chain_id, item.padded.chain_id);
    take(pc.atom_name, item.padded.atom_name);
    take(pc.element, item.padded.element);
    return pc;
}

namespace {

struct StructureResult {
    double loss = 0, rmse = 0, inter = 0;
    bool finite = true;
    TokenSequence tokens;
    std::vector<std::vector<float>> grads;  // per parameter tensor
};

// Forward/backward every structure on its own shadow (own gradients); the
// caller merges in structure order. Parallel over structures, deterministic
// for any thread count.
void run_structures(TokenizerModel<float>& model, const std::vector<PointCloud>& structures,
                    bool use_interatomic, bool with_grads, int threads,
                    std::vector<StructureResult>& results) {
    results.assign(structures.size(), {});
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= structures.size()) return;
            TokenizerModel<float> shadow = model.shadow();
            StructureResult& r = results[i];
            try {
                if (with_grads) {
                    ForwardResult<float> fr = forward_loss(shadow, structures[i], use_interatomic);
                    r.loss = fr.total;
                    r.rmse = fr.rmse_term;
                    r.inter = fr.inter_term;
                    r.tokens = std::move(fr.tokens);
                    if (!std::isfinite(r.loss)) {
                        r.finite = false;
                        continue;
                    }
                    backward(fr.loss);
                    auto named = shadow.named_parameters();
                    r.grads.reserve(named.size());
                    for (auto& [name, t] : named) {
                        t->node->ensure_grad();
                        r.grads.push_back(t->node->grad);
                    }
                } else {
                    NoGradGuard guard;
                    ForwardResult<float> fr = forward_loss(shadow, structures[i], use_interatomic);
                    r.loss = fr.total;
                    r.rmse = fr.rmse_term;
                    r.inter = fr.inter_term;
                    r.finite = std::isfinite(r.loss);
                }
            } catch (const std::exception& e) {
                r.finite = false;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
}

}  // namespace

double validation_rmse(TokenizerModel<float>& model, const std::vector<PointCloud>& val_set, int threads) {
    if (val_set.empty()) return 0.0;
    std::vector<StructureResult> results;
    run_structures(model, val_set, false, false, threads, results);
    double acc = 0;
    for (const auto& r : results) acc += r.rmse;
    return acc / static_cast<double>(val_set.size());
}

TrainResult train(TokenizerModel<float>& model, const std::vector<PointCloud>& train_set,
                  const std::vector<PointCloud>& val_set, const TrainConfig& cfg, const TrainState* resume) {
    if (train_set.empty()) throw std::invalid_argument("train: empty dataset");

    std::vector<const PointCloud*> usable;
    for (const auto& pc : train_set)
        if (pc.size() <= cfg.max_seq_len) usable.push_back(&pc);
    if (usable.empty()) throw std::invalid_argument("train: no structure within max_seq_len");

    TrainResult out;
    TrainState st;
    RandomStream rng(cfg.seed ^ 0x747261696eULL);
    if (resume) {
        st = *resume;
        rng.load_state(st.rng_state);
    }

    std::ofstream metrics;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        metrics.open(cfg.out_dir + "/metrics.jsonl", std::ios::trunc);
    }
    auto params = [&]() {
        std::vector<Tensor<float>*> p;
        for (auto& [name, t] : model.named_parameters()) p.push_back(t);
        return p;
    }();

    out.initial_val_rmse = validation_rmse(model, val_set, cfg.threads);

    auto emit = [&](const json& j) {
        const std::string line = j.dump();
        out.metric_lines.push_back(line);
        if (metrics.is_open()) metrics << line << "\n" << std::flush;
    };

    while (st.step < cfg.total_steps) {
        const double lr = polynomial_lr(st.step, cfg);

        // Assemble the step's structures on the control thread so rng
        // consumption is independent of threading.
        std::vector<const PointCloud*> picks;
        for (int b = 0; b < cfg.effective_batch; ++b)
            picks.push_back(usable[rng.integer(usable.size())]);
        PaddedBatch batch = make_batch(picks, cfg.max_seq_len);
        std::vector<PointCloud> inputs;
        inputs.reserve(batch.items.size());
        for (auto& item : batch.items) {
            PointCloud pc = center(unpadded_view(item));
            if (cfg.augment_rotations) pc = apply_rotation(pc, random_rotation(rng));
            inputs.push_back(std::move(pc));
        }

        std::vector<StructureResult> results;
        run_structures(model, inputs, cfg.use_interatomic, true, cfg.threads, results);

        bool all_finite = true;
        for (const auto& r : results) all_finite = all_finite && r.finite;
        st.step += 1;

        if (!all_finite) {
            st.consecutive_skips += 1;
            std::cerr << "step " << st.step << ": non-finite loss, step skipped\n";
            emit(json{{"step", st.step}, {"lr", lr}, {"event", "skipped_nonfinite"}});
            if (st.consecutive_skips >= 3)
                throw std::runtime_error("train: aborted after 3 consecutive non-finite steps");
            continue;
        }
        st.consecutive_skips = 0;

        // Merge gradients in structure order, mean over the effective batch.
        model.zero_grad();
        const float inv_batch = 1.0f / static_cast<float>(results.size());
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& g = params[pi]->grad_mut();
            for (const auto& r : results) {
                const auto& src = r.grads[pi];
                for (size_t j = 0; j < g.size(); ++j) g[j] += src[j];
            }
            for (auto& v : g) v *= inv_batch;
        }

        if (!adam_step(params, st.adam, lr)) {
            st.consecutive_skips += 1;
            std::cerr << "step " << st.step << ": non-finite gradient, step skipped\n";
            emit(json{{"step", st.step}, {"lr", lr}, {"event", "skipped_nonfinite_grad"}});
            if (st.consecutive_skips >= 3)
                throw std::runtime_error("train: aborted after 3 consecutive non-finite steps");
            continue;
        }

        double loss = 0, rmse = 0, inter = 0;
        std::vector<uint32_t> ids;
        for (const auto& r : results) {
            loss += r.loss;
            rmse += r.rmse;
            inter += r.inter;
            ids.insert(ids.end(), r.tokens.ids.begin(), r.tokens.ids.end());
        }
        loss /= results.size();
        rmse /= results.size();
        inter /= results.size();

        json rec{{"step", st.step},
                 {"lr", lr},
                 {"train_loss", loss},
                 {"rmse_term", rmse},
                 {"interatomic_term", inter},
                 {"codebook_usage", codebook_usage(ids, model.fsq)}};

        if (cfg.validate_every > 0 && (st.step % cfg.validate_every == 0 || st.step == cfg.total_steps)) {
            const double val = validation_rmse(model, val_set, cfg.threads);
            rec["val_rmse"] = val;
            st.best_val_rmse = std::min(st.best_val_rmse, val);
        }
        emit(rec);

        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0) {
            st.rng_state = rng.save_state();
            save_model(cfg.out_dir + "/ckpt-" + std::to_string(st.step) + ".atk", model);
            save_train_state(cfg.out_dir + "/state-" + std::to_string(st.step) + ".atk", model, st);
        }
    }

    out.final_val_rmse = validation_rmse(model, val_set, cfg.threads);
    st.rng_state = rng.save_state();
    if (!cfg.out_dir.empty()) {
        save_model(cfg.out_dir + "/model.atk", model);
        save_train_state(cfg.out_dir + "/state.atk", model, st);
    }
    out.state = std::move(st);
    return out;
}

void save_train_state(const std::string& path, TokenizerModel<float>& model, const TrainState& st) {
    Container c;
    c.meta = json{{"kind", "train_state"},
                  {"step", st.step},
                  {"adam_t", st.adam.t},
                  {"rng_state", st.rng_state},
                  {"best_val_rmse", st.best_val_rmse},
                  {"consecutive_skips", st.consecutive_skips}};
    auto named = model.named_parameters();
    if (!st.adam.m.empty() && st.adam.m.size() != named.size())
        throw std::runtime_error("save_train_state: adam slots do not match parameters");
    for (size_t i = 0; i < st.adam.m.size(); ++i) {
        const auto& shape = named[i].second->shape;
        c.tensors.emplace_back("adam.m." + named[i].first,
                               TensorF::from(shape, std::vector<float>(st.adam.m[i])));
        c.tensors.emplace_back("adam.v." + named[i].first,
                               TensorF::from(shape, std::vector<float>(st.adam.v[i])));
    }
    write_container(path, c);
}

TrainState load_train_state(const std::string& path, TokenizerModel<float>& model) {
    Container c = read_container(path);
    if (c.meta.value("kind", "") != "train_state")
        throw std::runtime_error("train state: " + path + " is not a training state file");
    TrainState st;
    st.step = c.meta.at("step").get<int64_t>();
    st.adam.t = c.meta.at("adam_t").get<int64_t>();
    st.rng_state = c.meta.at("rng_state").get<std::string>();
    st.best_val_rmse = c.meta.at("best_val_rmse").get<double>();
    st.consecutive_skips = c.meta.at("consecutive_skips").get<int>();
    auto named = model.named_parameters();
    if (!c.tensors.empty()) {
        st.adam.m.resize(named.size());
        st.adam.v.resize(named.size());
        for (size_t i = 0; i < named.size(); ++i) {
            const TensorF* m = c.find("adam.m." + named[i].first);
            const TensorF* v = c.find("adam.v." + named[i].first);
            if (!m || !v) throw std::runtime_error("train state: missing adam slots for " + named[i].first);
            st.adam.m[i] = *m->data;
            st.adam.v[i] = *v->data;
        }
    }
    return st;
}

}  // namespace atomtok
