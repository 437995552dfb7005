#pragma once

// Tokenizer model: input projection -> encoder stack -> (optional pooling)
// -> FSQ quantizer -> (optional unpooling) -> decoder stack -> coordinates.
// One token per atom by default; compression k pools k positions per token.
// Encoder/decoder layers are pre-norm residual wrappers around the
// (bi)directional block.

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "atomtok/geometry.hpp"
#include "atomtok/pointcloud.hpp"
#include "atomtok/quantizer.hpp"
#include "atomtok/rng.hpp"
#include "atomtok/ssm.hpp"
#include "atomtok/tensor.hpp"

namespace atomtok {

struct TokenizerConfig {
    int n_encoder_layers = 4;
    int n_decoder_layers = 6;
    int d_model = 128;
    int d_state = 16;
    int conv_width = 4;
    int expand = 2;
    std::vector<int> fsq_levels = std::vector<int>(6, 4);
    int compression = 1;  // tokens per structure = ceil(N / compression)
    bool bidirectional = true;
    // Output head init scale. Coordinates span tens of Angstroms while the
    // normalized decoder features are unit scale; starting the head near the
    // data scale saves the optimizer from spending steps growing it.
    double output_init_scale = 4.0;
    // Input head init: coordinates are tens of Angstroms, so a small init
    // keeps the residual stream near unit scale from the start.
    double input_init_scale = 0.03;
    uint64_t seed = 0;

    FsqSpec fsq() const { return FsqSpec(fsq_levels); }
};

template <typename T>
struct ResidualLayer {
    SsmParams<T> block;
    Tensor<T> norm_gamma, norm_beta;
};

template <typename T>
struct TokenizerModel {
    TokenizerConfig cfg;
    FsqSpec fsq;

    Tensor<T> input_proj_w, input_proj_b;      // 3 -> d_model
    std::vector<ResidualLayer<T>> encoder;
    Tensor<T> pool_kernel;                     // [k x d_model], k > 1 only
    Tensor<T> pre_quant_gamma, pre_quant_beta; // norm ahead of the head keeps
                                               // the bound input at unit scale
    Tensor<T> quant_head_w, quant_head_b;      // d_model -> D
    Tensor<T> dequant_head_w, dequant_head_b;  // D -> d_model
    Tensor<T> unpool_kernel;                   // [k x d_model], k > 1 only
    std::vector<ResidualLayer<T>> decoder;
    Tensor<T> final_norm_gamma, final_norm_beta;
    Tensor<T> output_proj_w, output_proj_b;    // d_model -> 3

    static TokenizerModel init(const TokenizerConfig& cfg) {
        TokenizerModel m;
        m.cfg = cfg;
        m.fsq = cfg.fsq();
        RandomStream rng(cfg.seed ^ 0x746f6b656e697aULL);

        auto uni = [&rng](std::vector<int64_t> shape, double k) {
            const int64_t n = Tensor<T>::numel_of(shape);
            std::vector<T> v(static_cast<size_t>(n));
            for (auto& x : v) x = static_cast<T>(rng.uniform(-k, k));
            return Tensor<T>::from(std::move(shape), std::move(v), true);
        };
        auto ones = [](int64_t n) {
            return Tensor<T>::from({n}, std::vector<T>(static_cast<size_t>(n), T(1)), true);
        };
        auto zeros_vec = [](int64_t n) { return Tensor<T>::zeros({n}, true); };

        const int64_t d = cfg.d_model;
        const int64_t D = m.fsq.dims();
        m.input_proj_w = uni({3, d}, cfg.input_init_scale);
        m.input_proj_b = zeros_vec(d);
        for (int i = 0; i < cfg.n_encoder_layers; ++i) {
            ResidualLayer<T> layer;
            layer.block = SsmParams<T>::init(d, cfg.d_state, cfg.conv_width, cfg.expand, rng);
            layer.norm_gamma = ones(d);
            layer.norm_beta = zeros_vec(d);
            m.encoder.push_back(std::move(layer));
        }
        if (cfg.compression > 1) {
            // Averaging start for the pooling pair keeps early training sane.
            const double k0 = 1.0 / cfg.compression;
            m.pool_kernel = Tensor<T>::from(
                {cfg.compression, d},
                std::vector<T>(static_cast<size_t>(cfg.compression * d), static_cast<T>(k0)), true);
            m.unpool_kernel = Tensor<T>::from(
                {cfg.compression, d},
                std::vector<T>(static_cast<size_t>(cfg.compression * d), static_cast<T>(k0)), true);
        }
        m.pre_quant_gamma = ones(d);
        m.pre_quant_beta = zeros_vec(d);
        m.quant_head_w = uni({d, D}, 1.0 / std::sqrt(double(d)));
        m.quant_head_b = zeros_vec(D);
        m.dequant_head_w = uni({D, d}, 1.0 / std::sqrt(double(D)));
        m.dequant_head_b = zeros_vec(d);
        for (int i = 0; i < cfg.n_decoder_layers; ++i) {
            ResidualLayer<T> layer;
            layer.block = SsmParams<T>::init(d, cfg.d_state, cfg.conv_width, cfg.expand, rng);
            layer.norm_gamma = ones(d);
            layer.norm_beta = zeros_vec(d);
            m.decoder.push_back(std::move(layer));
        }
        m.final_norm_gamma = ones(d);
        m.final_norm_beta = zeros_vec(d);
        m.output_proj_w = uni({d, 3}, cfg.output_init_scale / std::sqrt(double(d)));
        m.output_proj_b = zeros_vec(3);
        return m;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        auto block_params = [&out](const std::string& prefix, ResidualLayer<T>& l) {
            out.emplace_back(prefix + ".norm.gamma", &l.norm_gamma);
            out.emplace_back(prefix + ".norm.beta", &l.norm_beta);
            auto& b = l.block;
            out.emplace_back(prefix + ".in_proj.w", &b.in_proj_w);
            out.emplace_back(prefix + ".gate_proj.w", &b.gate_proj_w);
            out.emplace_back(prefix + ".conv.kernel", &b.conv_kernel);
            out.emplace_back(prefix + ".conv.bias", &b.conv_bias);
            out.emplace_back(prefix + ".delta.lowrank", &b.delta_lowrank);
            out.emplace_back(prefix + ".delta.w", &b.delta_proj_w);
            out.emplace_back(prefix + ".delta.b", &b.delta_proj_b);
            out.emplace_back(prefix + ".b_proj.w", &b.b_proj_w);
            out.emplace_back(prefix + ".c_proj.w", &b.c_proj_w);
            out.emplace_back(prefix + ".a_log", &b.a_log);
            out.emplace_back(prefix + ".out_proj.w", &b.out_proj_w);
        };
        out.emplace_back("input_proj.w", &input_proj_w);
        out.emplace_back("input_proj.b", &input_proj_b);
        for (size_t i = 0; i < encoder.size(); ++i) block_params("encoder." + std::to_string(i), encoder[i]);
        if (cfg.compression > 1) {
            out.emplace_back("pool.kernel", &pool_kernel);
            out.emplace_back("unpool.kernel", &unpool_kernel);
        }
        out.emplace_back("pre_quant.gamma", &pre_quant_gamma);
        out.emplace_back("pre_quant.beta", &pre_quant_beta);
        out.emplace_back("quant_head.w", &quant_head_w);
        out.emplace_back("quant_head.b", &quant_head_b);
        out.emplace_back("dequant_head.w", &dequant_head_w);
        out.emplace_back("dequant_head.b", &dequant_head_b);
        for (size_t i = 0; i < decoder.size(); ++i) block_params("decoder." + std::to_string(i), decoder[i]);
        out.emplace_back("final_norm.gamma", &final_norm_gamma);
        out.emplace_back("final_norm.beta", &final_norm_beta);
        out.emplace_back("output_proj.w", &output_proj_w);
        out.emplace_back("output_proj.b", &output_proj_b);
        return out;
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (auto& [name, t] : named_parameters()) n += t->numel();
        return n;
    }

    // Same data buffers, private gradients. For read-only sharing across
    // batch-shard threads.
    TokenizerModel shadow() {
        TokenizerModel s = *this;
        for (auto& [name, t] : s.named_parameters()) *t = t->shadow();
        return s;
    }

    void zero_grad() {
        for (auto& [name, t] : named_parameters()) t->zero_grad();
    }

private:
    Tensor<T> run_stack(Tensor<T> x, std::vector<ResidualLayer<T>>& layers) const {
        for (auto& l : layers) {
            Tensor<T> normed = layernorm(x, l.norm_gamma, l.norm_beta, T(1e-5));
            Tensor<T> blk = cfg.bidirectional ? bidirectional_block(normed, l.block)
                                              : mamba_block(normed, l.block);
            x = add(x, blk);
        }
        return x;
    }

public:
    // Coordinates tensor (already centered) -> bounded latents [n x D].
    Tensor<T> encode_coords(const Tensor<T>& coords) {
        if (coords.ndim() != 2 || coords.dim(1) != 3 || coords.dim(0) < 1)
            throw std::invalid_argument("encode: coords must be [N x 3], N >= 1; got " + coords.shape_str());
        Tensor<T> x = add_rowvec(matmul(coords, input_proj_w), input_proj_b);
        x = run_stack(x, encoder);
        if (cfg.compression > 1) x = pool_conv1d(x, pool_kernel);
        x = layernorm(x, pre_quant_gamma, pre_quant_beta, T(1e-5));
        Tensor<T> z = add_rowvec(matmul(x, quant_head_w), quant_head_b);
        return fsq_bound(z, fsq);
    }

    Tensor<T> coords_tensor(const PointCloud& pc, bool requires_grad = false) const {
        std::vector<T> v(pc.coords.size());
        for (size_t i = 0; i < pc.coords.size(); ++i) v[i] = static_cast<T>(pc.coords[i]);
        return Tensor<T>::from({pc.size(), 3}, std::move(v), requires_grad);
    }

    // Centering is enforced here: token ids are only meaningful in the
    // model's canonical (zero-centroid) frame.
    Tensor<T> encode(const PointCloud& pc) {
        PointCloud c = center(pc);
        return encode_coords(coords_tensor(c));
    }

    TokenSequence tokenize(const PointCloud& pc) {
        NoGradGuard inference;
        auto [zq, tokens] = fsq_quantize(encode(pc), fsq);
        (void)zq;
        return tokens;
    }

    // Lattice values [n x D] -> coordinates [N x 3].
    Tensor<T> decode_lattice(const Tensor<T>& zq, int64_t n_atoms) {
        Tensor<T> x = add_rowvec(matmul(zq, dequant_head_w), dequant_head_b);
        if (cfg.compression > 1) {
            x = upsample_nearest(x, cfg.compression, n_atoms);
            const int64_t w = std::min<int64_t>(cfg.compression, n_atoms);
            Tensor<T> k = w < unpool_kernel.dim(0) ? row_slice(unpool_kernel, unpool_kernel.dim(0) - w,
                                                               unpool_kernel.dim(0))
                                                   : unpool_kernel;
            x = conv1d_depthwise(x, k, ConvPad::same);
        }
        x = run_stack(x, decoder);
        x = layernorm(x, final_norm_gamma, final_norm_beta, T(1e-5));
        return add_rowvec(matmul(x, output_proj_w), output_proj_b);
    }

    PointCloud decode(const TokenSequence& tokens, int64_t n_atoms) {
        NoGradGuard inference;
        const int64_t expect = (n_atoms + cfg.compression - 1) / cfg.compression;
        if (tokens.size() != expect)
            throw std::invalid_argument("decode: " + std::to_string(tokens.size()) + " tokens vs " +
                                        std::to_string(expect) + " expected for " + std::to_string(n_atoms) +
                                        " atoms");
        Tensor<T> zq = tokens_to_lattice<T>(tokens, fsq);
        Tensor<T> out = decode_lattice(zq, n_atoms);
        PointCloud pc;
        pc.coords.resize(static_cast<size_t>(n_atoms) * 3);
        for (size_t i = 0; i < pc.coords.size(); ++i) pc.coords[i] = static_cast<double>(out.at(i));
        return pc;
    }
};

template <typename T>
struct ForwardResult {
    Tensor<T> loss;          // scalar graph node
    double total = 0;        // loss value
    double rmse_term = 0;    // aligned coordinate RMSE (Angstrom)
    double inter_term = 0;   // inter-atomic distance term
    TokenSequence tokens;
    PointCloud reconstruction;  // decoder output in its own frame
};

// End-to-end loss with straight-through gradients through the quantizer.
// `use_rounding=false` replaces the quantizer by its straight-through
// surrogate (the identity), which is the function the backward pass actually
// differentiates; finite-difference checks use that mode.
// `use_interatomic=false` trains on the aligned RMSE alone.
template <typename T>
ForwardResult<T> forward_loss(TokenizerModel<T>& model, const PointCloud& pc, bool use_interatomic = true,
                              bool use_rounding = true) {
    PointCloud target = center(pc);
    Tensor<T> bounded = model.encode_coords(model.coords_tensor(target));

    Tensor<T> zq;
    ForwardResult<T> res;
    if (use_rounding) {
        auto [q, tokens] = fsq_quantize(bounded, model.fsq);
        zq = q;
        res.tokens = std::move(tokens);
    } else {
        zq = bounded;
    }
    Tensor<T> pred = model.decode_lattice(zq, target.size());

    res.reconstruction.coords.resize(target.coords.size());
    for (size_t i = 0; i < res.reconstruction.coords.size(); ++i)
        res.reconstruction.coords[i] = static_cast<double>(pred.at(i));

    const AlignmentResult al = kabsch_align(target, res.reconstruction);
    Tensor<T> rmse = rmse_loss_op(target, pred, al.rotation, al.translation);
    res.rmse_term = static_cast<double>(rmse.value());
    if (use_interatomic) {
        Tensor<T> inter = interatomic_loss_op(target, pred, residue_groups(target));
        res.inter_term = static_cast<double>(inter.value());
        res.loss = add(scale(rmse, T(0.5)), scale(inter, T(0.5)));
    } else {
        res.loss = rmse;
    }
    res.total = static_cast<double>(res.loss.value());
    return res;
}

}  // namespace atomtok
