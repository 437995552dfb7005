#pragma once

// Finite-scalar quantization. Each latent dimension is squashed into
// [0, L_i - 1] by a scaled tanh, rounded to the nearest integer
// (ties-to-even), and the integer tuple is packed into a single token id by
// mixed-radix indexing, giving a bijection between ids and lattice points.
// Rounding uses a straight-through gradient.

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "atomtok/tensor.hpp"

namespace atomtok {

struct FsqSpec {
    std::vector<int> levels;  // levels per latent dimension, each >= 2

    FsqSpec() : levels(6, 4) {}
    explicit FsqSpec(std::vector<int> l) : levels(std::move(l)) { validate(); }
    static FsqSpec uniform(int level, int dims) { return FsqSpec(std::vector<int>(dims, level)); }

    int64_t dims() const { return static_cast<int64_t>(levels.size()); }

    int64_t codebook_size() const {
        int64_t p = 1;
        for (int l : levels) p *= l;
        return p;
    }

    void validate() const {
        if (levels.empty()) throw std::invalid_argument("FsqSpec: empty levels");
        for (int l : levels)
            if (l < 2) throw std::invalid_argument("FsqSpec: every level must be >= 2");
    }

    bool operator==(const FsqSpec& o) const { return levels == o.levels; }

    std::string str() const {
        std::string s = "[";
        for (size_t i = 0; i < levels.size(); ++i) s += (i ? "," : "") + std::to_string(levels[i]);
        return s + "]";
    }
};

struct TokenSequence {
    std::vector<uint32_t> ids;
    int64_t size() const { return static_cast<int64_t>(ids.size()); }
};

// Mixed-radix packing: id = sum_i coords[i] * prod_{j<i} levels[j].
inline uint32_t code_to_id(const std::vector<int>& coords, const FsqSpec& spec) {
    if (static_cast<int64_t>(coords.size()) != spec.dims())
        throw std::invalid_argument("code_to_id: coordinate count != spec dims");
    uint64_t id = 0, base = 1;
    for (size_t i = 0; i < coords.size(); ++i) {
        if (coords[i] < 0 || coords[i] >= spec.levels[i])
            throw std::out_of_range("code_to_id: coordinate " + std::to_string(i) + " = " +
                                    std::to_string(coords[i]) + " outside [0," +
                                    std::to_string(spec.levels[i]) + ")");
        id += static_cast<uint64_t>(coords[i]) * base;
        base *= static_cast<uint64_t>(spec.levels[i]);
    }
    return static_cast<uint32_t>(id);
}

inline std::vector<int> id_to_code(uint32_t id, const FsqSpec& spec) {
    if (static_cast<int64_t>(id) >= spec.codebook_size())
        throw std::out_of_range("id_to_code: id " + std::to_string(id) + " outside codebook of size " +
                                std::to_string(spec.codebook_size()));
    std::vector<int> coords(spec.levels.size());
    uint64_t rest = id;
    for (size_t i = 0; i < spec.levels.size(); ++i) {
        coords[i] = static_cast<int>(rest % spec.levels[i]);
        rest /= spec.levels[i];
    }
    return coords;
}

// Per-dimension map z -> ((L_i - 1) / 2) * (tanh(z) + 1), landing in
// [0, L_i - 1].
template <typename T>
Tensor<T> fsq_bound(const Tensor<T>& z, const FsqSpec& spec) {
    if (z.ndim() != 2 || z.dim(1) != spec.dims())
        throw std::invalid_argument("fsq_bound: input " + z.shape_str() + " vs spec dims " +
                                    std::to_string(spec.dims()));
    const int64_t m = z.dim(0), D = z.dim(1);
    Tensor<T> out;
    out.shape = z.shape;
    out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(m * D));
    auto tanhs = std::make_shared<std::vector<T>>(static_cast<size_t>(m * D));
    const T* pz = z.ptr();
    T* po = out.data->data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < D; ++j) {
            const T th = fm::tanh_(pz[i * D + j]);
            (*tanhs)[i * D + j] = th;
            po[i * D + j] = static_cast<T>(0.5 * (spec.levels[j] - 1)) * (th + T(1));
        }
    if (auto node = detail::attach_node(out, {&z})) {
        auto zn = z.node;
        auto levels = spec.levels;
        Node<T>* self = node.get();
        node->backprop = [self, zn, tanhs, levels, m, D]() {
            zn->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < D; ++j) {
                    const T th = (*tanhs)[i * D + j];
                    zn->grad[i * D + j] += self->grad[i * D + j] *
                                           static_cast<T>(0.5 * (levels[j] - 1)) * (T(1) - th * th);
                }
        };
    }
    return out;
}

// Nearest-integer rounding (straight-through backward) plus token ids.
template <typename T>
std::pair<Tensor<T>, TokenSequence> fsq_quantize(const Tensor<T>& z_bounded, const FsqSpec& spec) {
    if (z_bounded.ndim() != 2 || z_bounded.dim(1) != spec.dims())
        throw std::invalid_argument("fsq_quantize: input " + z_bounded.shape_str() + " vs spec dims " +
                                    std::to_string(spec.dims()));
    Tensor<T> zq = st_round(z_bounded);
    const int64_t m = zq.dim(0), D = zq.dim(1);
    TokenSequence tokens;
    tokens.ids.resize(static_cast<size_t>(m));
    std::vector<int> coords(static_cast<size_t>(D));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < D; ++j) {
            int c = static_cast<int>(zq.at(i * D + j));
            // Clamp guards float drift at the saturated ends of the tanh.
            if (c < 0) c = 0;
            if (c >= spec.levels[j]) c = spec.levels[j] - 1;
            coords[j] = c;
        }
        tokens.ids[i] = code_to_id(coords, spec);
    }
    return {zq, tokens};
}

// Lattice coordinates for a token sequence, as a [n x D] tensor of the
// rounded values (the decoder's input domain).
template <typename T>
Tensor<T> tokens_to_lattice(const TokenSequence& tokens, const FsqSpec& spec) {
    const int64_t m = tokens.size(), D = spec.dims();
    std::vector<T> v(static_cast<size_t>(m * D));
    for (int64_t i = 0; i < m; ++i) {
        const auto coords = id_to_code(tokens.ids[i], spec);
        for (int64_t j = 0; j < D; ++j) v[i * D + j] = static_cast<T>(coords[j]);
    }
    return Tensor<T>::from({m, D}, std::move(v));
}

// |distinct ids| / codebook_size.
inline double codebook_usage(const std::vector<uint32_t>& ids, const FsqSpec& spec) {
    if (ids.empty()) throw std::invalid_argument("codebook_usage: empty token stream");
    std::unordered_set<uint32_t> distinct(ids.begin(), ids.end());
    return static_cast<double>(distinct.size()) / static_cast<double>(spec.codebook_size());
}

}  // namespace atomtok
