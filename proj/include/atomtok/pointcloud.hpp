#pragma once

// All-atom point cloud: N x 3 coordinates in Angstrom plus per-atom
// annotations. Coordinates are double on the data side; model code converts
// to its own scalar type at the boundary.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace atomtok {

struct PointCloud {
    std::vector<double> coords;         // N*3, row-major
    std::vector<int> residue_index;     // per atom, non-decreasing within a chain
    std::vector<uint8_t> backbone_flag; // per atom
    std::vector<int> chain_id;          // per atom
    std::vector<std::string> atom_name; // optional, may be empty
    std::vector<std::string> element;   // optional, may be empty

    int64_t size() const { return static_cast<int64_t>(coords.size()) / 3; }

    std::array<double, 3> atom(int64_t i) const {
        return {coords[i * 3], coords[i * 3 + 1], coords[i * 3 + 2]};
    }

    void validate() const {
        const int64_t n = size();
        if (n < 1) throw std::invalid_argument("PointCloud: empty");
        if (coords.size() != static_cast<size_t>(n) * 3) throw std::invalid_argument("PointCloud: ragged coords");
        for (double v : coords)
            if (!std::isfinite(v)) throw std::invalid_argument("PointCloud: non-finite coordinate");
        auto check_n = [n](size_t got, const char* what) {
            if (got != 0 && got != static_cast<size_t>(n))
                throw std::invalid_argument(std::string("PointCloud: ") + what + " length mismatch");
        };
        check_n(residue_index.size(), "residue_index");
        check_n(backbone_flag.size(), "backbone_flag");
        check_n(chain_id.size(), "chain_id");
        check_n(atom_name.size(), "atom_name");
        check_n(element.size(), "element");
        if (!residue_index.empty() && !chain_id.empty()) {
            for (int64_t i = 1; i < n; ++i)
                if (chain_id[i] == chain_id[i - 1] && residue_index[i] < residue_index[i - 1])
                    throw std::invalid_argument("PointCloud: residue_index decreasing within chain");
        }
    }

    std::array<double, 3> centroid() const {
        std::array<double, 3> c{0, 0, 0};
        const int64_t n = size();
        for (int64_t i = 0; i < n; ++i)
            for (int k = 0; k < 3; ++k) c[k] += coords[i * 3 + k];
        for (int k = 0; k < 3; ++k) c[k] /= static_cast<double>(n);
        return c;
    }
};

// Translates the cloud so its centroid is the origin.
inline PointCloud center(const PointCloud& pc) {
    PointCloud out = pc;
    const auto c = pc.centroid();
    const int64_t n = pc.size();
    for (int64_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) out.coords[i * 3 + k] -= c[k];
    return out;
}

// Atom indices grouped by (chain, residue); one group per residue. Clouds
// without residue annotations collapse to a single group.
inline std::vector<std::vector<int64_t>> residue_groups(const PointCloud& pc) {
    const int64_t n = pc.size();
    std::vector<std::vector<int64_t>> groups;
    if (pc.residue_index.empty()) {
        groups.emplace_back();
        for (int64_t i = 0; i < n; ++i) groups.back().push_back(i);
        return groups;
    }
    for (int64_t i = 0; i < n; ++i) {
        const bool new_group = i == 0 || pc.residue_index[i] != pc.residue_index[i - 1] ||
                               (!pc.chain_id.empty() && pc.chain_id[i] != pc.chain_id[i - 1]);
        if (new_group) groups.emplace_back();
        groups.back().push_back(i);
    }
    return groups;
}

}  // namespace atomtok
