#pragma once

// Structure-file ingestion (PDB and XYZ subsets), dataset manifests with
// deterministic splits, and a synthetic polymer generator for desk-scale
// training. Heavy atoms only: hydrogens (and deuterium) are dropped at
// parse time, waters (HOH) are dropped entirely.

#include <cstdint>
#include <string>
#include <vector>

#include "atomtok/pointcloud.hpp"
#include "atomtok/rng.hpp"

namespace atomtok {

struct ParseStats {
    int64_t skipped_records = 0;   // malformed ATOM/HETATM lines
    int64_t dropped_hydrogens = 0;
    int64_t dropped_waters = 0;
    int64_t dropped_altloc = 0;    // alternate locations not kept
};

// One PointCloud per MODEL block (a single implicit model otherwise).
// Alternate locations keep the highest occupancy (ties: first seen).
std::vector<PointCloud> parse_pdb(const std::string& text, ParseStats* stats = nullptr);

// Count-header XYZ; single residue group.
PointCloud parse_xyz(const std::string& text);

std::string write_xyz(const PointCloud& pc, const std::string& comment = "");
std::string write_pdb(const PointCloud& pc);

// Dispatch on extension (.pdb -> first model, .xyz). Throws on anything else.
PointCloud load_structure(const std::string& path);

enum class SynthStyle { helix, coil, mixed };

// Polymer with a helical backbone (rise 1.5 A, radius 2.3 A, 100 deg/residue),
// a self-avoiding random walk (step 3.8 A, min pairwise distance 2.5 A), or
// alternating segments of both. Side-group atoms sit 1.0-1.8 A off their
// backbone atom. Backbone atoms are named CA so they double as TM anchors.
PointCloud synth_polymer(RandomStream& rng, int n_residues, int atoms_per_residue, SynthStyle style);

SynthStyle synth_style_from_string(const std::string& s);

struct ManifestEntry {
    std::string path;
    std::string split;  // train | val | test
    std::string kind;   // protein | rna | molecule | complex | synthetic
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(const std::string& name) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == name) out.push_back(e);
        return out;
    }
};

// Text format: one "path<TAB>split<TAB>kind" line per entry, '#' comments.
// Loading verifies that every referenced path exists.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& m);

// Deterministic shuffle + partition. Fractions must sum to 1; floor counts
// with the remainder assigned to the earliest splits.
DatasetManifest assign_splits(std::vector<std::string> paths, const std::string& kind,
                              double train_frac, double val_frac, double test_frac, uint64_t seed);

}  // namespace atomtok
