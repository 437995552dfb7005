#include "atomtok/data.hpp"

#include "atomtok/geometry.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace atomtok {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string field(const std::string& line, size_t col1, size_t col2) {
    // 1-based inclusive column range, tolerant of short lines.
    if (line.size() < col1) return "";
    return trim(line.substr(col1 - 1, std::min(col2, line.size()) - col1 + 1));
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end != nullptr && *end == '\0' && std::isfinite(out);
}

// Element from the dedicated columns when present, else guessed from the
// atom name (first alphabetic character; two-letter only when the name
// starts in column 13, the PDB convention for elements like FE).
std::string guess_element(const std::string& elem_field, const std::string& raw_name) {
    if (!elem_field.empty()) {
        std::string e = elem_field;
        for (auto& c : e) c = static_cast<char>(std::toupper(c));
        return e;
    }
    std::string name = raw_name;
    if (name.size() >= 2 && std::isalpha(name[0]) && std::isalpha(name[1]) && raw_name[0] != ' ') {
        // Name occupies the element column pair.
        std::string two{static_cast<char>(std::toupper(name[0])), static_cast<char>(std::toupper(name[1]))};
        static const std::set<std::string> kTwoLetter = {"FE", "ZN", "MG", "MN", "CA", "NA", "CL",
                                                         "BR", "CU", "NI", "CO", "SE", "MO", "CD"};
        if (kTwoLetter.count(two)) return two;
    }
    for (char c : name)
        if (std::isalpha(c)) return std::string(1, static_cast<char>(std::toupper(c)));
    return "";
}

bool is_hydrogen(const std::string& element) { return element == "H" || element == "D"; }

const std::set<std::string>& backbone_names() {
    static const std::set<std::string> kNames = {
        // protein backbone
        "N", "CA", "C", "O", "OXT",
        // nucleic acid backbone + sugar
        "P", "OP1", "OP2", "O5'", "C5'", "C4'", "O4'", "C3'", "O3'", "C2'", "O2'", "C1'"};
    return kNames;
}

struct RawAtom {
    double xyz[3];
    double occupancy;
    std::string name, element, resname;
    char altloc;
    int residue_running;  // running residue index
    int chain;
};

}  // namespace

std::vector<PointCloud> parse_pdb(const std::string& text, ParseStats* stats) {
    ParseStats local;
    std::vector<PointCloud> models;

    std::vector<RawAtom> atoms;
    std::map<std::string, size_t> altloc_slot;  // atom identity -> index in atoms
    std::map<std::string, int> chain_ids;
    std::string last_residue_key;
    int residue_running = -1;

    auto flush_model = [&]() {
        if (atoms.empty()) return;
        PointCloud pc;
        for (const auto& a : atoms) {
            pc.coords.insert(pc.coords.end(), {a.xyz[0], a.xyz[1], a.xyz[2]});
            pc.residue_index.push_back(a.residue_running);
            pc.backbone_flag.push_back(backbone_names().count(a.name) ? 1 : 0);
            pc.chain_id.push_back(a.chain);
            pc.atom_name.push_back(a.name);
            pc.element.push_back(a.element);
        }
        models.push_back(std::move(pc));
        atoms.clear();
        altloc_slot.clear();
        chain_ids.clear();
        last_residue_key.clear();
        residue_running = -1;
    };

    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const std::string rec = field(line, 1, 6);
        if (rec == "MODEL") continue;
        if (rec == "ENDMDL") {
            flush_model();
            continue;
        }
        if (rec != "ATOM" && rec != "HETATM") continue;

        const std::string name = field(line, 13, 16);
        const std::string resname = field(line, 18, 20);
        const std::string chain = field(line, 22, 22);
        const std::string resseq = field(line, 23, 26);
        const std::string icode = field(line, 27, 27);
        const char altloc = line.size() >= 17 ? line[16] : ' ';

        double x, y, z, occ = 1.0;
        if (name.empty() || !parse_double(field(line, 31, 38), x) || !parse_double(field(line, 39, 46), y) ||
            !parse_double(field(line, 47, 54), z)) {
            ++local.skipped_records;
            continue;
        }
        if (!parse_double(field(line, 55, 60), occ)) occ = 1.0;

        const std::string element = guess_element(field(line, 77, 78), line.substr(12, 4));
        if (is_hydrogen(element)) {
            ++local.dropped_hydrogens;
            continue;
        }
        if (resname == "HOH") {
            ++local.dropped_waters;
            continue;
        }

        const std::string residue_key = chain + "|" + resseq + "|" + icode;
        if (residue_key != last_residue_key) {
            ++residue_running;
            last_residue_key = residue_key;
        }
        if (!chain_ids.count(chain)) chain_ids[chain] = static_cast<int>(chain_ids.size());

        RawAtom a;
        a.xyz[0] = x;
        a.xyz[1] = y;
        a.xyz[2] = z;
        a.occupancy = occ;
        a.name = name;
        a.element = element;
        a.resname = resname;
        a.altloc = altloc;
        a.residue_running = residue_running;
        a.chain = chain_ids[chain];

        const std::string atom_key = residue_key + "|" + name;
        auto it = altloc_slot.find(atom_key);
        if (it == altloc_slot.end() || altloc == ' ') {
            if (it == altloc_slot.end()) {
                altloc_slot[atom_key] = atoms.size();
                atoms.push_back(std::move(a));
            } else {
                // duplicate without altloc: keep first
                ++local.dropped_altloc;
            }
        } else {
            // highest occupancy wins; ties keep the first seen
            if (a.occupancy > atoms[it->second].occupancy) {
                a.residue_running = atoms[it->second].residue_running;
                atoms[it->second] = std::move(a);
            }
            ++local.dropped_altloc;
        }
    }
    flush_model();

    if (stats) *stats = local;
    if (models.empty()) throw std::runtime_error("parse_pdb: no atoms found");
    for (auto& m : models) m.validate();
    return models;
}

PointCloud parse_xyz(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("parse_xyz: empty input");
    long declared = -1;
    try {
        declared = std::stol(trim(line));
    } catch (...) {
        throw std::runtime_error("parse_xyz: bad atom count header");
    }
    std::getline(is, line);  // comment

    PointCloud pc;
    long seen = 0;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        std::istringstream ls(t);
        std::string el;
        double x, y, z;
        if (!(ls >> el >> x >> y >> z)) throw std::runtime_error("parse_xyz: malformed atom line: " + t);
        ++seen;
        std::string upper = el;
        for (auto& c : upper) c = static_cast<char>(std::toupper(c));
        if (is_hydrogen(upper)) continue;
        pc.coords.insert(pc.coords.end(), {x, y, z});
        pc.residue_index.push_back(0);
        pc.backbone_flag.push_back(0);
        pc.chain_id.push_back(0);
        pc.atom_name.push_back(el);
        pc.element.push_back(upper);
    }
    if (seen != declared)
        throw std::runtime_error("parse_xyz: header declares " + std::to_string(declared) + " atoms, body has " +
                                 std::to_string(seen));
    if (pc.size() == 0) throw std::runtime_error("parse_xyz: no heavy atoms");
    pc.validate();
    return pc;
}

std::string write_xyz(const PointCloud& pc, const std::string& comment) {
    std::ostringstream os;
    os << pc.size() << "\n" << comment << "\n";
    char buf[128];
    for (int64_t i = 0; i < pc.size(); ++i) {
        const std::string el = i < static_cast<int64_t>(pc.element.size()) && !pc.element[i].empty()
                                   ? pc.element[i]
                                   : "C";
        std::snprintf(buf, sizeof(buf), "%s %.6f %.6f %.6f\n", el.c_str(), pc.coords[i * 3],
                      pc.coords[i * 3 + 1], pc.coords[i * 3 + 2]);
        os << buf;
    }
    return os.str();
}

std::string write_pdb(const PointCloud& pc) {
    std::ostringstream os;
    char buf[128];
    for (int64_t i = 0; i < pc.size(); ++i) {
        const std::string name = i < static_cast<int64_t>(pc.atom_name.size()) && !pc.atom_name[i].empty()
                                     ? pc.atom_name[i]
                                     : "C";
        const std::string el = i < static_cast<int64_t>(pc.element.size()) && !pc.element[i].empty()
                                   ? pc.element[i]
                                   : "C";
        const int res = pc.residue_index.empty() ? 1 : pc.residue_index[i] + 1;
        const char chain = static_cast<char>('A' + (pc.chain_id.empty() ? 0 : pc.chain_id[i] % 26));
        std::snprintf(buf, sizeof(buf),
                      "ATOM  %5d %-4s %3s %c%4d    %8.3f%8.3f%8.3f%6.2f%6.2f          %2s\n",
                      static_cast<int>(i % 99999 + 1), name.c_str(), "GLY", chain, res % 10000,
                      pc.coords[i * 3], pc.coords[i * 3 + 1], pc.coords[i * 3 + 2], 1.0, 0.0, el.c_str());
        os << buf;
    }
    os << "END\n";
    return os.str();
}

PointCloud load_structure(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_structure: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "xyz") return parse_xyz(text);
    if (ext == "pdb" || ext == "ent") return parse_pdb(text).front();
    throw std::runtime_error("load_structure: unsupported extension ." + ext + " for " + path);
}

SynthStyle synth_style_from_string(const std::string& s) {
    if (s == "helix") return SynthStyle::helix;
    if (s == "coil") return SynthStyle::coil;
    if (s == "mixed") return SynthStyle::mixed;
    throw std::invalid_argument("unknown synth style: " + s);
}

namespace {

constexpr double kHelixRise = 1.5;
constexpr double kHelixRadius = 2.3;
constexpr double kHelixTurnDeg = 100.0;
constexpr double kCoilStep = 3.8;
constexpr double kMinBackboneDist = 2.5;
constexpr int kMaxRetries = 10000;

Vec3 random_unit(RandomStream& rng) {
    for (;;) {
        Vec3 v = {rng.normal(), rng.normal(), rng.normal()};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-8) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

bool clash(const std::vector<Vec3>& backbone, const Vec3& p, size_t skip_last) {
    const size_t limit = backbone.size() > skip_last ? backbone.size() - skip_last : 0;
    for (size_t i = 0; i < limit; ++i) {
        double d2 = 0;
        for (int k = 0; k < 3; ++k) d2 += (backbone[i][k] - p[k]) * (backbone[i][k] - p[k]);
        if (d2 < kMinBackboneDist * kMinBackboneDist) return true;
    }
    return false;
}

}  // namespace

PointCloud synth_polymer(RandomStream& rng, int n_residues, int atoms_per_residue, SynthStyle style) {
    if (n_residues < 1) throw std::invalid_argument("synth_polymer: n_residues must be >= 1");
    if (atoms_per_residue < 1) throw std::invalid_argument("synth_polymer: atoms_per_residue must be >= 1");

    std::vector<Vec3> backbone;
    backbone.reserve(n_residues);

    int retries = 0;
    auto helix_point = [](const Mat3& frame, const Vec3& origin, int i) {
        const double theta = i * kHelixTurnDeg * M_PI / 180.0;
        const Vec3 local = {kHelixRadius * std::cos(theta), kHelixRadius * std::sin(theta), kHelixRise * i};
        Vec3 p = mat3_apply(frame, local);
        for (int k = 0; k < 3; ++k) p[k] += origin[k];
        return p;
    };

    if (style == SynthStyle::helix) {
        const Mat3 eye = mat3_identity();
        for (int i = 0; i < n_residues; ++i) backbone.push_back(helix_point(eye, {0, 0, 0}, i));
    } else {
        // Coil segments take self-avoiding steps; mixed interleaves helical
        // segments in randomly oriented frames.
        bool in_helix = false;
        int seg_left = 0, helix_i = 0;
        Mat3 frame = mat3_identity();
        Vec3 helix_origin = {0, 0, 0};
        backbone.push_back({0, 0, 0});
        while (static_cast<int>(backbone.size()) < n_residues) {
            if (style == SynthStyle::mixed && seg_left == 0) {
                in_helix = !in_helix;
                seg_left = 6 + static_cast<int>(rng.integer(12));
                if (in_helix) {
                    frame = random_rotation(rng);
                    helix_i = 1;
                    const Vec3 p0 = helix_point(frame, {0, 0, 0}, 0);
                    const Vec3& last = backbone.back();
                    helix_origin = {last[0] - p0[0], last[1] - p0[1], last[2] - p0[2]};
                }
            }
            Vec3 next;
            if (style == SynthStyle::mixed && in_helix) {
                next = helix_point(frame, helix_origin, helix_i);
            } else {
                const Vec3 dir = random_unit(rng);
                const Vec3& last = backbone.back();
                next = {last[0] + kCoilStep * dir[0], last[1] + kCoilStep * dir[1],
                        last[2] + kCoilStep * dir[2]};
            }
            if (clash(backbone, next, 1)) {
                if (++retries > kMaxRetries)
                    throw std::runtime_error("synth_polymer: rejection sampling exceeded retry budget");
                if (style == SynthStyle::mixed && in_helix) seg_left = 0;  // re-orient the helix
                continue;
            }
            backbone.push_back(next);
            if (style == SynthStyle::mixed && in_helix) ++helix_i;
            --seg_left;
        }
    }

    PointCloud pc;
    for (int i = 0; i < n_residues; ++i) {
        pc.coords.insert(pc.coords.end(), {backbone[i][0], backbone[i][1], backbone[i][2]});
        pc.residue_index.push_back(i);
        pc.backbone_flag.push_back(1);
        pc.chain_id.push_back(0);
        pc.atom_name.push_back("CA");
        pc.element.push_back("C");

        // Side atoms sit in a local frame derived from the backbone tangent
        // (like real side groups) with small angular/radial jitter, at
        // 1.0-1.8 A from their backbone atom.
        const Vec3& prev = backbone[i > 0 ? i - 1 : i];
        const Vec3& next = backbone[i + 1 < n_residues ? i + 1 : i];
        Vec3 t = {next[0] - prev[0], next[1] - prev[1], next[2] - prev[2]};
        double tn = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
        if (tn < 1e-9) {
            t = {0, 0, 1};
            tn = 1;
        }
        for (int k = 0; k < 3; ++k) t[k] /= tn;
        Vec3 u = {t[1], -t[0], 0};
        double un = std::sqrt(u[0] * u[0] + u[1] * u[1]);
        if (un < 1e-6) {
            u = {1, 0, 0};
            un = 1;
        }
        for (int k = 0; k < 3; ++k) u[k] /= un;
        const Vec3 v = {t[1] * u[2] - t[2] * u[1], t[2] * u[0] - t[0] * u[2], t[0] * u[1] - t[1] * u[0]};

        for (int a = 1; a < atoms_per_residue; ++a) {
            const double phi = a * 2.0 * M_PI / atoms_per_residue + rng.uniform(-0.2, 0.2);
            const double rho =
                std::clamp(1.0 + 0.7 * (a - 1) / std::max(1, atoms_per_residue - 1) + rng.uniform(-0.05, 0.05),
                           1.0, 1.8);
            const double lift = 0.3 * std::sin(phi * 2.0);
            Vec3 dir;
            for (int k = 0; k < 3; ++k) dir[k] = std::cos(phi) * u[k] + std::sin(phi) * v[k] + lift * t[k];
            const double dn = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
            pc.coords.insert(pc.coords.end(),
                             {backbone[i][0] + rho * dir[0] / dn, backbone[i][1] + rho * dir[1] / dn,
                              backbone[i][2] + rho * dir[2] / dn});
            pc.residue_index.push_back(i);
            pc.backbone_flag.push_back(0);
            pc.chain_id.push_back(0);
            pc.atom_name.push_back("S" + std::to_string(a));
            pc.element.push_back("C");
        }
    }
    pc.validate();
    return pc;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ls(t);
        ManifestEntry e;
        if (!(ls >> e.path >> e.split >> e.kind))
            throw std::runtime_error("manifest: malformed line " + std::to_string(lineno) + " in " + path);
        if (e.split != "train" && e.split != "val" && e.split != "test")
            throw std::runtime_error("manifest: unknown split '" + e.split + "' at line " +
                                     std::to_string(lineno));
        std::filesystem::path p(e.path);
        if (p.is_relative()) p = base / p;
        e.path = p.string();
        if (!std::filesystem::exists(p))
            throw std::runtime_error("manifest: missing structure file " + e.path);
        m.entries.push_back(std::move(e));
    }
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("manifest: cannot write " + path);
    f << "# path\tsplit\tkind\n";
    for (const auto& e : m.entries) f << e.path << "\t" << e.split << "\t" << e.kind << "\n";
}

DatasetManifest assign_splits(std::vector<std::string> paths, const std::string& kind, double train_frac,
                              double val_frac, double test_frac, uint64_t seed) {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw std::invalid_argument("assign_splits: fractions must sum to 1");
    RandomStream rng(seed);
    rng.shuffle(paths.begin(), paths.end());

    const size_t n = paths.size();
    size_t n_train = static_cast<size_t>(std::floor(train_frac * n));
    size_t n_val = static_cast<size_t>(std::floor(val_frac * n));
    size_t n_test = static_cast<size_t>(std::floor(test_frac * n));
    size_t rest = n - n_train - n_val - n_test;
    while (rest > 0) {  // remainder to the earliest splits
        if (rest > 0) { ++n_train; --rest; }
        if (rest > 0) { ++n_val; --rest; }
        if (rest > 0) { ++n_test; --rest; }
    }
    for (auto [count, name] : {std::pair<size_t, const char*>{n_train, "train"}, {n_val, "val"}, {n_test, "test"}})
        if (count == 0 && n > 0) std::cerr << "warning: split '" << name << "' is empty\n";

    DatasetManifest m;
    for (size_t i = 0; i < n; ++i) {
        ManifestEntry e;
        e.path = paths[i];
        e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        e.kind = kind;
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace atomtok
