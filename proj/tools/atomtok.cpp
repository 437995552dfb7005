// atomtok: all-atom structure tokenizer toolkit.
//
// Subcommands: synth, train, tokenize, decode, eval, baseline, analyze.
// Configuration precedence: built-in defaults < JSON config file < flags.
// The fully resolved configuration is echoed into the output directory.
// Exit codes: 0 ok, 1 runtime failure, 2 usage/config error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "atomtok/analysis.hpp"
#include "atomtok/baselines.hpp"
#include "atomtok/checkpoint.hpp"
#include "atomtok/data.hpp"
#include "atomtok/geometry.hpp"
#include "atomtok/model.hpp"
#include "atomtok/tokenfile.hpp"
#include "atomtok/training.hpp"

namespace fs = std::filesystem;
using namespace atomtok;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string default_out(const std::string& leaf) {
    const char* root = std::getenv("ATOMTOK_OUT");
    return (fs::path(root ? root : "out") / leaf).string();
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path);
    try {
        return json::parse(f);
    } catch (const std::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
}

// flag set > config file value > built-in default (already in `value`).
template <typename T>
void resolve(const json& file_cfg, const CLI::Option* opt, const char* key, T& value) {
    if (opt && opt->count() > 0) return;
    if (file_cfg.contains(key)) {
        try {
            value = file_cfg.at(key).get<T>();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config field '") + key + "': " + e.what());
        }
    }
}

void echo_config(const std::string& out_dir, const json& resolved) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "resolved.json", std::ios::trunc);
    f << resolved.dump(2) << "\n";
}

std::vector<PointCloud> load_split(const DatasetManifest& manifest, const std::string& split) {
    std::vector<PointCloud> out;
    for (const auto& e : manifest.split(split)) out.push_back(load_structure(e.path));
    return out;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    if (out.empty()) throw ConfigError("empty integer list: " + s);
    return out;
}

struct EvalRow {
    double rmse_all = 0, rmse_bb = 0, rmse_sc = 0;
    bool has_bb = false, has_sc = false;
    double tm = -1;
};

struct Aggregate {
    double mean = 0, stdev = 0, ci95 = 0;
    int64_t n = 0;
};

Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    a.n = static_cast<int64_t>(v.size());
    if (v.empty()) return a;
    for (double x : v) a.mean += x;
    a.mean /= a.n;
    for (double x : v) a.stdev += (x - a.mean) * (x - a.mean);
    a.stdev = std::sqrt(a.stdev / a.n);
    a.ci95 = a.n > 0 ? 1.96 * a.stdev / std::sqrt(static_cast<double>(a.n)) : 0.0;
    return a;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    int n = 100;
    int min_res = 25, max_res = 125;
    int atoms_per_res = 4;
    std::string style = "mixed";
    uint64_t seed = 0;
    double train_frac = 0.8, val_frac = 0.1, test_frac = 0.1;
};

int run_synth(const SynthArgs& a) {
    if (a.min_res < 1 || a.max_res < a.min_res) throw ConfigError("synth: bad residue range");
    const SynthStyle style = synth_style_from_string(a.style);
    fs::create_directories(a.out);
    RandomStream rng(a.seed);
    std::vector<std::string> paths;
    for (int i = 0; i < a.n; ++i) {
        const int res = a.min_res + static_cast<int>(rng.integer(a.max_res - a.min_res + 1));
        const PointCloud pc = synth_polymer(rng, res, a.atoms_per_res, style);
        char name[64];
        std::snprintf(name, sizeof(name), "synth_%05d.pdb", i);
        const fs::path p = fs::path(a.out) / name;
        std::ofstream(p) << write_pdb(pc);
        paths.push_back(name);
    }
    DatasetManifest manifest =
        assign_splits(paths, "synthetic", a.train_frac, a.val_frac, a.test_frac, a.seed);
    save_manifest((fs::path(a.out) / "manifest.tsv").string(), manifest);
    std::cout << "wrote " << a.n << " structures and manifest.tsv to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path, manifest_path, out, resume;
    TokenizerConfig model;
    TrainConfig train;
    std::string levels = "";
};

int run_train(TrainArgs& a, const std::map<std::string, const CLI::Option*>& opts) {
    const json file_cfg = load_config_file(a.config_path);
    auto opt = [&](const char* name) {
        auto it = opts.find(name);
        return it == opts.end() ? nullptr : it->second;
    };
    resolve(file_cfg, opt("--manifest"), "manifest", a.manifest_path);
    resolve(file_cfg, opt("--out"), "out", a.out);
    resolve(file_cfg, opt("--enc"), "n_encoder_layers", a.model.n_encoder_layers);
    resolve(file_cfg, opt("--dec"), "n_decoder_layers", a.model.n_decoder_layers);
    resolve(file_cfg, opt("--d-model"), "d_model", a.model.d_model);
    resolve(file_cfg, opt("--d-state"), "d_state", a.model.d_state);
    resolve(file_cfg, opt("--conv-width"), "conv_width", a.model.conv_width);
    resolve(file_cfg, opt("--expand"), "expand", a.model.expand);
    resolve(file_cfg, opt("--compression"), "compression", a.model.compression);
    resolve(file_cfg, opt("--levels"), "levels", a.levels);
    bool unidirectional = !a.model.bidirectional;
    resolve(file_cfg, opt("--unidirectional"), "unidirectional", unidirectional);
    a.model.bidirectional = !unidirectional;
    resolve(file_cfg, opt("--steps"), "steps", a.train.total_steps);
    resolve(file_cfg, opt("--batch"), "effective_batch", a.train.effective_batch);
    resolve(file_cfg, opt("--lr"), "lr_start", a.train.lr_start);
    resolve(file_cfg, opt("--lr-end"), "lr_end", a.train.lr_end);
    resolve(file_cfg, opt("--power"), "poly_power", a.train.poly_power);
    resolve(file_cfg, opt("--max-seq-len"), "max_seq_len", a.train.max_seq_len);
    bool no_augment = !a.train.augment_rotations;
    resolve(file_cfg, opt("--no-augment"), "no_augment", no_augment);
    a.train.augment_rotations = !no_augment;
    bool no_inter = !a.train.use_interatomic;
    resolve(file_cfg, opt("--no-interatomic"), "no_interatomic", no_inter);
    a.train.use_interatomic = !no_inter;
    resolve(file_cfg, opt("--seed"), "seed", a.train.seed);
    resolve(file_cfg, opt("--checkpoint-every"), "checkpoint_every", a.train.checkpoint_every);
    resolve(file_cfg, opt("--validate-every"), "validate_every", a.train.validate_every);
    resolve(file_cfg, opt("--threads"), "threads", a.train.threads);

    if (a.manifest_path.empty()) throw ConfigError("train: --manifest is required");
    if (!a.levels.empty()) a.model.fsq_levels = parse_int_list(a.levels);
    a.model.seed = a.train.seed;
    if (a.out.empty()) a.out = default_out("train");
    a.train.out_dir = a.out;

    const DatasetManifest manifest = load_manifest(a.manifest_path);
    std::vector<PointCloud> train_set = load_split(manifest, "train");
    std::vector<PointCloud> val_set = load_split(manifest, "val");
    if (train_set.empty()) throw ConfigError("train: manifest has no train split");

    json resolved{{"command", "train"},
                  {"manifest", a.manifest_path},
                  {"out", a.out},
                  {"model", config_to_json(a.model)},
                  {"train",
                   {{"steps", a.train.total_steps},
                    {"effective_batch", a.train.effective_batch},
                    {"lr_start", a.train.lr_start},
                    {"lr_end", a.train.lr_end},
                    {"poly_power", a.train.poly_power},
                    {"max_seq_len", a.train.max_seq_len},
                    {"augment_rotations", a.train.augment_rotations},
                    {"use_interatomic", a.train.use_interatomic},
                    {"seed", a.train.seed},
                    {"checkpoint_every", a.train.checkpoint_every},
                    {"validate_every", a.train.validate_every},
                    {"threads", a.train.threads}}}};
    echo_config(a.out, resolved);

    TokenizerModel<float> model = [&] {
        if (!a.resume.empty()) {
            const fs::path dir(a.resume);
            return load_model((dir / "model.atk").string());
        }
        return TokenizerModel<float>::init(a.model);
    }();
    std::cout << "parameters: " << model.parameter_count() << "\n";

    TrainState resume_state;
    const TrainState* resume_ptr = nullptr;
    if (!a.resume.empty()) {
        resume_state = load_train_state((fs::path(a.resume) / "state.atk").string(), model);
        resume_ptr = &resume_state;
        std::cout << "resuming from step " << resume_state.step << "\n";
    }

    TrainResult result = train(model, train_set, val_set, a.train, resume_ptr);
    std::cout << "initial val rmse: " << result.initial_val_rmse << "\n"
              << "final val rmse:   " << result.final_val_rmse << "\n"
              << "checkpoint:       " << a.out << "/model.atk\n";
    return 0;
}

// ---------------------------------------------------------------------------
// tokenize / decode
// ---------------------------------------------------------------------------

int run_tokenize(const std::string& ckpt, const std::vector<std::string>& inputs, const std::string& out,
                 const std::string& format) {
    TokenizerModel<float> model = load_model(ckpt);
    fs::create_directories(out);
    for (const auto& input : inputs) {
        std::ifstream f(input);
        if (!f) throw std::runtime_error("cannot open " + input);
        std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        std::vector<PointCloud> clouds;
        if (input.size() > 4 && input.substr(input.size() - 4) == ".xyz")
            clouds.push_back(parse_xyz(text));
        else
            clouds = parse_pdb(text);

        TokenFile tf;
        tf.spec = model.fsq;
        for (const auto& pc : clouds) {
            TokenSequence toks = model.tokenize(pc);
            tf.records.push_back({static_cast<uint32_t>(pc.size()), std::move(toks.ids)});
        }
        const std::string stem = fs::path(input).stem().string();
        if (format == "bin" || format == "both")
            write_token_file_binary((fs::path(out) / (stem + ".atok")).string(), tf);
        if (format == "text" || format == "both")
            write_token_file_text((fs::path(out) / (stem + ".tokens.txt")).string(), tf);
        std::cout << input << ": " << tf.records.size() << " record(s), "
                  << tf.records.front().ids.size() << " tokens in the first\n";
    }
    return 0;
}

int run_decode(const std::string& ckpt, const std::vector<std::string>& inputs, const std::string& out,
               const std::string& format) {
    TokenizerModel<float> model = load_model(ckpt);
    fs::create_directories(out);
    for (const auto& input : inputs) {
        TokenFile tf = read_token_file(input);
        if (!(tf.spec == model.fsq))
            throw std::runtime_error("token file " + input + " carries quantizer " + tf.spec.str() +
                                     " but the checkpoint uses " + model.fsq.str() + "; refusing to decode");
        const std::string stem = fs::path(input).stem().string();
        for (size_t r = 0; r < tf.records.size(); ++r) {
            TokenSequence toks;
            toks.ids = tf.records[r].ids;
            const PointCloud pc = model.decode(toks, tf.records[r].n_atoms);
            char name[256];
            std::snprintf(name, sizeof(name), "%s_rec%02zu.%s", stem.c_str(), r, format.c_str());
            std::ofstream o(fs::path(out) / name);
            o << (format == "pdb" ? write_pdb(pc) : write_xyz(pc, "decoded from " + input));
            std::cout << "wrote " << (fs::path(out) / name).string() << " (" << pc.size() << " atoms)\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int run_eval(const std::string& ckpt, const std::string& manifest_path, const std::string& split,
             const std::string& tm_mode, const std::string& out, int threads) {
    TokenizerModel<float> model = load_model(ckpt);
    const DatasetManifest manifest = load_manifest(manifest_path);
    const auto entries = manifest.split(split);
    if (entries.empty()) throw ConfigError("eval: split '" + split + "' is empty");
    (void)threads;

    std::vector<double> all, bb, sc, tms;
    std::vector<uint32_t> all_ids;
    int64_t no_anchor = 0;
    for (const auto& e : entries) {
        const PointCloud target = center(load_structure(e.path));
        const TokenSequence toks = model.tokenize(target);
        all_ids.insert(all_ids.end(), toks.ids.begin(), toks.ids.end());
        const PointCloud recon = model.decode(toks, target.size());
        const AlignmentResult al = kabsch_align(target, recon);
        all.push_back(al.rmse);

        // Backbone/side-chain errors on the same all-atom superposition.
        if (!target.backbone_flag.empty()) {
            double acc_bb = 0, acc_sc = 0;
            int64_t n_bb = 0, n_sc = 0;
            for (int64_t i = 0; i < target.size(); ++i) {
                double d2 = 0;
                for (int k = 0; k < 3; ++k) {
                    const double d = target.coords[i * 3 + k] - al.aligned.coords[i * 3 + k];
                    d2 += d * d;
                }
                if (target.backbone_flag[i]) {
                    acc_bb += d2;
                    ++n_bb;
                } else {
                    acc_sc += d2;
                    ++n_sc;
                }
            }
            if (n_bb) bb.push_back(std::sqrt(acc_bb / n_bb));
            if (n_sc) sc.push_back(std::sqrt(acc_sc / n_sc));
        }

        if (tm_mode != "none") {
            TmMode mode = tm_mode == "rna" ? TmMode::rna_c3 : TmMode::protein_ca;
            if (tm_mode == "auto") {
                if (!tm_anchor_indices(target, TmMode::protein_ca).empty())
                    mode = TmMode::protein_ca;
                else if (!tm_anchor_indices(target, TmMode::rna_c3).empty())
                    mode = TmMode::rna_c3;
                else {
                    ++no_anchor;
                    continue;
                }
            }
            try {
                tms.push_back(tm_score(target, recon, mode));
            } catch (const std::invalid_argument&) {
                ++no_anchor;
            }
        }
    }

    auto print_metric = [](const char* name, const Aggregate& a) {
        if (a.n == 0) return;
        std::printf("%-12s %8.4f +/- %.4f (95%% CI %.4f)  n=%lld\n", name, a.mean, a.stdev, a.ci95,
                    static_cast<long long>(a.n));
    };
    const Aggregate agg_all = aggregate(all), agg_bb = aggregate(bb), agg_sc = aggregate(sc),
                    agg_tm = aggregate(tms);
    print_metric("rmse_all", agg_all);
    print_metric("rmse_bb", agg_bb);
    print_metric("rmse_sc", agg_sc);
    print_metric("tm_score", agg_tm);
    if (no_anchor > 0)
        std::cerr << "warning: " << no_anchor << " structure(s) had no TM anchors; TM omitted for them\n";
    const double usage = codebook_usage(all_ids, model.fsq);
    std::printf("%-12s %8.4f\n", "codebook_use", usage);

    if (!out.empty()) {
        fs::create_directories(out);
        json rep{{"split", split},
                 {"structures", entries.size()},
                 {"rmse_all", {{"mean", agg_all.mean}, {"std", agg_all.stdev}, {"ci95", agg_all.ci95}}},
                 {"codebook_usage", usage}};
        if (agg_bb.n) rep["rmse_bb"] = {{"mean", agg_bb.mean}, {"std", agg_bb.stdev}, {"ci95", agg_bb.ci95}};
        if (agg_sc.n) rep["rmse_sc"] = {{"mean", agg_sc.mean}, {"std", agg_sc.stdev}, {"ci95", agg_sc.ci95}};
        if (agg_tm.n) rep["tm_score"] = {{"mean", agg_tm.mean}, {"std", agg_tm.stdev}, {"ci95", agg_tm.ci95}};
        std::ofstream(fs::path(out) / "eval.json") << rep.dump(2) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

int run_baseline_voxel(double A, double rmsd, double a, const std::string& manifest_path,
                       const std::string& split) {
    if (A > 0 && rmsd > 0) std::cout << voxel_count(A, rmsd) << "\n";
    if (a > 0)
        std::cout << "voxel_rmsd(" << a << ") = " << voxel_rmsd(a) << "  (constant "
                  << voxel_rmsd_constant() << ")\n";
    if (!manifest_path.empty()) {
        if (!(A > 0) || !(a > 0)) throw ConfigError("baseline voxel: empirical mode needs --A and --a");
        const DatasetManifest manifest = load_manifest(manifest_path);
        VoxelGrid grid{A, a};
        double md = 0, rm = 0;
        int64_t n = 0;
        for (const auto& e : manifest.split(split)) {
            const PointCloud pc = center(load_structure(e.path));
            const PointCloud recon = voxel_decode(voxel_encode(pc, grid), grid);
            md += mean_distance(pc, recon);
            rm += kabsch_rmse(pc, recon);
            ++n;
        }
        std::cout << "empirical mean distance: " << md / n << "  kabsch rmse: " << rm / n << "  (" << n
                  << " structures, " << grid.total_voxels() << " voxels)\n";
    }
    return 0;
}

int run_baseline_kmeans(const std::string& manifest_path, int64_t K, int iters, int64_t max_points,
                        uint64_t seed, int threads, const std::string& out) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    std::vector<PointCloud> train_set = load_split(manifest, "train");
    std::vector<PointCloud> test_set = load_split(manifest, "test");
    if (train_set.empty() || test_set.empty())
        throw ConfigError("baseline kmeans: manifest needs train and test splits");

    // Rotation-augmented centered training points.
    RandomStream rng(seed);
    std::vector<double> sample;
    for (const auto& pc : train_set) {
        const PointCloud rot = apply_rotation(center(pc), random_rotation(rng));
        sample.insert(sample.end(), rot.coords.begin(), rot.coords.end());
    }
    if (max_points > 0 && static_cast<int64_t>(sample.size()) / 3 > max_points) {
        std::vector<double> sub;
        sub.reserve(max_points * 3);
        for (int64_t i = 0; i < max_points; ++i) {
            const int64_t j = rng.integer(sample.size() / 3);
            sub.insert(sub.end(), {sample[j * 3], sample[j * 3 + 1], sample[j * 3 + 2]});
        }
        sample.swap(sub);
    }

    const VoronoiCodebook cb = kmeans_codebook(sample, K, iters, seed, threads);
    double rm = 0;
    for (const auto& pc : test_set) {
        const PointCloud c = center(pc);
        rm += kabsch_rmse(c, voronoi_decode(voronoi_encode(c, cb, threads), cb));
    }
    rm /= static_cast<double>(test_set.size());
    std::cout << "kmeans K=" << K << " held-out kabsch rmse: " << rm << "\n";
    if (!out.empty()) {
        fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
        save_codebook(out, cb);
        std::cout << "codebook written to " << out << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

StudyBudget make_budget(int64_t steps, int batch, double lr, int threads, uint64_t seed) {
    StudyBudget b;
    b.steps = steps;
    b.effective_batch = batch;
    b.lr_start = lr;
    b.threads = threads;
    b.seed = seed;
    return b;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"atomtok: tokenize all-atom 3D structures into discrete sequences and back"};
    app.require_subcommand(1);

    // --- synth ---
    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic polymer dataset + manifest");
    synth_cmd->add_option("--out", synth_args.out, "output directory")->required();
    synth_cmd->add_option("--n", synth_args.n, "number of structures");
    synth_cmd->add_option("--min-res", synth_args.min_res, "min residues per structure");
    synth_cmd->add_option("--max-res", synth_args.max_res, "max residues per structure");
    synth_cmd->add_option("--atoms-per-res", synth_args.atoms_per_res, "atoms per residue");
    synth_cmd->add_option("--style", synth_args.style, "helix | coil | mixed");
    synth_cmd->add_option("--seed", synth_args.seed, "rng seed");
    synth_cmd->add_option("--train-frac", synth_args.train_frac, "train fraction");
    synth_cmd->add_option("--val-frac", synth_args.val_frac, "val fraction");
    synth_cmd->add_option("--test-frac", synth_args.test_frac, "test fraction");

    // --- train ---
    TrainArgs train_args;
    std::map<std::string, const CLI::Option*> train_opts;
    auto* train_cmd = app.add_subcommand("train", "train a tokenizer");
    train_opts["--config"] = train_cmd->add_option("--config", train_args.config_path, "JSON config file");
    train_opts["--manifest"] = train_cmd->add_option("--manifest", train_args.manifest_path, "dataset manifest");
    train_opts["--out"] = train_cmd->add_option("--out", train_args.out, "output directory");
    train_opts["--resume"] = train_cmd->add_option("--resume", train_args.resume, "run directory to resume from");
    train_opts["--enc"] = train_cmd->add_option("--enc", train_args.model.n_encoder_layers, "encoder layers");
    train_opts["--dec"] = train_cmd->add_option("--dec", train_args.model.n_decoder_layers, "decoder layers");
    train_opts["--d-model"] = train_cmd->add_option("--d-model", train_args.model.d_model, "model width");
    train_opts["--d-state"] = train_cmd->add_option("--d-state", train_args.model.d_state, "ssm state size");
    train_opts["--conv-width"] = train_cmd->add_option("--conv-width", train_args.model.conv_width, "conv width");
    train_opts["--expand"] = train_cmd->add_option("--expand", train_args.model.expand, "inner expansion");
    train_opts["--compression"] = train_cmd->add_option("--compression", train_args.model.compression,
                                                        "tokens per ceil(N/k) atoms");
    train_opts["--levels"] = train_cmd->add_option("--levels", train_args.levels,
                                                   "comma-separated quantizer levels, e.g. 4,4,4,4,4,4");
    train_opts["--unidirectional"] = train_cmd->add_flag("--unidirectional", "disable the flipped branch");
    train_opts["--steps"] = train_cmd->add_option("--steps", train_args.train.total_steps, "optimizer steps");
    train_opts["--batch"] = train_cmd->add_option("--batch", train_args.train.effective_batch,
                                                  "structures per optimizer step");
    train_opts["--lr"] = train_cmd->add_option("--lr", train_args.train.lr_start, "starting learning rate");
    train_opts["--lr-end"] = train_cmd->add_option("--lr-end", train_args.train.lr_end, "final learning rate");
    train_opts["--power"] = train_cmd->add_option("--power", train_args.train.poly_power, "decay power");
    train_opts["--max-seq-len"] = train_cmd->add_option("--max-seq-len", train_args.train.max_seq_len,
                                                        "training length cutoff (atoms)");
    train_opts["--no-augment"] = train_cmd->add_flag("--no-augment", "disable rotation augmentation");
    train_opts["--no-interatomic"] = train_cmd->add_flag("--no-interatomic", "train on aligned RMSE only");
    train_opts["--seed"] = train_cmd->add_option("--seed", train_args.train.seed, "run seed");
    train_opts["--checkpoint-every"] = train_cmd->add_option("--checkpoint-every",
                                                             train_args.train.checkpoint_every, "steps");
    train_opts["--validate-every"] = train_cmd->add_option("--validate-every",
                                                           train_args.train.validate_every, "steps");
    train_opts["--threads"] = train_cmd->add_option("--threads", train_args.train.threads, "worker threads");
    bool train_unidirectional = false;
    train_cmd->callback([&]() {
        if (train_opts.at("--unidirectional")->count() > 0) train_unidirectional = true;
        train_args.model.bidirectional = !train_unidirectional;
        if (train_opts.at("--no-augment")->count() > 0) train_args.train.augment_rotations = false;
        if (train_opts.at("--no-interatomic")->count() > 0) train_args.train.use_interatomic = false;
    });

    // --- tokenize ---
    std::string tok_ckpt, tok_out = default_out("tokens"), tok_format = "bin";
    std::vector<std::string> tok_inputs;
    auto* tok_cmd = app.add_subcommand("tokenize", "structure files -> token files");
    tok_cmd->add_option("--checkpoint", tok_ckpt, "model checkpoint")->required();
    tok_cmd->add_option("inputs", tok_inputs, "structure files (.pdb/.xyz)")->required();
    tok_cmd->add_option("--out", tok_out, "output directory");
    tok_cmd->add_option("--format", tok_format, "bin | text | both");

    // --- decode ---
    std::string dec_ckpt, dec_out = default_out("decoded"), dec_format = "xyz";
    std::vector<std::string> dec_inputs;
    auto* dec_cmd = app.add_subcommand("decode", "token files -> structure files");
    dec_cmd->add_option("--checkpoint", dec_ckpt, "model checkpoint")->required();
    dec_cmd->add_option("inputs", dec_inputs, "token files")->required();
    dec_cmd->add_option("--out", dec_out, "output directory");
    dec_cmd->add_option("--format", dec_format, "xyz | pdb");

    // --- eval ---
    std::string eval_ckpt, eval_manifest, eval_split = "test", eval_tm = "auto", eval_out;
    int eval_threads = 1;
    auto* eval_cmd = app.add_subcommand("eval", "reconstruction metrics on a manifest split");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval_cmd->add_option("--split", eval_split, "train | val | test");
    eval_cmd->add_option("--tm", eval_tm, "auto | protein | rna | none");
    eval_cmd->add_option("--out", eval_out, "report directory");
    eval_cmd->add_option("--threads", eval_threads, "worker threads");

    // --- baseline ---
    auto* base_cmd = app.add_subcommand("baseline", "spatial-codec baselines");
    base_cmd->require_subcommand(1);
    double vox_A = 0, vox_rmsd = 0, vox_a = 0;
    std::string vox_manifest, vox_split = "test";
    auto* vox_cmd = base_cmd->add_subcommand("voxel", "uniform voxel grid model/codec");
    vox_cmd->add_option("--A", vox_A, "cube side (Angstrom)");
    vox_cmd->add_option("--rmsd", vox_rmsd, "target accuracy -> prints the voxel count");
    vox_cmd->add_option("--a", vox_a, "voxel side -> prints the accuracy model");
    vox_cmd->add_option("--manifest", vox_manifest, "manifest for an empirical codec measurement");
    vox_cmd->add_option("--split", vox_split, "manifest split");

    std::string km_manifest, km_out;
    int64_t km_K = 4096, km_points = 200000;
    int km_iters = 15, km_threads = 1;
    uint64_t km_seed = 0;
    auto* km_cmd = base_cmd->add_subcommand("kmeans", "k-means Voronoi codebook baseline");
    km_cmd->add_option("--manifest", km_manifest, "dataset manifest")->required();
    km_cmd->add_option("--K", km_K, "codebook size");
    km_cmd->add_option("--iters", km_iters, "Lloyd iterations");
    km_cmd->add_option("--samples", km_points, "max training points");
    km_cmd->add_option("--seed", km_seed, "rng seed");
    km_cmd->add_option("--threads", km_threads, "worker threads");
    km_cmd->add_option("--out", km_out, "codebook output file");

    // --- analyze ---
    auto* an_cmd = app.add_subcommand("analyze", "diagnostic studies");
    an_cmd->require_subcommand(1);

    std::string mix_ckpt, mix_manifest, mix_split = "test";
    int mix_deletions = 50;
    uint64_t mix_seed = 0;
    auto* mix_cmd = an_cmd->add_subcommand("mixing", "changed-token span under single-atom deletion");
    mix_cmd->add_option("--checkpoint", mix_ckpt)->required();
    mix_cmd->add_option("--manifest", mix_manifest)->required();
    mix_cmd->add_option("--split", mix_split);
    mix_cmd->add_option("--deletions", mix_deletions);
    mix_cmd->add_option("--seed", mix_seed);

    std::string rot_ckpt, rot_structure, rot_axis = "z", rot_out = default_out("rotation.tsv");
    int rot_angles = 64;
    auto* rot_cmd = an_cmd->add_subcommand("rotation", "token/rmse sweep over a full turn");
    rot_cmd->add_option("--checkpoint", rot_ckpt)->required();
    rot_cmd->add_option("--structure", rot_structure, "structure file")->required();
    rot_cmd->add_option("--axis", rot_axis, "x | y | z");
    rot_cmd->add_option("--angles", rot_angles, "sweep points");
    rot_cmd->add_option("--out", rot_out, "report path");

    std::string prof_ckpt, prof_manifest, prof_split = "test", prof_out = default_out("center_profile.tsv");
    int64_t prof_points = 10000;
    uint64_t prof_seed = 0;
    auto* prof_cmd = an_cmd->add_subcommand("center-profile", "per-atom error vs distance to center");
    prof_cmd->add_option("--checkpoint", prof_ckpt)->required();
    prof_cmd->add_option("--manifest", prof_manifest)->required();
    prof_cmd->add_option("--split", prof_split);
    prof_cmd->add_option("--points", prof_points);
    prof_cmd->add_option("--seed", prof_seed);
    prof_cmd->add_option("--out", prof_out, "report path");

    std::string study_manifest, study_out, study_list;
    int64_t study_steps = 1500;
    int study_batch = 4, study_threads = 1, study_seeds = 3;
    double study_lr = 1e-3;
    uint64_t study_seed = 0;
    TokenizerConfig study_base;
    auto add_study_common = [&](CLI::App* cmd, const char* default_leaf) {
        cmd->add_option("--manifest", study_manifest)->required();
        cmd->add_option("--out", study_out)->default_val(default_out(default_leaf));
        cmd->add_option("--steps", study_steps);
        cmd->add_option("--batch", study_batch);
        cmd->add_option("--lr", study_lr);
        cmd->add_option("--threads", study_threads);
        cmd->add_option("--seed", study_seed);
        cmd->add_option("--d-model", study_base.d_model);
        cmd->add_option("--enc", study_base.n_encoder_layers);
        cmd->add_option("--dec", study_base.n_decoder_layers);
        cmd->add_option("--d-state", study_base.d_state);
        (void)default_leaf;
    };
    study_base.d_model = 48;
    study_base.n_encoder_layers = 2;
    study_base.n_decoder_layers = 3;
    study_base.d_state = 8;

    auto* scale_cmd = an_cmd->add_subcommand("scaling", "rmse vs codebook size power law");
    add_study_common(scale_cmd, "scaling.tsv");
    scale_cmd->add_option("--dims", study_list, "comma list of quantizer dims")->default_val("4,5,6,7,8");

    auto* comp_cmd = an_cmd->add_subcommand("compression", "rmse vs token compression factor");
    add_study_common(comp_cmd, "compression.tsv");
    comp_cmd->add_option("--factors", study_list, "comma list of factors")->default_val("1,2,4");

    auto* abl_cmd = an_cmd->add_subcommand("ablation", "cumulative modification ladder");
    add_study_common(abl_cmd, "ablation.tsv");
    abl_cmd->add_option("--seeds", study_seeds, "seeds per rung");

    try {
        app.parse(argc, argv);

        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (train_cmd->parsed()) return run_train(train_args, train_opts);
        if (tok_cmd->parsed()) return run_tokenize(tok_ckpt, tok_inputs, tok_out, tok_format);
        if (dec_cmd->parsed()) return run_decode(dec_ckpt, dec_inputs, dec_out, dec_format);
        if (eval_cmd->parsed())
            return run_eval(eval_ckpt, eval_manifest, eval_split, eval_tm, eval_out, eval_threads);
        if (vox_cmd->parsed()) return run_baseline_voxel(vox_A, vox_rmsd, vox_a, vox_manifest, vox_split);
        if (km_cmd->parsed())
            return run_baseline_kmeans(km_manifest, km_K, km_iters, km_points, km_seed, km_threads, km_out);

        if (mix_cmd->parsed()) {
            TokenizerModel<float> model = load_model(mix_ckpt);
            const DatasetManifest manifest = load_manifest(mix_manifest);
            const auto structures = load_split(manifest, mix_split);
            if (structures.empty()) throw ConfigError("mixing: empty split");
            const MixingResult res = mixing_radius(model, structures, mix_deletions, mix_seed);
            std::printf("mixing radius: %.3f +/- %.3f (raw %.3f +/- %.3f, %lld deletions)\n",
                        res.mean_radius, res.std_radius, res.mean_raw, res.std_raw,
                        static_cast<long long>(res.samples));
            return 0;
        }
        if (rot_cmd->parsed()) {
            TokenizerModel<float> model = load_model(rot_ckpt);
            const int axis = rot_axis == "x" ? 0 : (rot_axis == "y" ? 1 : 2);
            const SweepReport rep = rotation_sweep(model, load_structure(rot_structure), axis, rot_angles);
            fs::create_directories(fs::path(rot_out).parent_path().empty()
                                       ? "."
                                       : fs::path(rot_out).parent_path().string());
            rep.save(rot_out);
            std::cout << "wrote " << rep.rows.size() << " records to " << rot_out << "\n";
            return 0;
        }
        if (prof_cmd->parsed()) {
            TokenizerModel<float> model = load_model(prof_ckpt);
            const DatasetManifest manifest = load_manifest(prof_manifest);
            const auto structures = load_split(manifest, prof_split);
            if (structures.empty()) throw ConfigError("center-profile: empty split");
            const SweepReport rep = center_distance_profile(model, structures, prof_points, prof_seed);
            fs::create_directories(fs::path(prof_out).parent_path().empty()
                                       ? "."
                                       : fs::path(prof_out).parent_path().string());
            rep.save(prof_out);
            std::cout << "wrote " << rep.rows.size() << " samples to " << prof_out << "\n";
            return 0;
        }
        if (scale_cmd->parsed() || comp_cmd->parsed() || abl_cmd->parsed()) {
            const DatasetManifest manifest = load_manifest(study_manifest);
            const auto train_set = load_split(manifest, "train");
            const auto test_set = load_split(manifest, "test");
            if (train_set.empty() || test_set.empty())
                throw ConfigError("study: manifest needs train and test splits");
            const StudyBudget budget = make_budget(study_steps, study_batch, study_lr, study_threads,
                                                   study_seed);
            SweepReport rep;
            if (scale_cmd->parsed())
                rep = codebook_scaling_study(study_base, parse_int_list(study_list.empty() ? "4,5,6,7,8"
                                                                                           : study_list),
                                             train_set, test_set, budget);
            else if (comp_cmd->parsed())
                rep = compression_study(study_base, parse_int_list(study_list.empty() ? "1,2,4" : study_list),
                                        train_set, test_set, budget);
            else {
                std::vector<uint64_t> seeds;
                for (int s = 0; s < study_seeds; ++s) seeds.push_back(study_seed + s);
                rep = ablation_harness(study_base, train_set, test_set, budget, seeds);
            }
            fs::create_directories(fs::path(study_out).parent_path().empty()
                                       ? "."
                                       : fs::path(study_out).parent_path().string());
            rep.save(study_out);
            std::cout << rep.to_text();
            std::cout << "report written to " << study_out << "\n";
            return 0;
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        // Missing/invalid inputs are usage problems; anything else is runtime.
        const std::string msg = e.what();
        if (msg.find("manifest") != std::string::npos || msg.find("config") != std::string::npos)
            return 2;
        return 1;
    }
}
