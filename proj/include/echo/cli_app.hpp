#ifndef ECHO_CLI_APP_HPP
#define ECHO_CLI_APP_HPP

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "echo/datasets.hpp"
#include "echo/echo_channel.hpp"
#include "echo/estimators.hpp"
#include "echo/experiments.hpp"
#include "echo/models.hpp"
#include "echo/verify.hpp"
#include "echo/version.hpp"

// CLI front end. Exit codes: 0 success, 1 verification/run failure, 2 usage
// error. Every invocation leaves a manifest.json under --out with enough to
// reproduce the run.

namespace echo::cli {

namespace detail {

// "p-23" -> 2^-23; otherwise a plain double.
inline double parse_tol(const std::string& tok) {
    if (!tok.empty() && tok[0] == 'p') {
        const int e = std::stoi(tok.substr(1));
        return std::ldexp(1.0, e);
    }
    return std::stod(tok);
}

inline std::vector<double> parse_betas(const std::string& tok) {
    if (tok == "paper") return paper_beta_grid();
    std::vector<double> out;
    std::stringstream ss(tok);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    if (out.empty()) throw CLI::ValidationError("--betas", "empty beta list");
    return out;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& tok) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(tok);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
    if (out.empty()) throw CLI::ValidationError("--seeds", "empty seed list");
    return out;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

struct Manifest {
    std::string subcommand;
    std::vector<std::string> argv;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::string out_dir;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void write(const std::string& status) const {
        std::filesystem::create_directories(out_dir);
        nlohmann::json j{
            {"subcommand", subcommand},
            {"argv", argv},
            {"config", config},
            {"seed", seed},
            {"out", out_dir},
            {"status", status},
            {"versions", {{"echotool", kVersion}, {"compiler", __VERSION__}}},
            {"wall_time_seconds",
             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
            {"timestamp_utc", utc_timestamp()}};
        std::ofstream f(out_dir + "/manifest.json");
        f << j.dump(2) << "\n";
    }
};

inline Dataset load_dataset(const std::string& name, int n_train, double binarize,
                            std::uint64_t seed) {
    if (name == "mixture2d") return make_mixture2d(n_train, derive_seed(seed, 0xda7a));
    Dataset ds = load_idx_images(name, binarize);
    return ds.train.rows >= 20 ? split_dataset(ds, 0.1) : ds;
}

inline AutoencoderSpec default_spec(const Dataset& ds, const std::string& channel, int batch_size,
                                    double tol) {
    AutoencoderSpec spec;
    spec.d_x = ds.train.cols;
    spec.channel = channel_from_string(channel);
    if (ds.kind == DatasetKind::continuous2d) {
        spec.d_z = 2;
        spec.distortion = DistortionKind::gaussian;
    } else {
        spec.d_z = 8;
        spec.distortion = DistortionKind::bernoulli;
    }
    if (spec.channel == ChannelKind::echo)
        spec.echo_cfg = make_echo_config(batch_size - 1, 1.0, tol);
    return spec;
}

// --set key=value patches (dotted keys) applied on top of the spec JSON;
// unknown keys are rejected when the patched JSON is parsed back.
inline AutoencoderSpec apply_overrides(AutoencoderSpec spec,
                                       const std::vector<std::string>& sets) {
    if (sets.empty()) return spec;
    nlohmann::json j = to_json(spec);
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(kv.substr(eq + 1));
        } catch (const nlohmann::json::parse_error&) {
            value = kv.substr(eq + 1);  // bare strings allowed
        }
        nlohmann::json* node = &j;
        std::stringstream ss(key);
        std::string part, prev;
        std::vector<std::string> parts;
        while (std::getline(ss, part, '.')) parts.push_back(part);
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
        (*node)[parts.back()] = value;
    }
    return spec_from_json(j);
}

inline int print_checks(const std::vector<CheckResult>& results) {
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "  ["
                  << static_cast<long>(r.seconds * 1000) << " ms]\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "all checks passed\n" : "CHECK FAILURES PRESENT\n");
    return all_pass ? 0 : 1;
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
    using nlohmann::json;
    CLI::App app{"echo channel toolkit"};
    app.require_subcommand(1);

    std::string out_dir = "echo-out";
    std::uint64_t seed = 0;
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    app.add_option("--seed", seed, "base seed")->capture_default_str();

    // solve-clip
    auto* sc = app.add_subcommand("solve-clip", "solve the clip factor r from (M, d_max, tol)");
    sc->fallthrough();
    double sc_M = 1.0;
    int sc_dmax = 99;
    std::string sc_tol = "p-23";
    sc->add_option("--M", sc_M, "bound on |f|")->capture_default_str();
    sc->add_option("--dmax", sc_dmax, "truncation depth")->capture_default_str();
    sc->add_option("--tol", sc_tol, "tolerance (double or p-23 style token)")
        ->capture_default_str();

    // sample
    auto* sm = app.add_subcommand("sample", "draw echo noise from a toy source");
    sm->fallthrough();
    std::string sm_mode = "iid";
    int sm_n = 10000, sm_dmax = 99, sm_batch = 100;
    double sm_s0 = 0.5;
    std::string sm_tol = "p-23";
    sm->add_option("--mode", sm_mode, "iid or batch")->capture_default_str();
    sm->add_option("--n", sm_n, "number of noise rows")->capture_default_str();
    sm->add_option("--dmax", sm_dmax, "truncation depth (iid mode)")->capture_default_str();
    sm->add_option("--batch-size", sm_batch, "batch size (batch mode)")->capture_default_str();
    sm->add_option("--s0", sm_s0, "constant noise scale")->capture_default_str();
    sm->add_option("--tol", sm_tol, "tolerance token")->capture_default_str();

    // verify
    auto* vf = app.add_subcommand("verify", "run a named verification suite");
    vf->fallthrough();
    std::string vf_suite = "all";
    vf->add_option("--suite", vf_suite, "one of clip, truncation, thm1, lemma1, entropy, tc, "
                                        "gradients, gaussian, rates, all")
        ->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "train one model");
    tr->fallthrough();
    std::string tr_dataset = "mixture2d", tr_channel = "echo", tr_config, tr_tol = "p-23";
    std::vector<std::string> tr_sets;
    double tr_beta = 1.0, tr_lr = 3e-4, tr_binarize = 0.5;
    int tr_epochs = 50, tr_batch = 100, tr_ntrain = 4000;
    tr->add_option("--dataset", tr_dataset, "mixture2d or an IDX image file path")
        ->capture_default_str();
    tr->add_option("--channel", tr_channel, "echo or gaussian")->capture_default_str();
    tr->add_option("--config", tr_config, "model spec JSON (overrides defaults)");
    tr->add_option("--set", tr_sets, "spec override key=value (dotted keys)");
    tr->add_option("--beta", tr_beta, "rate weight")->capture_default_str();
    tr->add_option("--epochs", tr_epochs)->capture_default_str();
    tr->add_option("--batch", tr_batch)->capture_default_str();
    tr->add_option("--lr", tr_lr, "initial learning rate")->capture_default_str();
    tr->add_option("--n-train", tr_ntrain, "mixture2d train size")->capture_default_str();
    tr->add_option("--binarize", tr_binarize, "IDX binarization threshold")
        ->capture_default_str();
    tr->add_option("--tol", tr_tol, "echo tolerance token")->capture_default_str();

    // rd-sweep
    auto* rd = app.add_subcommand("rd-sweep", "rate-distortion sweep over betas x seeds");
    rd->fallthrough();
    std::string rd_dataset = "mixture2d", rd_channel = "echo", rd_betas = "paper",
                rd_seeds = "0,1,2,3,4", rd_tol = "p-23", rd_config;
    std::vector<std::string> rd_sets;
    double rd_lr = 3e-4, rd_binarize = 0.5;
    int rd_epochs = 50, rd_batch = 100, rd_ntrain = 4000;
    rd->add_option("--dataset", rd_dataset)->capture_default_str();
    rd->add_option("--channel", rd_channel)->capture_default_str();
    rd->add_option("--betas", rd_betas, "comma list or 'paper'")->capture_default_str();
    rd->add_option("--seeds", rd_seeds, "comma list")->capture_default_str();
    rd->add_option("--config", rd_config, "model spec JSON");
    rd->add_option("--set", rd_sets, "spec override key=value");
    rd->add_option("--epochs", rd_epochs)->capture_default_str();
    rd->add_option("--batch", rd_batch)->capture_default_str();
    rd->add_option("--lr", rd_lr)->capture_default_str();
    rd->add_option("--n-train", rd_ntrain)->capture_default_str();
    rd->add_option("--binarize", rd_binarize)->capture_default_str();
    rd->add_option("--tol", rd_tol)->capture_default_str();

    // diagnose
    auto* dg = app.add_subcommand("diagnose", "marginal/TC/pointwise report for a checkpoint");
    dg->fallthrough();
    std::string dg_ckpt, dg_dataset = "mixture2d";
    int dg_nsamples = 2000, dg_ntrain = 4000;
    double dg_binarize = 0.5;
    dg->add_option("--checkpoint", dg_ckpt, "checkpoint path")->required();
    dg->add_option("--dataset", dg_dataset)->capture_default_str();
    dg->add_option("--n-samples", dg_nsamples)->capture_default_str();
    dg->add_option("--n-train", dg_ntrain)->capture_default_str();
    dg->add_option("--binarize", dg_binarize)->capture_default_str();

    // tc
    auto* tc = app.add_subcommand("tc", "total correlation of samples in a headerless CSV");
    tc->fallthrough();
    std::string tc_input;
    tc->add_option("--input", tc_input, "CSV of numeric rows")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    detail::Manifest manifest;
    manifest.out_dir = out_dir;
    manifest.seed = seed;
    for (int i = 0; i < argc; ++i) manifest.argv.push_back(argv[i]);

    try {
        std::filesystem::create_directories(out_dir);

        if (*sc) {
            manifest.subcommand = "solve-clip";
            const double tol = detail::parse_tol(sc_tol);
            manifest.config = {{"M", sc_M}, {"d_max", sc_dmax}, {"tol", tol}};
            const ClipSolution sol = solve_clip_full(sc_M, sc_dmax, tol);
            const double bound = remainder_bound(sc_M, sol.r, sc_dmax);
            std::cout << "r=" << format_g17(sol.r) << (sol.clamped ? " (clamped)" : "")
                      << "\nremainder_bound=" << format_g17(bound) << "\n";
            manifest.config["r"] = sol.r;
            manifest.config["clamped"] = sol.clamped;
            manifest.config["remainder_bound"] = bound;
            manifest.write("ok");
            return 0;
        }

        if (*sm) {
            manifest.subcommand = "sample";
            const double tol = detail::parse_tol(sm_tol);
            manifest.config = {{"mode", sm_mode}, {"n", sm_n},   {"d_max", sm_dmax},
                               {"s0", sm_s0},     {"tol", tol},  {"batch_size", sm_batch}};
            MatrixD eps;
            if (sm_mode == "iid") {
                const EchoConfig cfg = make_echo_config(sm_dmax, 1.0, tol, EchoMode::iid);
                eps = sample_echo_iid(
                    [](int m, Rng& r) { return verify_detail::ring_source(m, r); },
                    [sm_s0](const MatrixD& xs) {
                        return verify_detail::identity_encoder(xs, sm_s0);
                    },
                    cfg, sm_n, derive_seed(seed, 0x5a));
            } else if (sm_mode == "batch") {
                const EchoConfig cfg = make_echo_config(sm_batch - 1, 1.0, tol);
                eps = MatrixD(sm_n, 2);
                Rng rng(derive_seed(seed, 0x5b));
                int filled = 0, b = 0;
                while (filled < sm_n) {
                    const MatrixD x = verify_detail::ring_source(sm_batch, rng);
                    auto [f, log_s] = verify_detail::identity_encoder(x, sm_s0);
                    const MatrixD e = sample_echo_batch(f, log_s, cfg, derive_seed(seed, b++));
                    for (int i = 0; i < e.rows && filled < sm_n; ++i, ++filled)
                        std::copy(e.row(i), e.row(i) + 2, eps.row(filled));
                }
            } else {
                throw CLI::ValidationError("--mode", "must be iid or batch");
            }
            std::ofstream f(out_dir + "/eps.csv");
            for (int i = 0; i < eps.rows; ++i) {
                for (int j = 0; j < eps.cols; ++j)
                    f << (j ? "," : "") << format_g17(eps(i, j));
                f << "\n";
            }
            double mean = 0.0;
            for (double v : eps.data) mean += v;
            mean /= static_cast<double>(eps.size());
            std::cout << "wrote " << eps.rows << " noise rows to " << out_dir
                      << "/eps.csv (mean " << mean << ")\n";
            manifest.write("ok");
            return 0;
        }

        if (*vf) {
            manifest.subcommand = "verify";
            manifest.config = {{"suite", vf_suite}};
            const auto results = run_verify_suite(vf_suite, seed);
            json jr = json::array();
            for (const auto& r : results)
                jr.push_back({{"name", r.name},
                              {"pass", r.pass},
                              {"detail", r.detail},
                              {"seconds", r.seconds}});
            std::ofstream(out_dir + "/verify.json") << jr.dump(2) << "\n";
            const int code = detail::print_checks(results);
            manifest.write(code == 0 ? "ok" : "failed");
            return code;
        }

        if (*tr) {
            manifest.subcommand = "train";
            const Dataset ds = detail::load_dataset(tr_dataset, tr_ntrain, tr_binarize, seed);
            AutoencoderSpec spec;
            if (!tr_config.empty()) {
                std::ifstream f(tr_config);
                if (!f) throw CLI::ValidationError("--config", "cannot open " + tr_config);
                spec = spec_from_json(json::parse(f));
            } else {
                spec = detail::default_spec(ds, tr_channel, tr_batch,
                                            detail::parse_tol(tr_tol));
            }
            spec = detail::apply_overrides(spec, tr_sets);
            TrainConfig cfg;
            cfg.beta = tr_beta;
            cfg.epochs = tr_epochs;
            cfg.batch_size = tr_batch;
            cfg.lr0 = tr_lr;
            cfg.seed = seed;
            manifest.config = {{"spec", to_json(spec)},
                               {"dataset", tr_dataset},
                               {"beta", cfg.beta},
                               {"epochs", cfg.epochs},
                               {"batch_size", cfg.batch_size},
                               {"lr0", cfg.lr0}};
            const TrainResult run = train<float>(spec, ds, cfg);
            save_checkpoint(run.checkpoint, out_dir + "/checkpoint.bin");
            std::ofstream rec(out_dir + "/train_records.csv");
            rec << "epoch,step,loss,rate,distortion,lr\n";
            for (const auto& r : run.records)
                rec << r.epoch << ',' << r.step << ',' << format_g17(r.loss) << ','
                    << format_g17(r.rate) << ',' << format_g17(r.distortion) << ','
                    << format_g17(r.lr) << "\n";
            if (run.aborted)
                std::cout << "training aborted: " << run.abort_reason
                          << " (kept last good checkpoint)\n";
            if (!run.records.empty()) {
                const auto& last = run.records.back();
                std::cout << "final epoch " << last.epoch << ": loss " << last.loss << ", rate "
                          << last.rate << ", distortion " << last.distortion << "\n";
            }
            std::cout << "checkpoint: " << out_dir << "/checkpoint.bin\n";
            manifest.write(run.aborted ? "aborted" : "ok");
            return 0;
        }

        if (*rd) {
            manifest.subcommand = "rd-sweep";
            const Dataset ds = detail::load_dataset(rd_dataset, rd_ntrain, rd_binarize, seed);
            AutoencoderSpec spec;
            if (!rd_config.empty()) {
                std::ifstream f(rd_config);
                if (!f) throw CLI::ValidationError("--config", "cannot open " + rd_config);
                spec = spec_from_json(json::parse(f));
            } else {
                spec = detail::default_spec(ds, rd_channel, rd_batch,
                                            detail::parse_tol(rd_tol));
            }
            spec = detail::apply_overrides(spec, rd_sets);
            const auto betas = detail::parse_betas(rd_betas);
            const auto seeds = detail::parse_seeds(rd_seeds);
            TrainConfig base;
            base.epochs = rd_epochs;
            base.batch_size = rd_batch;
            base.lr0 = rd_lr;
            manifest.config = {{"spec", to_json(spec)}, {"dataset", rd_dataset},
                               {"betas", betas},        {"seeds", seeds},
                               {"epochs", rd_epochs},   {"batch_size", rd_batch},
                               {"lr0", rd_lr}};
            const auto points = rd_sweep<float>(spec, ds, betas, seeds, base,
                                                out_dir + "/rd.csv");
            int ok = 0;
            for (const auto& p : points) ok += p.status == "ok" ? 1 : 0;
            std::cout << "wrote " << points.size() << " cells (" << ok << " ok) to " << out_dir
                      << "/rd.csv\n";
            manifest.write("ok");
            return 0;
        }

        if (*dg) {
            manifest.subcommand = "diagnose";
            const Dataset ds = detail::load_dataset(dg_dataset, dg_ntrain, dg_binarize, seed);
            const Checkpoint ck = load_checkpoint(dg_ckpt);
            manifest.config = {{"checkpoint", dg_ckpt},
                               {"dataset", dg_dataset},
                               {"n_samples", dg_nsamples}};
            const json report = diagnose(ck, ds, dg_nsamples, seed);
            std::ofstream(out_dir + "/diagnose.json") << report.dump(2) << "\n";
            std::cout << "tc: " << report.at("tc").dump() << "\n";
            std::cout << "wrote " << out_dir << "/diagnose.json\n";
            manifest.write("ok");
            return 0;
        }

        if (*tc) {
            manifest.subcommand = "tc";
            manifest.config = {{"input", tc_input}};
            std::ifstream f(tc_input);
            if (!f) throw CLI::ValidationError("--input", "cannot open " + tc_input);
            std::vector<std::vector<double>> rows;
            std::string line;
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                std::vector<double> row;
                std::stringstream ss(line);
                std::string item;
                while (std::getline(ss, item, ',')) row.push_back(std::stod(item));
                if (!rows.empty() && row.size() != rows.front().size())
                    throw std::runtime_error("tc: ragged CSV at line " +
                                             std::to_string(rows.size() + 1));
                rows.push_back(std::move(row));
            }
            if (rows.size() < 2) throw std::runtime_error("tc: need at least 2 rows");
            MatrixD m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
            for (int i = 0; i < m.rows; ++i)
                for (int j = 0; j < m.cols; ++j)
                    m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            const double std_tc = gaussian_tc({m, tc_input}, false);
            const double paper = gaussian_tc({m, tc_input}, true);
            std::cout << "tc_standard=" << std_tc << "\ntc_paper_convention=" << paper << "\n";
            manifest.config["tc_standard"] = std_tc;
            manifest.config["tc_paper_convention"] = paper;
            manifest.write("ok");
            return 0;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        manifest.write("usage-error");
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        manifest.write("usage-error");
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        manifest.write("failed");
        return 1;
    }
    return 2;
}

}  // namespace echo::cli

#endif
