// Acceptance gate: ten numbered criteria, one [PASS]/[FAIL] line each.
// Run all with no arguments or a single one with --criterion N.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "echo/datasets.hpp"
#include "echo/echo_channel.hpp"
#include "echo/estimators.hpp"
#include "echo/experiments.hpp"
#include "echo/models.hpp"
#include "echo/verify.hpp"

using namespace echo;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream ss;
    ss.precision(prec);
    ss << v;
    return ss.str();
}

// Fold a verify suite into one outcome line.
Outcome from_suite(const std::string& suite, std::uint64_t seed) {
    const auto results = run_verify_suite(suite, seed);
    Outcome out;
    out.pass = true;
    std::string fails;
    for (const auto& r : results) {
        out.pass = out.pass && r.pass;
        if (!r.pass) fails += (fails.empty() ? "" : "; ") + r.name + ": " + r.detail;
    }
    if (out.pass) {
        out.detail = suite + " suite clean (" + std::to_string(results.size()) + " checks)";
        if (!results.empty()) out.detail += ", e.g. " + results.back().detail;
    } else {
        out.detail = fails;
    }
    return out;
}

Outcome criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    const double r = solve_clip(1.0, 99, 0x1p-23);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const double err = std::abs(r - 0.8359);
    Outcome out;
    out.pass = err <= 1e-4 && ms < 1.0;
    out.detail = "solve_clip(1, 99, 2^-23) = " + fmt(r, 10) + ", |r - 0.8359| = " + fmt(err, 3) +
                 " (tol 1e-4), " + fmt(ms, 3) + " ms (limit 1)";
    return out;
}

Outcome criterion2() { return from_suite("truncation", 0); }
Outcome criterion3() { return from_suite("thm1", 0); }
Outcome criterion4() { return from_suite("lemma1", 0); }

Outcome criterion5() {
    // rate additivity and the clip floor, on trained checkpoints
    const Dataset ds = make_mixture2d(640, 0x5ca1e);
    const int B = 32, d_z = 2;
    AutoencoderSpec spec;
    spec.d_x = 2;
    spec.d_z = d_z;
    spec.hidden = {32, 16};
    spec.channel = ChannelKind::echo;
    spec.distortion = DistortionKind::gaussian;
    spec.echo_cfg = make_echo_config(B - 1, 1.0, 0x1p-23);
    const float floor = rate_floor_matched<float>(d_z, spec.echo_cfg.r);

    double worst_rel = 0.0;
    int floor_violations = 0, batches_checked = 0;
    for (double beta : {0.1, 1.0, 4.0}) {
        TrainConfig cfg;
        cfg.beta = beta;
        cfg.epochs = 5;
        cfg.batch_size = B;
        cfg.lr0 = 3e-3;
        cfg.seed = static_cast<std::uint64_t>(beta * 1000);
        const TrainResult run = train<float>(spec, ds, cfg);
        if (run.aborted) return {false, "training aborted: " + run.abort_reason};
        Autoencoder<float> model(spec);
        load_checkpoint_params(model, run.checkpoint);
        const Matrix<float> data = ds.test.cast<float>();
        for (int b = 0; b + B <= data.rows; b += B) {
            Matrix<float> batch(B, 2);
            std::copy(data.row(b), data.row(b) + batch.size(), batch.data.begin());
            auto g = model.objective(batch, beta, 900 + b);
            const Matrix<float>& log_s = g.log_scale->value;
            const auto [rate, pointwise] = echo_rate(log_s);
            // additivity: total rate equals the sum of per-dimension rates
            double per_dim_sum = 0.0;
            for (int j = 0; j < d_z; ++j) {
                double col = 0.0;
                for (int i = 0; i < B; ++i) col -= static_cast<double>(log_s(i, j));
                per_dim_sum += col / B;
            }
            worst_rel = std::max(worst_rel, std::abs(rate - per_dim_sum) / rate);
            // floor: exact elementwise bound, no tolerance
            for (double p : pointwise)
                if (!(p >= static_cast<double>(floor))) ++floor_violations;
            ++batches_checked;
        }
    }
    Outcome out;
    out.pass = worst_rel <= 1e-6 && floor_violations == 0 && batches_checked >= 6;
    out.detail = "additivity worst rel err " + fmt(worst_rel, 3) + " (tol 1e-6), " +
                 std::to_string(floor_violations) + " floor violations across " +
                 std::to_string(batches_checked) + " trained eval batches (floor " +
                 fmt(floor, 6) + ")";
    return out;
}

Outcome criterion6() { return from_suite("gradients", 0); }
Outcome criterion7() { return from_suite("entropy", 0); }
Outcome criterion8() { return from_suite("tc", 0); }

Outcome criterion9() {
    // desk-scale rate-distortion sweep on the echo channel
    const Dataset ds = make_mixture2d(1000, 0xd5);
    AutoencoderSpec spec;
    spec.d_x = 2;
    spec.d_z = 2;
    spec.hidden = {128, 64};
    spec.channel = ChannelKind::echo;
    spec.distortion = DistortionKind::gaussian;
    spec.echo_cfg = make_echo_config(99, 1.0, 0x1p-23);
    TrainConfig base;
    base.epochs = 50;
    base.batch_size = 100;
    base.lr0 = 5e-3;
    const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    const auto points = rd_sweep<float>(spec, ds, paper_beta_grid(), seeds, base, "");

    std::map<double, std::pair<double, double>> by_beta;  // beta -> (rate, dist) means
    int bad_cells = 0;
    for (double beta : paper_beta_grid()) {
        double r = 0.0, d = 0.0;
        int n = 0;
        for (const auto& p : points)
            if (p.beta == beta && p.status == "ok") {
                r += p.rate;
                d += p.distortion;
                ++n;
            }
        if (n < static_cast<int>(seeds.size())) ++bad_cells;
        if (n > 0) by_beta[beta] = {r / n, d / n};
    }
    if (bad_cells > 0 || by_beta.size() != paper_beta_grid().size())
        return {false, std::to_string(bad_cells) + " betas with failed cells"};

    std::vector<std::pair<double, double>> curve;  // (rate, distortion)
    for (const auto& [beta, rd] : by_beta) curve.push_back(rd);
    std::sort(curve.begin(), curve.end());
    double worst_bump = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i)
        worst_bump = std::max(worst_bump, curve[i].second - curve[i - 1].second);
    const double floor = rate_floor(2, spec.echo_cfg.r);
    const double rate_at_6 = by_beta.at(6.0).first;

    Outcome out;
    out.pass = worst_bump <= 0.5 && rate_at_6 <= floor + 1.0;
    out.detail = "20 betas x 5 seeds, worst distortion bump along the rate-sorted curve " +
                 fmt(worst_bump, 3) + " nats (slack 0.5), rate(beta=6) = " + fmt(rate_at_6, 4) +
                 " vs floor " + fmt(floor, 4) + " + 1";
    return out;
}

Outcome criterion10() {
    std::cout << "[INFO] criterion 10: results not reproduced at this scale:\n"
                 "[INFO]   - full-size binarized image benchmarks (60k images, "
                 "hundreds of epochs)\n"
                 "[INFO]   - wide multi-architecture sweeps; this gate runs one synthetic "
                 "image smoke test\n";
    // synthetic binary images through the full image pipeline
    Rng rng(0x1d1);
    const int n = 1000, side = 28;
    MatrixD imgs(n, side * side);
    for (int i = 0; i < n; ++i) {
        // one random solid rectangle per image
        const int x0 = rng.uniform_int(side - 8), y0 = rng.uniform_int(side - 8);
        const int w = 3 + rng.uniform_int(5), h = 3 + rng.uniform_int(5);
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) imgs(i, y * side + x) = 1.0;
    }
    Dataset ds;
    ds.name = "synthetic-rectangles";
    ds.kind = DatasetKind::binary_image;
    ds.train = std::move(imgs);

    AutoencoderSpec spec;
    spec.d_x = side * side;
    spec.d_z = 8;
    spec.hidden = {128, 64};
    spec.channel = ChannelKind::echo;
    spec.distortion = DistortionKind::bernoulli;
    spec.echo_cfg = make_echo_config(99, 1.0, 0x1p-23);
    TrainConfig cfg;
    cfg.beta = 1.0;
    cfg.epochs = 3;
    cfg.batch_size = 100;
    cfg.lr0 = 1e-3;
    const TrainResult run = train<float>(spec, ds, cfg);
    if (run.aborted) return {false, "image training aborted: " + run.abort_reason};
    const auto& last = run.records.back();
    const double neg_elbo = last.rate + last.distortion;
    const double start_dist = run.records.front().distortion;
    Outcome out;
    out.pass = std::isfinite(neg_elbo) && last.distortion < start_dist;
    out.detail = "image pipeline: neg elbo " + fmt(neg_elbo, 5) + " nats, distortion " +
                 fmt(start_dist, 4) + " -> " + fmt(last.distortion, 4) + " over " +
                 std::to_string(cfg.epochs) + " epochs";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::cerr << "usage: acceptance [--criterion N]\n";
            return 2;
        }
    }
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
        {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
    bool all_pass = true;
    int ran = 0;
    for (const auto& [id, fn] : criteria) {
        if (only != 0 && id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = fn();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (out.pass ? "[PASS]" : "[FAIL]") << " criterion " << id << ": "
                  << out.detail << " [" << fmt(secs, 3) << " s]" << std::endl;
        all_pass = all_pass && out.pass;
        ++ran;
    }
    if (ran == 0) {
        std::cerr << "no such criterion\n";
        return 2;
    }
    return all_pass ? 0 : 1;
}
