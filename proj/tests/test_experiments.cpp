#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "echo/experiments.hpp"

using namespace echo;

namespace {

AutoencoderSpec small_spec(int B, ChannelKind channel = ChannelKind::echo) {
    AutoencoderSpec spec;
    spec.d_x = 2;
    spec.d_z = 2;
    spec.hidden = {8};
    spec.channel = channel;
    spec.distortion = DistortionKind::gaussian;
    if (channel == ChannelKind::echo) spec.echo_cfg = make_echo_config(B - 1, 1.0, 0x1p-23);
    return spec;
}

TrainConfig quick_cfg(double beta, int epochs, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.beta = beta;
    cfg.epochs = epochs;
    cfg.batch_size = 16;
    cfg.lr0 = 3e-3;
    cfg.seed = seed;
    return cfg;
}

std::string temp_path(const char* stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("beta grid is the stock 20-point list", "[experiments]") {
    const auto& grid = paper_beta_grid();
    REQUIRE(grid.size() == 20);
    REQUIRE(grid.front() == 0.05);
    REQUIRE(grid.back() == 6.0);
    for (std::size_t i = 1; i < grid.size(); ++i) REQUIRE(grid[i] > grid[i - 1]);
}

TEST_CASE("learning rate holds then decays linearly to zero", "[experiments]") {
    const double lr0 = 1e-3;
    for (int e : {0, 1, 2, 3, 4}) REQUIRE(lr_at_epoch(e, 10, lr0) == lr0);
    REQUIRE(lr_at_epoch(5, 10, lr0) == Catch::Approx(lr0));
    REQUIRE(lr_at_epoch(9, 10, lr0) == Catch::Approx(0.2 * lr0));
    REQUIRE(lr_at_epoch(9, 10, lr0) < lr_at_epoch(7, 10, lr0));
}

TEST_CASE("training is deterministic", "[experiments]") {
    const Dataset ds = make_mixture2d(160, 2);
    const AutoencoderSpec spec = small_spec(16);
    const TrainConfig cfg = quick_cfg(1.0, 3, 5);
    const TrainResult a = train<float>(spec, ds, cfg);
    const TrainResult b = train<float>(spec, ds, cfg);
    REQUIRE_FALSE(a.aborted);
    REQUIRE(a.records.size() == 3);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        REQUIRE(a.records[i].loss == b.records[i].loss);
        REQUIRE(a.records[i].rate == b.records[i].rate);
        REQUIRE(a.records[i].distortion == b.records[i].distortion);
        REQUIRE(a.records[i].step == b.records[i].step);
    }
    const std::string p1 = temp_path("echo_det_a.bin"), p2 = temp_path("echo_det_b.bin");
    save_checkpoint(a.checkpoint, p1);
    save_checkpoint(b.checkpoint, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    REQUIRE(std::string((std::istreambuf_iterator<char>(f1)), {}) ==
            std::string((std::istreambuf_iterator<char>(f2)), {}));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("train validates shapes and sizes up front", "[experiments]") {
    const Dataset ds = make_mixture2d(160, 2);
    AutoencoderSpec spec = small_spec(16);
    TrainConfig cfg = quick_cfg(1.0, 1, 0);
    cfg.batch_size = 300;  // larger than the dataset
    REQUIRE_THROWS(train<float>(spec, ds, cfg));
    cfg = quick_cfg(1.0, 1, 0);
    spec.echo_cfg = make_echo_config(40, 1.0, 0x1p-23);  // d_max != B-1
    REQUIRE_THROWS(train<float>(spec, ds, cfg));
    spec = small_spec(16);
    spec.d_x = 3;  // dataset is 2-wide
    REQUIRE_THROWS(train<float>(spec, ds, cfg));
}

TEST_CASE("pressure on the rate moves rate and distortion the right way", "[experiments]") {
    const Dataset ds = make_mixture2d(320, 7);
    const AutoencoderSpec spec = small_spec(16);
    double dist_free = 0.0, dist_squeezed = 0.0, rate_free = 0.0, rate_squeezed = 0.0;
    const int n_seeds = 3;
    for (int s = 0; s < n_seeds; ++s) {
        const TrainResult free = train<float>(spec, ds, quick_cfg(0.0, 10, 100 + s));
        const TrainResult tight = train<float>(spec, ds, quick_cfg(2.0, 10, 100 + s));
        REQUIRE_FALSE(free.aborted);
        REQUIRE_FALSE(tight.aborted);
        dist_free += free.records.back().distortion;
        dist_squeezed += tight.records.back().distortion;
        rate_free += free.records.back().rate;
        rate_squeezed += tight.records.back().rate;
    }
    REQUIRE(dist_free / n_seeds < dist_squeezed / n_seeds);
    REQUIRE(rate_squeezed / n_seeds < rate_free / n_seeds);
    // the echo rate can never drop below the clip floor
    const double floor = rate_floor(2, spec.echo_cfg.r);
    REQUIRE(rate_squeezed / n_seeds >= floor - 1e-9);
    REQUIRE(rate_free / n_seeds < 10.0);
}

TEST_CASE("rd csv round trips exactly, including failed cells", "[experiments]") {
    std::vector<RDPoint> pts;
    pts.push_back({"echo", 0.5, 1, 1.25, 0.75, 2.0, "ok"});
    pts.push_back({"echo", 0.1, 0, 0.12345678901234567, 3.0, 3.1234567890123457, "ok"});
    pts.push_back({"gaussian", 6.0, 2, std::nan(""), std::nan(""), std::nan(""), "failed"});
    const std::string path = temp_path("echo_rd_rt.csv");
    write_rd_csv(path, pts);
    const auto back = read_rd_csv(path);
    REQUIRE(back.size() == 3);
    // sorted by (channel, beta, seed)
    REQUIRE(back[0].beta == 0.1);
    REQUIRE(back[1].beta == 0.5);
    REQUIRE(back[2].channel == "gaussian");
    for (const auto& p : back) {
        const auto& orig = *std::find_if(pts.begin(), pts.end(), [&](const RDPoint& q) {
            return q.channel == p.channel && q.beta == p.beta && q.seed == p.seed;
        });
        REQUIRE(p.status == orig.status);
        if (orig.status == "ok") {
            REQUIRE(p.rate == orig.rate);  // %.17g survives the round trip bit for bit
            REQUIRE(p.distortion == orig.distortion);
            REQUIRE(p.neg_elbo == orig.neg_elbo);
        } else {
            REQUIRE(std::isnan(p.rate));
        }
    }
    std::remove(path.c_str());

    std::ofstream bad(path);
    bad << "wrong,header\n";
    bad.close();
    REQUIRE_THROWS(read_rd_csv(path));
    std::remove(path.c_str());
}

TEST_CASE("rd_sweep runs its grid and marks broken cells", "[experiments]") {
    const Dataset ds = make_mixture2d(160, 9);
    const AutoencoderSpec spec = small_spec(16);
    TrainConfig base = quick_cfg(0.0, 2, 0);
    const std::string path = temp_path("echo_rd_sweep.csv");
    const auto pts = rd_sweep<float>(spec, ds, {0.1, 1.0}, {0, 1}, base, path);
    REQUIRE(pts.size() == 4);
    for (const auto& p : pts) {
        REQUIRE(p.status == "ok");
        REQUIRE(std::isfinite(p.rate));
        REQUIRE(p.neg_elbo == p.rate + p.distortion);
    }
    REQUIRE(std::filesystem::exists(path));
    const auto from_disk = read_rd_csv(path);
    REQUIRE(from_disk.size() == 4);
    std::remove(path.c_str());

    // a spec that cannot train (d_max mismatch) must fail cell by cell
    AutoencoderSpec broken = spec;
    broken.echo_cfg = make_echo_config(40, 1.0, 0x1p-23);
    const auto bad = rd_sweep<float>(broken, ds, {1.0}, {0}, base, "");
    REQUIRE(bad.size() == 1);
    REQUIRE(bad[0].status == "failed");
    REQUIRE(std::isnan(bad[0].rate));
}

TEST_CASE("rd_sweep results do not depend on the worker count", "[experiments]") {
    const Dataset ds = make_mixture2d(160, 9);
    const AutoencoderSpec spec = small_spec(16);
    TrainConfig base = quick_cfg(0.5, 2, 0);
    setenv("ECHO_RD_THREADS", "1", 1);
    const auto serial = rd_sweep<float>(spec, ds, {0.2, 0.8}, {0, 1}, base, "");
    setenv("ECHO_RD_THREADS", "4", 1);
    const auto parallel = rd_sweep<float>(spec, ds, {0.2, 0.8}, {0, 1}, base, "");
    unsetenv("ECHO_RD_THREADS");
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        REQUIRE(serial[i].beta == parallel[i].beta);
        REQUIRE(serial[i].seed == parallel[i].seed);
        REQUIRE(serial[i].rate == parallel[i].rate);
        REQUIRE(serial[i].distortion == parallel[i].distortion);
    }
}

TEST_CASE("evaluate_checkpoint reports finite means on the eval split", "[experiments]") {
    const Dataset ds = make_mixture2d(160, 11);
    const TrainResult run = train<float>(small_spec(16), ds, quick_cfg(1.0, 2, 3));
    const auto [rate, dist] = evaluate_checkpoint<float>(run.checkpoint, ds, 16);
    REQUIRE(std::isfinite(rate));
    REQUIRE(std::isfinite(dist));
    REQUIRE(rate >= rate_floor(2, run.checkpoint.spec.echo_cfg.r) - 1e-9);
}

TEST_CASE("diagnose emits the full report shape", "[experiments]") {
    const Dataset ds = make_mixture2d(300, 13);
    const TrainResult run = train<float>(small_spec(16), ds, quick_cfg(1.0, 2, 7));
    const nlohmann::json rep = diagnose(run.checkpoint, ds, 64, 21);
    REQUIRE(rep.contains("marginals"));
    REQUIRE(rep.contains("tc"));
    REQUIRE(rep.contains("pointwise"));
    REQUIRE(rep.contains("config"));
    REQUIRE(rep.at("marginals").size() == 2);  // d_z
    for (const auto& m : rep.at("marginals")) {
        REQUIRE(m.contains("dim"));
        REQUIRE(m.contains("mean"));
        REQUIRE(m.contains("var"));
        REQUIRE(m.contains("ad_p"));
    }
    REQUIRE(rep.at("tc").contains("standard"));
    REQUIRE(rep.at("tc").contains("paper_convention"));
    const auto& pw = rep.at("pointwise");
    REQUIRE(pw.size() >= 2);
    for (std::size_t i = 1; i < pw.size(); ++i)
        REQUIRE(pw[i].at("distortion").get<double>() >=
                pw[i - 1].at("distortion").get<double>());
    REQUIRE(rep.at("config").at("n_samples") == 64);
}

TEST_CASE("gaussian channel trains through the same loop", "[experiments]") {
    const Dataset ds = make_mixture2d(160, 15);
    const TrainResult run =
        train<float>(small_spec(16, ChannelKind::gaussian), ds, quick_cfg(1.0, 2, 1));
    REQUIRE_FALSE(run.aborted);
    REQUIRE(std::isfinite(run.records.back().loss));
}
