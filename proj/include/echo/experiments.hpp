#ifndef ECHO_EXPERIMENTS_HPP
#define ECHO_EXPERIMENTS_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "echo/datasets.hpp"
#include "echo/estimators.hpp"
#include "echo/models.hpp"
#include "echo/optimizer.hpp"

namespace echo {

// Default beta grid used by rd-sweep when asked for the stock list.
inline const std::vector<double>& paper_beta_grid() {
    static const std::vector<double> grid = {0.05, 0.075, 0.1, 0.125, 0.15, 0.2, 0.25,
                                             0.3,  0.4,   0.5, 0.6,   0.7,  0.8, 0.9,
                                             1.0,  1.5,   2.0, 3.0,   4.0,  6.0};
    return grid;
}

struct TrainConfig {
    double beta = 1.0;
    int epochs = 50;
    int batch_size = 100;
    double lr0 = 3e-4;
    std::uint64_t seed = 0;
};

struct TrainRecord {
    int epoch = 0;
    long step = 0;  // cumulative optimizer steps at epoch end
    double loss = 0.0;
    double rate = 0.0;
    double distortion = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<TrainRecord> records;
    bool aborted = false;
    std::string abort_reason;
};

// Constant lr for the first half, linear decay to 0 over the last half.
inline double lr_at_epoch(int epoch, int epochs, double lr0) {
    const int start = epochs - epochs / 2;
    if (epoch < start) return lr0;
    return lr0 * static_cast<double>(epochs - epoch) / static_cast<double>(epochs - start);
}

// Single-threaded, deterministic given (spec, dataset, cfg). A non-finite
// loss aborts and returns the checkpoint from the end of the last clean
// epoch. Only full batches are used; echo without replacement needs
// d_max = B - 1 exactly.
template <class T = float>
TrainResult train(const AutoencoderSpec& spec, const Dataset& dataset, const TrainConfig& cfg) {
    validate_spec(spec);
    if (cfg.batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
    if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (dataset.train.rows < cfg.batch_size)
        throw std::invalid_argument("train: dataset smaller than one batch");
    if (dataset.train.cols != spec.d_x)
        throw std::invalid_argument("train: dataset width " + std::to_string(dataset.train.cols) +
                                    " != d_x " + std::to_string(spec.d_x));
    if (spec.channel == ChannelKind::echo && !spec.echo_cfg.with_replacement &&
        spec.echo_cfg.d_max != cfg.batch_size - 1)
        throw std::invalid_argument("train: without-replacement echo needs d_max = B-1 (d_max=" +
                                    std::to_string(spec.echo_cfg.d_max) + ", B=" +
                                    std::to_string(cfg.batch_size) + ")");

    Autoencoder<T> model(spec, derive_seed(cfg.seed, 0x1417));
    const Matrix<T> data = dataset.train.cast<T>();
    const int n = data.rows, B = cfg.batch_size;
    const int batches = n / B;

    Rng shuffler(derive_seed(cfg.seed, 0x51f));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    TrainResult res;
    res.checkpoint = make_checkpoint(model, 0, cfg.seed);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(epoch, cfg.epochs, cfg.lr0);
        shuffler.shuffle(order);
        double sum_loss = 0.0, sum_rate = 0.0, sum_dist = 0.0;
        for (int b = 0; b < batches; ++b) {
            Matrix<T> batch(B, data.cols);
            for (int i = 0; i < B; ++i) {
                const int src = order[static_cast<std::size_t>(b * B + i)];
                std::copy(data.row(src), data.row(src) + data.cols, batch.row(i));
            }
            auto g = model.objective(batch, cfg.beta, derive_seed(cfg.seed, 0xba7c00 + step));
            const Objective vals = g.values(cfg.beta);
            if (!std::isfinite(vals.loss)) {
                res.aborted = true;
                res.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step);
                return res;
            }
            model.store.adam_step(forward_backward(g.loss, model.store), lr);
            ++step;
            sum_loss += vals.loss;
            sum_rate += vals.rate;
            sum_dist += vals.distortion;
        }
        res.records.push_back({epoch, step, sum_loss / batches, sum_rate / batches,
                               sum_dist / batches, lr});
        res.checkpoint = make_checkpoint(model, step, cfg.seed);
    }
    return res;
}

struct RDPoint {
    std::string channel;
    double beta = 0.0;
    std::uint64_t seed = 0;
    double rate = 0.0;
    double distortion = 0.0;
    double neg_elbo = 0.0;
    std::string status = "ok";  // ok | aborted | failed
};

// Mean rate/distortion of a checkpoint over full batches of the evaluation
// split (test when present, train otherwise), at fixed evaluation seeds.
template <class T = float>
std::pair<double, double> evaluate_checkpoint(const Checkpoint& ck, const Dataset& dataset,
                                              int batch_size) {
    Autoencoder<T> model(ck.spec);
    load_checkpoint_params(model, ck);
    const MatrixD& evalset = dataset.test.rows >= batch_size ? dataset.test : dataset.train;
    const Matrix<T> data = evalset.cast<T>();
    const int batches = data.rows / batch_size;
    if (batches < 1) throw std::invalid_argument("evaluate_checkpoint: split too small");
    double rate = 0.0, dist = 0.0;
    for (int b = 0; b < batches; ++b) {
        Matrix<T> batch(batch_size, data.cols);
        std::copy(data.row(b * batch_size), data.row(b * batch_size) + batch.size(),
                  batch.data.begin());
        auto g = model.objective(batch, 1.0, derive_seed(ck.seed, 0xe7a1u + b));
        const Objective vals = g.values(1.0);
        rate += vals.rate;
        dist += vals.distortion;
    }
    return {rate / batches, dist / batches};
}

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_rd_csv(const std::string& path, std::vector<RDPoint> points) {
    std::sort(points.begin(), points.end(), [](const RDPoint& a, const RDPoint& b) {
        return std::tie(a.channel, a.beta, a.seed) < std::tie(b.channel, b.beta, b.seed);
    });
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "channel,beta,seed,rate_nats,distortion_nats,neg_elbo_nats,status\n";
    for (const auto& p : points)
        out << p.channel << ',' << format_g17(p.beta) << ',' << p.seed << ','
            << format_g17(p.rate) << ',' << format_g17(p.distortion) << ','
            << format_g17(p.neg_elbo) << ',' << p.status << '\n';
    if (!out) throw std::runtime_error("short write to '" + path + "'");
}

inline std::vector<RDPoint> read_rd_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) ||
        line != "channel,beta,seed,rate_nats,distortion_nats,neg_elbo_nats,status")
        throw std::runtime_error("'" + path + "': not an rd-sweep CSV (bad header)");
    std::vector<RDPoint> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 7)
            throw std::runtime_error("'" + path + "': bad row '" + line + "'");
        RDPoint p;
        p.channel = fields[0];
        p.beta = std::stod(fields[1]);
        p.seed = std::stoull(fields[2]);
        p.rate = std::stod(fields[3]);
        p.distortion = std::stod(fields[4]);
        p.neg_elbo = std::stod(fields[5]);
        p.status = fields[6];
        points.push_back(std::move(p));
    }
    return points;
}

inline int rd_worker_count(int n_cells) {
    int workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    if (const char* env = std::getenv("ECHO_RD_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) workers = std::min(workers, cap);
    }
    return std::min(workers, std::max(1, n_cells));
}

// One training run per (beta, seed) cell. Cells run on a small worker pool
// (capped by ECHO_RD_THREADS); each cell is single-threaded and seeded by its
// own (beta, seed) alone, so results do not depend on scheduling. A cell that
// throws is marked failed and the sweep keeps going.
template <class T = float>
std::vector<RDPoint> rd_sweep(const AutoencoderSpec& spec, const Dataset& dataset,
                              const std::vector<double>& betas,
                              const std::vector<std::uint64_t>& seeds, const TrainConfig& base,
                              const std::string& csv_path = "") {
    if (betas.empty()) throw std::invalid_argument("rd_sweep: betas must be non-empty");
    if (seeds.empty()) throw std::invalid_argument("rd_sweep: seeds must be non-empty");
    struct Cell {
        double beta;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (double b : betas)
        for (std::uint64_t s : seeds) cells.push_back({b, s});

    std::vector<RDPoint> points(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            RDPoint& p = points[i];
            p.channel = to_string(spec.channel);
            p.beta = cells[i].beta;
            p.seed = cells[i].seed;
            try {
                TrainConfig cfg = base;
                cfg.beta = cells[i].beta;
                cfg.seed = cells[i].seed;
                const TrainResult run = train<T>(spec, dataset, cfg);
                auto [rate, dist] = evaluate_checkpoint<T>(run.checkpoint, dataset,
                                                           cfg.batch_size);
                p.rate = rate;
                p.distortion = dist;
                p.neg_elbo = rate + dist;
                p.status = run.aborted ? "aborted" : "ok";
            } catch (const std::exception&) {
                p.rate = p.distortion = p.neg_elbo = std::nan("");
                p.status = "failed";
            }
        }
    };
    const int n_workers = rd_worker_count(static_cast<int>(cells.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::sort(points.begin(), points.end(), [](const RDPoint& a, const RDPoint& b) {
        return std::tie(a.channel, a.beta, a.seed) < std::tie(b.channel, b.beta, b.seed);
    });
    if (!csv_path.empty()) write_rd_csv(csv_path, points);
    return points;
}

// Per-dimension noise marginals (mean/var/normality), total correlation of
// the noise, and a pointwise rate-vs-distortion table sorted by distortion.
// Marginal samples come straight from the noise: for echo they are marginal
// channel samples by the fixed-point property.
inline nlohmann::json diagnose(const Checkpoint& ck, const Dataset& dataset, int n_samples,
                               std::uint64_t seed) {
    if (dataset.train.cols != ck.spec.d_x)
        throw std::invalid_argument("diagnose: dataset width " +
                                    std::to_string(dataset.train.cols) + " != d_x " +
                                    std::to_string(ck.spec.d_x));
    if (n_samples < 32) throw std::invalid_argument("diagnose: n_samples must be >= 32");
    const int B = std::min(100, dataset.train.rows);
    if (B < 2) throw std::invalid_argument("diagnose: need at least 2 rows");
    AutoencoderSpec spec = ck.spec;
    if (spec.channel == ChannelKind::echo && !spec.echo_cfg.with_replacement &&
        spec.echo_cfg.d_max > B - 1) {
        spec.echo_cfg.d_max = B - 1;  // keep the plan feasible on small datasets
        spec.echo_cfg.r = solve_clip(spec.echo_cfg.M, spec.echo_cfg.d_max, spec.echo_cfg.tol);
    }

    Autoencoder<double> runner(spec);
    for (const auto& [name, mat] : ck.params) runner.store.at(name)->value = mat;

    const int d_z = spec.d_z;
    MatrixD eps(n_samples, d_z);
    struct Row {
        double rate, f_norm, distortion;
    };
    std::vector<Row> rows;
    rows.reserve(static_cast<std::size_t>(n_samples));

    int filled = 0, batch_idx = 0;
    while (filled < n_samples) {
        Matrix<double> batch(B, dataset.train.cols);
        for (int i = 0; i < B; ++i) {
            const int src = (batch_idx * B + i) % dataset.train.rows;
            std::copy(dataset.train.row(src), dataset.train.row(src) + dataset.train.cols,
                      batch.row(i));
        }
        auto g = runner.objective(batch, 1.0, derive_seed(seed, 0xd1a6 + batch_idx));
        const MatrixD& noise =
            spec.channel == ChannelKind::echo ? g.epsilon->value : g.z->value;
        for (int i = 0; i < B && filled < n_samples; ++i, ++filled) {
            std::copy(noise.row(i), noise.row(i) + d_z, eps.row(filled));
            double fn = 0.0;
            for (int j = 0; j < d_z; ++j) fn += g.loc->value(i, j) * g.loc->value(i, j);
            rows.push_back({g.pointwise_rate->value(i, 0), std::sqrt(fn),
                            g.pointwise_distortion->value(i, 0)});
        }
        ++batch_idx;
    }

    nlohmann::json marginals = nlohmann::json::array();
    for (int j = 0; j < d_z; ++j) {
        MatrixD col(n_samples, 1);
        for (int i = 0; i < n_samples; ++i) col(i, 0) = eps(i, j);
        double mean = 0.0;
        for (double v : col.data) mean += v;
        mean /= n_samples;
        double var = 0.0;
        for (double v : col.data) var += (v - mean) * (v - mean);
        var /= (n_samples - 1);
        nlohmann::json m{{"dim", j}, {"mean", mean}, {"var", var}};
        try {
            m["ad_p"] = anderson_darling({col, "eps[" + std::to_string(j) + "]"}, 200,
                                         derive_seed(seed, 0xad00 + j))
                            .p_value;
        } catch (const std::exception& e) {
            m["ad_p"] = nullptr;
            m["ad_error"] = e.what();
        }
        marginals.push_back(std::move(m));
    }

    nlohmann::json tc;
    try {
        tc["standard"] = gaussian_tc({eps, "noise"}, false);
        tc["paper_convention"] = gaussian_tc({eps, "noise"}, true);
    } catch (const std::exception& e) {
        tc["error"] = e.what();
    }

    std::sort(rows.begin(), rows.end(),
              [](const Row& a, const Row& b) { return a.distortion < b.distortion; });
    nlohmann::json pointwise = nlohmann::json::array();
    for (const auto& r : rows)
        pointwise.push_back({{"rate", r.rate}, {"f_norm", r.f_norm}, {"distortion", r.distortion}});

    return nlohmann::json{{"marginals", std::move(marginals)},
                          {"tc", std::move(tc)},
                          {"pointwise", std::move(pointwise)},
                          {"config", {{"spec", to_json(ck.spec)},
                                      {"step", ck.step},
                                      {"seed", ck.seed},
                                      {"n_samples", n_samples}}}};
}

}  // namespace echo

#endif
