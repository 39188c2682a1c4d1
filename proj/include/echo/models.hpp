#ifndef ECHO_MODELS_HPP
#define ECHO_MODELS_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "echo/autodiff.hpp"
#include "echo/echo_channel.hpp"
#include "echo/gaussian_channel.hpp"
#include "echo/matrix.hpp"
#include "echo/optimizer.hpp"
#include "echo/rng.hpp"

// Dense autoencoder around either channel. Encoder activations keep the echo
// preconditions true by construction: f = M tanh(pre/16) stays inside
// [-M, M], and log_s = log r + logsigmoid(pre) keeps 0 < s <= r without any
// clipping after the fact.

namespace echo {

enum class ChannelKind { echo, gaussian };
enum class DistortionKind { bernoulli, gaussian };

struct AutoencoderSpec {
    int d_x = 2;
    int d_z = 2;
    std::vector<int> hidden = {128, 64};
    ChannelKind channel = ChannelKind::echo;
    DistortionKind distortion = DistortionKind::gaussian;
    EchoConfig echo_cfg = make_echo_config();
};

inline void validate_spec(const AutoencoderSpec& spec) {
    if (spec.d_x < 1 || spec.d_z < 1)
        throw std::invalid_argument("AutoencoderSpec: d_x and d_z must be >= 1");
    if (spec.hidden.empty())
        throw std::invalid_argument("AutoencoderSpec: hidden layer list must be non-empty");
    for (int h : spec.hidden)
        if (h < 1) throw std::invalid_argument("AutoencoderSpec: hidden widths must be >= 1");
    if (spec.channel == ChannelKind::echo) validate_echo_config(spec.echo_cfg);
}

inline const char* to_string(ChannelKind c) {
    return c == ChannelKind::echo ? "echo" : "gaussian";
}
inline const char* to_string(DistortionKind d) {
    return d == DistortionKind::bernoulli ? "bernoulli" : "gaussian";
}

inline ChannelKind channel_from_string(const std::string& s) {
    if (s == "echo") return ChannelKind::echo;
    if (s == "gaussian") return ChannelKind::gaussian;
    throw std::invalid_argument("unknown channel '" + s + "'");
}
inline DistortionKind distortion_from_string(const std::string& s) {
    if (s == "bernoulli") return DistortionKind::bernoulli;
    if (s == "gaussian") return DistortionKind::gaussian;
    throw std::invalid_argument("unknown distortion '" + s + "'");
}

inline nlohmann::json to_json(const AutoencoderSpec& spec) {
    nlohmann::json j{{"d_x", spec.d_x},
                     {"d_z", spec.d_z},
                     {"hidden", spec.hidden},
                     {"channel", to_string(spec.channel)},
                     {"distortion", to_string(spec.distortion)}};
    if (spec.channel == ChannelKind::echo) j["echo_cfg"] = to_json(spec.echo_cfg);
    return j;
}

inline AutoencoderSpec spec_from_json(const nlohmann::json& j) {
    static const char* known[] = {"d_x", "d_z", "hidden", "channel", "distortion", "echo_cfg"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok)
            throw std::invalid_argument("AutoencoderSpec: unknown field '" + it.key() + "'");
    }
    AutoencoderSpec spec;
    spec.d_x = j.value("d_x", spec.d_x);
    spec.d_z = j.value("d_z", spec.d_z);
    spec.hidden = j.value("hidden", spec.hidden);
    spec.channel = channel_from_string(j.value("channel", std::string(to_string(spec.channel))));
    spec.distortion =
        distortion_from_string(j.value("distortion", std::string(to_string(spec.distortion))));
    if (j.contains("echo_cfg")) spec.echo_cfg = echo_config_from_json(j.at("echo_cfg"));
    validate_spec(spec);
    return spec;
}

// ---- distortions ----

template <class T>
void check_binary(const Matrix<T>& x) {
    for (T v : x.data) {
        const double d = static_cast<double>(v);
        if (!(std::abs(d) <= 1e-6 || std::abs(d - 1.0) <= 1e-6))
            throw std::domain_error("bernoulli_distortion: inputs must be in {0,1}, got " +
                                    std::to_string(d));
    }
}

// -log p(x|logits) = sum_pixels [softplus(logit) - x * logit], nats/example.
template <class T>
std::pair<double, std::vector<double>> bernoulli_distortion(const Matrix<T>& x,
                                                            const Matrix<T>& logits) {
    check_same_shape(x, logits, "bernoulli_distortion");
    check_binary(x);
    std::vector<double> pointwise(static_cast<std::size_t>(x.rows));
    double total = 0.0;
    for (int i = 0; i < x.rows; ++i) {
        const T* xr = x.row(i);
        const T* lr = logits.row(i);
        double acc = 0.0;
        for (int j = 0; j < x.cols; ++j)
            acc += static_cast<double>(stable_softplus(lr[j])) -
                   static_cast<double>(xr[j]) * static_cast<double>(lr[j]);
        pointwise[static_cast<std::size_t>(i)] = acc;
        total += acc;
    }
    return {total / x.rows, pointwise};
}

// 1/2 ||x - mean||^2 + (d_x/2) log 2 pi, i.e. -log N(x; mean, I).
template <class T>
std::pair<double, std::vector<double>> gaussian_distortion(const Matrix<T>& x,
                                                           const Matrix<T>& mean) {
    check_same_shape(x, mean, "gaussian_distortion");
    const double norm = 0.5 * x.cols * std::log(2.0 * std::numbers::pi);
    std::vector<double> pointwise(static_cast<std::size_t>(x.rows));
    double total = 0.0;
    for (int i = 0; i < x.rows; ++i) {
        const T* xr = x.row(i);
        const T* mr = mean.row(i);
        double acc = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            const double d = static_cast<double>(xr[j]) - static_cast<double>(mr[j]);
            acc += d * d;
        }
        pointwise[static_cast<std::size_t>(i)] = 0.5 * acc + norm;
        total += pointwise[static_cast<std::size_t>(i)];
    }
    return {total / x.rows, pointwise};
}

struct Objective {
    double beta = 0.0;
    double rate = 0.0;
    double distortion = 0.0;
    double loss = 0.0;
    double neg_elbo() const { return rate + distortion; }
};

template <class T>
struct ObjectiveGraph {
    ad::Var<T> loss;                  // 1x1
    ad::Var<T> rate;                  // 1x1
    ad::Var<T> distortion;            // 1x1
    ad::Var<T> pointwise_rate;        // Bx1
    ad::Var<T> pointwise_distortion;  // Bx1
    ad::Var<T> loc;                   // encoder f (echo) or mu (gaussian)
    ad::Var<T> log_scale;
    ad::Var<T> z;
    ad::Var<T> epsilon;  // null for the gaussian channel
    Objective values(double beta) const {
        return {beta, static_cast<double>(rate->value.data[0]),
                static_cast<double>(distortion->value.data[0]),
                static_cast<double>(loss->value.data[0])};
    }
};

template <class T>
struct EncoderGraph {
    ad::Var<T> loc;       // f (echo) or mu (gaussian)
    ad::Var<T> log_scale; // log_s or log_sigma
};

template <class T>
class Autoencoder {
public:
    AutoencoderSpec spec;
    ParameterStore<T> store;

    explicit Autoencoder(AutoencoderSpec s, std::uint64_t init_seed = 0) : spec(std::move(s)) {
        validate_spec(spec);
        int in = spec.d_x;
        for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
            add_layer("enc." + std::to_string(l), in, spec.hidden[l], init_seed);
            in = spec.hidden[l];
        }
        add_layer("enc.loc", in, spec.d_z, init_seed);
        add_layer("enc.scale", in, spec.d_z, init_seed);
        in = spec.d_z;
        for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
            const int width = spec.hidden[spec.hidden.size() - 1 - l];
            add_layer("dec." + std::to_string(l), in, width, init_seed);
            in = width;
        }
        add_layer("dec.out", in, spec.d_x, init_seed);
    }

    EncoderGraph<T> encode(const ad::Var<T>& x) const {
        ad::Var<T> h = x;
        for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
            h = ad::tanh_(affine(h, "enc." + std::to_string(l)));
            check_finite(h, "enc", static_cast<int>(l));
        }
        EncoderGraph<T> out;
        if (spec.channel == ChannelKind::echo) {
            // f = M tanh(pre/16); log_s = log r + logsigmoid(pre)
            out.loc = ad::mul_scalar(ad::tanh_(ad::mul_scalar(affine(h, "enc.loc"), 1.0 / 16.0)),
                                     spec.echo_cfg.M);
            out.log_scale = ad::add_scalar(ad::logsigmoid_(affine(h, "enc.scale")),
                                           std::log(spec.echo_cfg.r));
        } else {
            out.loc = affine(h, "enc.loc");
            out.log_scale = affine(h, "enc.scale");
        }
        check_finite(out.loc, "enc.loc", -1);
        check_finite(out.log_scale, "enc.scale", -1);
        return out;
    }

    // Logits for bernoulli, mean for gaussian; identity final activation.
    ad::Var<T> decode(const ad::Var<T>& z) const {
        ad::Var<T> h = z;
        for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
            h = ad::tanh_(affine(h, "dec." + std::to_string(l)));
            check_finite(h, "dec", static_cast<int>(l));
        }
        auto out = affine(h, "dec.out");
        check_finite(out, "dec.out", -1);
        return out;
    }

    // encode -> channel -> decode -> distortion; loss = distortion + beta*rate.
    ObjectiveGraph<T> objective(const Matrix<T>& batch, double beta, std::uint64_t seed) const {
        if (batch.cols != spec.d_x)
            throw std::invalid_argument("objective: batch has " + std::to_string(batch.cols) +
                                        " columns, spec.d_x=" + std::to_string(spec.d_x));
        if (beta < 0.0) throw std::invalid_argument("objective: beta must be >= 0");
        auto xc = ad::constant(batch);
        auto enc = encode(xc);

        ObjectiveGraph<T> g;
        g.loc = enc.loc;
        g.log_scale = enc.log_scale;
        if (spec.channel == ChannelKind::echo) {
            if (batch.rows < 2)
                throw std::invalid_argument("objective: echo channel needs batch size >= 2");
            Rng rng(seed);
            const auto plan = echo_sequence_plan(batch.rows, spec.echo_cfg, rng);
            g.epsilon = echo_noise_graph(enc.loc, enc.log_scale, spec.echo_cfg, plan);
            g.z = apply_channel_graph(enc.loc, enc.log_scale, g.epsilon);
            auto rate = echo_rate_graph(enc.log_scale);
            g.rate = rate.rate;
            g.pointwise_rate = rate.pointwise;
        } else {
            g.z = gaussian_sample_graph(enc.loc, enc.log_scale, seed);
            auto rate = gaussian_kl_rate_graph(enc.loc, enc.log_scale);
            g.rate = rate.rate;
            g.pointwise_rate = rate.pointwise;
        }

        auto out = decode(g.z);
        if (spec.distortion == DistortionKind::bernoulli) {
            check_binary(batch);
            g.pointwise_distortion =
                ad::row_sum(ad::sub(ad::softplus_(out), ad::mul(xc, out)));
        } else {
            auto diff = ad::sub(out, xc);
            g.pointwise_distortion =
                ad::add_scalar(ad::mul_scalar(ad::row_sum(ad::mul(diff, diff)), 0.5),
                               0.5 * spec.d_x * std::log(2.0 * std::numbers::pi));
        }
        g.distortion = ad::mean_all(g.pointwise_distortion);
        g.loss = ad::add(g.distortion, ad::mul_scalar(g.rate, beta));
        return g;
    }

private:
    void add_layer(const std::string& name, int in, int out, std::uint64_t seed) {
        // Xavier-uniform weights, zero biases; seed salted by the layer name
        // so streams stay decorrelated and independent of creation order.
        Rng rng(derive_seed(seed, std::hash<std::string>{}(name)));
        const double limit = std::sqrt(6.0 / (in + out));
        store.create(name + ".w", rng.uniform_matrix<T>(in, out, -limit, limit));
        store.create(name + ".b", Matrix<T>(1, out));
    }

    ad::Var<T> affine(const ad::Var<T>& x, const std::string& name) const {
        return ad::add_rowvec(ad::matmul_(x, store.at(name + ".w")), store.at(name + ".b"));
    }

    static void check_finite(const ad::Var<T>& v, const char* stage, int layer) {
        if (v->value.all_finite()) return;
        std::string where = layer >= 0 ? std::string(stage) + "[" + std::to_string(layer) + "]"
                                       : std::string(stage);
        throw std::runtime_error("non-finite activation at layer " + where);
    }
};

// ---- checkpoints ----

struct Checkpoint {
    AutoencoderSpec spec;
    long step = 0;
    std::uint64_t seed = 0;
    std::map<std::string, MatrixD> params;  // name order fixes the blob layout
};

template <class T>
Checkpoint make_checkpoint(const Autoencoder<T>& model, long step, std::uint64_t seed) {
    Checkpoint ck;
    ck.spec = model.spec;
    ck.step = step;
    ck.seed = seed;
    for (const auto& [name, v] : model.store.params())
        ck.params.emplace(name, v->value.template cast<double>());
    return ck;
}

template <class T>
void load_checkpoint_params(Autoencoder<T>& model, const Checkpoint& ck) {
    if (ck.params.size() != model.store.count())
        throw std::invalid_argument("checkpoint: parameter set does not match model");
    for (const auto& [name, m] : ck.params) {
        auto v = model.store.at(name);
        auto cast = m.template cast<T>();
        check_same_shape(v->value, cast, "load_checkpoint_params");
        v->value = std::move(cast);
    }
}

// One-line JSON header, then a flat little-endian float64 blob in sorted
// parameter-name order.
inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    nlohmann::json shapes = nlohmann::json::object();
    for (const auto& [name, m] : ck.params) shapes[name] = {m.rows, m.cols};
    nlohmann::json header{{"spec", to_json(ck.spec)},
                          {"step", ck.step},
                          {"seed", ck.seed},
                          {"params", shapes}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << header.dump() << "\n";
    for (const auto& [name, m] : ck.params)
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write to '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint '" + path + "': no header");
    const auto header = nlohmann::json::parse(line);
    Checkpoint ck;
    ck.spec = spec_from_json(header.at("spec"));
    ck.step = header.at("step").get<long>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    for (auto it = header.at("params").begin(); it != header.at("params").end(); ++it) {
        const int rows = it.value().at(0).get<int>();
        const int cols = it.value().at(1).get<int>();
        MatrixD m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size() * sizeof(double)));
        if (!in)
            throw std::runtime_error("checkpoint '" + path + "': blob truncated at '" +
                                     it.key() + "'");
        ck.params.emplace(it.key(), std::move(m));
    }
    return ck;
}

}  // namespace echo

#endif
