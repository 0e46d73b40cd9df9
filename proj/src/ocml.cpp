#include "fsos/ocml.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fsos/error.hpp"
#include "fsos/metabce.hpp"

namespace fsos {

std::size_t TransferArchitecture::scaled_middle(std::size_t embed_dim, std::size_t reference_middle) {
    const std::size_t m = (reference_middle * embed_dim + 800) / 1600;
    return std::max<std::size_t>(m, 1);
}

std::vector<TransferArchitecture> TransferArchitecture::reference_menu(std::size_t embed_dim) {
    return {one_layer(embed_dim), two_layers(embed_dim, scaled_middle(embed_dim, 100)),
            two_layers(embed_dim, scaled_middle(embed_dim, 500)), two_layers(embed_dim, scaled_middle(embed_dim, 1000))};
}

std::string TransferArchitecture::describe() const {
    if (layers() == 1) return "1 layer";
    std::ostringstream os;
    os << layers() << " layers, middle dim";
    for (std::size_t i = 1; i + 1 < dims.size(); ++i) os << (i > 1 ? "," : " ") << dims[i];
    return os.str();
}

std::string TransferArchitecture::key() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "-" : "") << dims[i];
    return os.str();
}

TransferArchitecture TransferArchitecture::parse(const std::string& key) {
    TransferArchitecture a;
    std::istringstream in(key);
    std::string part;
    while (std::getline(in, part, '-')) {
        try {
            std::size_t used = 0;
            const auto v = std::stoul(part, &used);
            if (used != part.size()) throw std::invalid_argument(part);
            a.dims.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("transfer module: bad layer width '" + part + "' in '" + key + "'");
        }
    }
    if (a.dims.size() < 2) throw ConfigError("transfer module: '" + key + "' needs at least input and output widths");
    return a;
}

void TransferArchitecture::validate(std::size_t embed_dim) const {
    if (dims.size() < 2) throw ConfigError("transfer module: needs at least one layer");
    if (dims.front() != embed_dim || dims.back() != embed_dim) {
        throw ConfigError("transfer module: " + key() + " must map " + std::to_string(embed_dim) + " to " + std::to_string(embed_dim));
    }
    for (auto d : dims) {
        if (d == 0) throw ConfigError("transfer module: zero-width layer in " + key());
    }
}

std::vector<Tensor*> TransferModule::parameters() {
    std::vector<Tensor*> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(&weights[i]);
        if (i < biases.size()) out.push_back(&biases[i]);
    }
    return out;
}

TransferModule init_transfer(const TransferArchitecture& arch, std::uint64_t seed) {
    arch.validate(arch.dims.front());
    std::mt19937_64 rng(seed);
    TransferModule g;
    g.arch = arch;
    if (arch.layers() == 1) {
        g.weights.push_back(Tensor::identity(arch.dims[0]));
        return g;
    }
    for (std::size_t i = 0; i + 1 < arch.dims.size(); ++i) {
        const std::size_t in = arch.dims[i], out = arch.dims[i + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor w = Tensor::zeros({in, out});
        for (auto& v : w.values()) v = dist(rng);
        g.weights.push_back(std::move(w));
        if (i + 2 < arch.dims.size()) {
            Tensor b = Tensor::zeros({out});
            for (auto& v : b.values()) v = dist(rng);
            g.biases.push_back(std::move(b));
        }
    }
    return g;
}

namespace {

template <class Module, class Register>
Var run_transfer(Tape& tape, Module& g, Var x, Register&& reg) {
    const auto& s = tape.shape(x);
    if (s.size() != 2 || s[1] != g.arch.dims.front()) {
        throw ShapeError("transfer module: prototypes " + shape_string(s) + " do not match input width " +
                         std::to_string(g.arch.dims.front()));
    }
    if (g.weights.size() != g.arch.layers() || g.biases.size() + 1 != g.weights.size()) {
        throw ConfigError("transfer module: parameters do not match architecture " + g.arch.key());
    }
    Var h = x;
    for (std::size_t i = 0; i < g.weights.size(); ++i) {
        const bool last = i + 1 == g.weights.size();
        Var b = last ? tape.constant(Tensor::zeros({g.arch.dims[i + 1]})) : reg(g.biases[i]);
        h = tape.affine(h, reg(g.weights[i]), b);
        if (!last) h = tape.relu(h);
    }
    return h;
}

}  // namespace

Var generate_weights(Tape& tape, TransferModule& g, Var prototypes, bool trainable) {
    return run_transfer(tape, g, prototypes, [&](Tensor& t) {
        if (!trainable) return tape.constant(t);
        t.set_requires_grad(true);
        return tape.param(t);
    });
}

Var generate_weights(Tape& tape, const TransferModule& g, Var prototypes) {
    return run_transfer(tape, g, prototypes, [&](const Tensor& t) { return tape.constant(t); });
}

Tensor generate_weights(const TransferModule& g, const Tensor& prototypes) {
    Tape tape;
    return tape.tensor(generate_weights(tape, g, tape.constant(prototypes)));
}

std::vector<double> generate_weight(const TransferModule& g, std::span<const double> prototype) {
    Tensor p({1, prototype.size()}, std::vector<double>(prototype.begin(), prototype.end()));
    return generate_weights(g, p).data();
}

double ocml_prob_known(std::span<const double> weight, std::span<const double> query) {
    if (weight.size() != query.size()) {
        throw ShapeError("ocml_prob_known: weight dim " + std::to_string(weight.size()) + " vs query dim " + std::to_string(query.size()));
    }
    double z = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) z += weight[i] * query[i];
    // sigma(z) == mbce_prob_known(-z, 0)
    return mbce_prob_known(-z, 0.0);
}

std::vector<double> ocml_class_probs(const Tensor& weights, std::span<const double> query) {
    if (weights.rank() != 2 || weights.dim(0) == 0) throw ShapeError("ocml: weights must be [n, D] with n >= 1");
    const std::size_t n = weights.dim(0), d = weights.dim(1);
    std::vector<double> p(n);
    for (std::size_t c = 0; c < n; ++c) p[c] = ocml_prob_known(weights.values().subspan(c * d, d), query);
    return p;
}

double ocml_prob_unknown(const TransferModule& g, const Tensor& prototypes, std::span<const double> query) {
    if (prototypes.rank() != 2 || prototypes.dim(0) == 0) throw ShapeError("ocml_prob_unknown: empty prototype list");
    return prob_unknown(ocml_class_probs(generate_weights(g, prototypes), query));
}

Var ocml_episode_loss(Tape& tape, Var weights, Var queries, std::size_t n, std::size_t q) {
    if (n == 0) throw ConfigError("ocml loss: episode has no classes");
    if (q == 0) throw ConfigError("ocml loss: empty query set");
    const auto& ws = tape.shape(weights);
    const auto& qs = tape.shape(queries);
    if (ws.size() != 2 || ws[0] != n) throw ShapeError("ocml loss: weights " + shape_string(ws) + " are not [" + std::to_string(n) + ", D]");
    if (qs.size() != 2 || qs[0] != n * q) {
        throw ShapeError("ocml loss: queries " + shape_string(qs) + " are not [" + std::to_string(n * q) + ", D]");
    }
    return tape.bce(tape.dot(queries, weights), tape.constant(episode_targets(n, q)));
}

}  // namespace fsos
