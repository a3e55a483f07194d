// LSTM cell/sequence encoders and the tanh-perceptron attention pooling
// reused at the word, phrase, and sentence levels.
#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emhrnn/graph.hpp"
#include "emhrnn/tensor.hpp"

namespace emhrnn {

// i_t = sigmoid(W_i h + U_i x + b_i), and likewise f, c~, o.
struct LstmParams {
    Param w_i, w_f, w_c, w_o;  // hidden-to-gate, d_h x d_h
    Param u_i, u_f, u_c, u_o;  // input-to-gate,  d_h x d_in
    Param b_i, b_f, b_c, b_o;  // d_h

    LstmParams() = default;
    LstmParams(std::size_t d_in, std::size_t d_h) { resize(d_in, d_h); }

    void resize(std::size_t d_in, std::size_t d_h) {
        for (Param* w : {&w_i, &w_f, &w_c, &w_o}) *w = Param(Shape::mat(d_h, d_h));
        for (Param* u : {&u_i, &u_f, &u_c, &u_o}) *u = Param(Shape::mat(d_h, d_in));
        for (Param* b : {&b_i, &b_f, &b_c, &b_o}) *b = Param(Shape::vec(d_h));
    }

    std::size_t d_in() const { return u_i.shape().cols(); }
    std::size_t d_h() const { return w_i.shape().rows(); }

    void init(Rng& rng) {
        for (Param* w : {&w_i, &w_f, &w_c, &w_o}) w->init_uniform(rng, d_h());
        for (Param* u : {&u_i, &u_f, &u_c, &u_o}) u->init_uniform(rng, d_in());
        // biases stay zero
    }

    std::vector<std::pair<std::string, Param*>> named(const std::string& prefix) {
        return {{prefix + ".w_i", &w_i}, {prefix + ".w_f", &w_f}, {prefix + ".w_c", &w_c},
                {prefix + ".w_o", &w_o}, {prefix + ".u_i", &u_i}, {prefix + ".u_f", &u_f},
                {prefix + ".u_c", &u_c}, {prefix + ".u_o", &u_o}, {prefix + ".b_i", &b_i},
                {prefix + ".b_f", &b_f}, {prefix + ".b_c", &b_c}, {prefix + ".b_o", &b_o}};
    }
};

// One tanh SLP plus a learned context vector.
struct AttentionParams {
    Param w;  // d_a x d_h
    Param b;  // d_a
    Param u;  // d_a, context vector

    AttentionParams() = default;
    AttentionParams(std::size_t d_h, std::size_t d_a)
        : w(Shape::mat(d_a, d_h)), b(Shape::vec(d_a)), u(Shape::vec(d_a)) {}

    std::size_t d_h() const { return w.shape().cols(); }
    std::size_t d_a() const { return w.shape().rows(); }

    void init(Rng& rng) {
        w.init_uniform(rng, d_h());
        u.init_uniform(rng, d_a());
    }

    std::vector<std::pair<std::string, Param*>> named(const std::string& prefix) {
        return {{prefix + ".w", &w}, {prefix + ".b", &b}, {prefix + ".u", &u}};
    }
};

struct LstmStateVar {
    Var h, c;
};

inline LstmStateVar lstm_zero_state(Graph& g, std::size_t d_h) {
    Var z = g.zeros(Shape::vec(d_h));
    return {z, z};
}

inline LstmStateVar lstm_cell_step(Graph& g, const LstmParams& p, LstmStateVar prev, Var x) {
    Var hc = g.lstm_step(prev.h, prev.c, x, g.param(p.w_i), g.param(p.w_f),
                         g.param(p.w_c), g.param(p.w_o), g.param(p.u_i), g.param(p.u_f),
                         g.param(p.u_c), g.param(p.u_o), g.param(p.b_i), g.param(p.b_f),
                         g.param(p.b_c), g.param(p.b_o));
    const std::size_t dh = p.d_h();
    return {g.slice(hc, 0, dh), g.slice(hc, dh, dh)};
}

inline std::vector<LstmStateVar> lstm_encode(Graph& g, const LstmParams& p,
                                             std::span<const Var> inputs,
                                             LstmStateVar init) {
    if (inputs.empty()) throw std::invalid_argument("lstm_encode: empty input sequence");
    std::vector<LstmStateVar> states;
    states.reserve(inputs.size());
    LstmStateVar s = init;
    for (Var x : inputs) {
        s = lstm_cell_step(g, p, s, x);
        states.push_back(s);
    }
    return states;
}

inline std::vector<LstmStateVar> lstm_encode(Graph& g, const LstmParams& p,
                                             std::span<const Var> inputs) {
    return lstm_encode(g, p, inputs, lstm_zero_state(g, p.d_h()));
}

// output[t] = [forward state at t, backward state at t], length 2*d_h; the
// backward pass consumes the reversed sequence
inline std::vector<Var> bilstm_encode(Graph& g, const LstmParams& fwd, const LstmParams& bwd,
                                      std::span<const Var> inputs) {
    if (inputs.empty()) throw std::invalid_argument("bilstm_encode: empty input sequence");
    const std::size_t n = inputs.size();
    std::vector<Var> reversed(inputs.rbegin(), inputs.rend());
    auto fstates = lstm_encode(g, fwd, inputs);
    auto bstates = lstm_encode(g, bwd, reversed);
    std::vector<Var> out;
    out.reserve(n);
    for (std::size_t t = 0; t < n; ++t)
        out.push_back(g.concat(fstates[t].h, bstates[n - 1 - t].h));
    return out;
}

struct AttentionResult {
    Var pooled;
    Var weights;
};

// u_t = tanh(W s_t + b); weights = softmax over u_t . u; pooled = sum_t w_t s_t
inline AttentionResult attention_pool(Graph& g, const AttentionParams& p,
                                      std::span<const Var> states) {
    if (states.empty()) throw std::invalid_argument("attention_pool: empty state sequence");
    Var w = g.param(p.w);
    Var b = g.param(p.b);
    Var u = g.param(p.u);
    std::vector<Var> scores;
    scores.reserve(states.size());
    for (Var s : states) scores.push_back(g.dot(g.tanh(g.affine(w, s, b)), u));
    Var weights = g.softmax(g.stack_scalars(scores));
    Var pooled = g.weighted_sum(weights, states);
    return {pooled, weights};
}

inline Var classify(Graph& g, const Param& w_c, const Param& b_c, Var v) {
    return g.softmax(g.affine(g.param(w_c), v, g.param(b_c)));
}

inline Var nll_loss(Graph& g, Var probs, int label) { return g.pick_nll(probs, label); }

}  // namespace emhrnn
