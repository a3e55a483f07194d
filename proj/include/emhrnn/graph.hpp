// Reverse-mode automatic differentiation over dense double tensors.
//
// Define-by-run: every op computes its value eagerly and appends one node to
// the tape; backward() replays the tape in reverse append order, so gradient
// accumulation order is fixed and two identical passes produce bit-identical
// gradients. The tape is cleared and rebuilt per forward pass; value and
// gradient storage live in one arena that keeps its capacity across clears.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "emhrnn/tensor.hpp"

namespace emhrnn {

class Graph;

// Handle to a node on a specific tape generation.
struct Var {
    const Graph* owner = nullptr;
    std::int32_t i = -1;
    std::uint32_t gen = 0;
};

class Graph {
public:
    // recording = false skips gradient storage; such a graph evaluates
    // forward values only and rejects backward()
    explicit Graph(bool recording = true) : recording_(recording) {
        nodes_.reserve(4096);
        buf_.reserve(1 << 16);
    }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return recording_; }

    // ---- leaves ----

    Var constant(const Tensor& t) { return leaf(t.shape, t.v.data(), nullptr); }
    Var constant(Shape s, const double* data) { return leaf(s, data, nullptr); }
    Var scalar_const(double x) { return leaf(Shape::scalar(), &x, nullptr); }
    Var zeros(Shape s) {
        Var v = make(s, nullptr);
        // arena is not zero-initialized for the value half
        double* y = val(v.i);
        std::fill(y, y + s.size(), 0.0);
        return v;
    }

    // Tracked leaf; backward adds into p.grad. Memoized so each Param binds
    // to one node per pass.
    Var param(const Param& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return Var{this, it->second, gen_};
        Var v = leaf(p.shape(), p.value.v.data(), &p);
        bound_.emplace(&p, v.i);
        return v;
    }

    // ---- ops ----

    // W{m,n} * x{n} + b{m}
    Var affine(Var W, Var x, Var b) {
        check(W, "affine");
        check(x, "affine");
        check(b, "affine");
        const Shape sw = shape(W), sx = shape(x), sb = shape(b);
        if (sw.rank != 2 || sx.rank != 1 || sb.rank != 1 || sw.cols() != sx.dim[0] ||
            sw.rows() != sb.dim[0])
            throw std::invalid_argument("affine: incompatible shapes W=" + sw.str() +
                                        " x=" + sx.str() + " b=" + sb.str());
        const std::size_t m = sw.rows(), n = sw.cols();
        Var out = make(Shape::vec(m), &back_affine, W.i, x.i, b.i);
        const double* w = val(W.i);
        const double* xv = val(x.i);
        const double* bv = val(b.i);
        double* y = val(out.i);
        for (std::size_t r = 0; r < m; ++r) {
            double acc = bv[r];
            const double* row = w + r * n;
            for (std::size_t c = 0; c < n; ++c) acc += row[c] * xv[c];
            y[r] = acc;
        }
        return out;
    }

    // W{m,n} * h{n} + U{m,k} * x{k} + b{m}; one node for a whole gate
    // pre-activation
    Var affine2(Var W, Var h, Var U, Var x, Var b) {
        check(W, "affine2");
        check(h, "affine2");
        check(U, "affine2");
        check(x, "affine2");
        check(b, "affine2");
        const Shape sw = shape(W), sh = shape(h), su = shape(U), sx = shape(x),
                    sb = shape(b);
        if (sw.rank != 2 || su.rank != 2 || sw.cols() != sh.dim[0] ||
            su.cols() != sx.dim[0] || sw.rows() != su.rows() || sw.rows() != sb.dim[0])
            throw std::invalid_argument("affine2: incompatible shapes W=" + sw.str() +
                                        " h=" + sh.str() + " U=" + su.str() +
                                        " x=" + sx.str() + " b=" + sb.str());
        const std::size_t m = sw.rows(), n = sw.cols(), k = su.cols();
        const std::int32_t ia = static_cast<std::int32_t>(iaux_.size());
        iaux_.push_back(U.i);
        iaux_.push_back(x.i);
        Var out = make(Shape::vec(m), &back_affine2, W.i, h.i, b.i);
        nodes_[out.i].iaux = ia;
        const double* w = val(W.i);
        const double* hv = val(h.i);
        const double* u = val(U.i);
        const double* xv = val(x.i);
        const double* bv = val(b.i);
        double* y = val(out.i);
        for (std::size_t r = 0; r < m; ++r) {
            double acc = bv[r];
            const double* wrow = w + r * n;
            for (std::size_t c = 0; c < n; ++c) acc += wrow[c] * hv[c];
            const double* urow = u + r * k;
            for (std::size_t c = 0; c < k; ++c) acc += urow[c] * xv[c];
            y[r] = acc;
        }
        return out;
    }

    Var add(Var a, Var b) { return binary(a, b, &back_add, "add"); }
    Var hadamard(Var a, Var b) { return binary(a, b, &back_hadamard, "hadamard"); }

    Var slice(Var v, std::size_t begin, std::size_t len) {
        check(v, "slice");
        if (begin + len > size(v.i))
            throw std::invalid_argument("slice: range beyond " + shape(v).str());
        Var out = make(Shape::vec(len), &back_slice, v.i);
        nodes_[out.i].extra = static_cast<std::int32_t>(begin);
        const double* in = val(v.i);
        double* y = val(out.i);
        std::copy(in + begin, in + begin + len, y);
        return out;
    }

    // One whole LSTM cell update as a single node. Returns [h, c] stacked
    // (length 2*d_h); the gate activations are stashed for the backward pass.
    Var lstm_step(Var h_prev, Var c_prev, Var x, Var w_i, Var w_f, Var w_c, Var w_o,
                  Var u_i, Var u_f, Var u_c, Var u_o, Var b_i, Var b_f, Var b_c,
                  Var b_o) {
        const Var inputs[15] = {h_prev, c_prev, x,   w_i, w_f, w_c, w_o, u_i,
                                u_f,    u_c,    u_o, b_i, b_f, b_c, b_o};
        for (const Var& v : inputs) check(v, "lstm_step");
        const std::size_t dh = shape(h_prev).dim[0];
        const std::size_t dx = shape(x).dim[0];
        if (shape(c_prev).dim[0] != dh)
            throw std::invalid_argument("lstm_step: h/c dimension mismatch");
        for (const Var& w : {w_i, w_f, w_c, w_o})
            if (shape(w).rank != 2 || shape(w).rows() != dh || shape(w).cols() != dh)
                throw std::invalid_argument("lstm_step: W must be " +
                                            Shape::mat(dh, dh).str() + ", got " +
                                            shape(w).str());
        for (const Var& u : {u_i, u_f, u_c, u_o})
            if (shape(u).rank != 2 || shape(u).rows() != dh || shape(u).cols() != dx)
                throw std::invalid_argument("lstm_step: U must be " +
                                            Shape::mat(dh, dx).str() + ", got " +
                                            shape(u).str());
        for (const Var& b : {b_i, b_f, b_c, b_o})
            if (shape(b).dim[0] != dh)
                throw std::invalid_argument("lstm_step: bias must be length " +
                                            std::to_string(dh));

        const std::int32_t ia = static_cast<std::int32_t>(iaux_.size());
        for (const Var& v : inputs) iaux_.push_back(v.i);
        const std::int32_t da = static_cast<std::int32_t>(daux_.size());
        daux_.resize(daux_.size() + 5 * dh);  // i, f, g, o, tanh(c)

        Var out = make(Shape::vec(2 * dh), &back_lstm_step);
        nodes_[out.i].iaux = ia;
        nodes_[out.i].daux = da;

        const double* hp = val(h_prev.i);
        const double* cp = val(c_prev.i);
        const double* xv = val(x.i);
        const double* wi = val(w_i.i);
        const double* wf = val(w_f.i);
        const double* wc = val(w_c.i);
        const double* wo = val(w_o.i);
        const double* ui = val(u_i.i);
        const double* uf = val(u_f.i);
        const double* uc = val(u_c.i);
        const double* uo = val(u_o.i);
        const double* bi = val(b_i.i);
        const double* bf = val(b_f.i);
        const double* bc = val(b_c.i);
        const double* bo = val(b_o.i);
        double* y = val(out.i);
        double* saved = daux_.data() + da;
        for (std::size_t r = 0; r < dh; ++r) {
            double pi = bi[r], pf = bf[r], pc = bc[r], po = bo[r];
            const double* wir = wi + r * dh;
            const double* wfr = wf + r * dh;
            const double* wcr = wc + r * dh;
            const double* wor = wo + r * dh;
            for (std::size_t k = 0; k < dh; ++k) {
                const double h = hp[k];
                pi += wir[k] * h;
                pf += wfr[k] * h;
                pc += wcr[k] * h;
                po += wor[k] * h;
            }
            const double* uir = ui + r * dx;
            const double* ufr = uf + r * dx;
            const double* ucr = uc + r * dx;
            const double* uor = uo + r * dx;
            for (std::size_t k = 0; k < dx; ++k) {
                const double xk = xv[k];
                pi += uir[k] * xk;
                pf += ufr[k] * xk;
                pc += ucr[k] * xk;
                po += uor[k] * xk;
            }
            const double gi = 1.0 / (1.0 + std::exp(-pi));
            const double gf = 1.0 / (1.0 + std::exp(-pf));
            const double gg = std::tanh(pc);
            const double go = 1.0 / (1.0 + std::exp(-po));
            const double c = gi * gg + gf * cp[r];
            const double tc = std::tanh(c);
            saved[r] = gi;
            saved[dh + r] = gf;
            saved[2 * dh + r] = gg;
            saved[3 * dh + r] = go;
            saved[4 * dh + r] = tc;
            y[r] = go * tc;
            y[dh + r] = c;
        }
        return out;
    }

    // gathers scalar vars into one vector
    Var stack_scalars(std::span<const Var> parts) {
        if (parts.empty()) throw std::invalid_argument("stack_scalars: empty");
        const std::int32_t ia = static_cast<std::int32_t>(iaux_.size());
        iaux_.push_back(static_cast<std::int32_t>(parts.size()));
        for (const Var& p : parts) {
            check(p, "stack_scalars");
            if (size(p.i) != 1)
                throw std::invalid_argument("stack_scalars: parts must be scalars, got " +
                                            shape(p).str());
            iaux_.push_back(p.i);
        }
        Var out = make(Shape::vec(parts.size()), &back_stack);
        nodes_[out.i].iaux = ia;
        double* y = val(out.i);
        for (std::size_t t = 0; t < parts.size(); ++t) y[t] = *val(parts[t].i);
        return out;
    }

    Var sigmoid(Var x) {
        check(x, "sigmoid");
        Var out = make(shape(x), &back_sigmoid, x.i);
        const double* in = val(x.i);
        double* y = val(out.i);
        for (std::size_t k = 0; k < size(out.i); ++k) y[k] = 1.0 / (1.0 + std::exp(-in[k]));
        return out;
    }

    Var tanh(Var x) {
        check(x, "tanh");
        Var out = make(shape(x), &back_tanh, x.i);
        const double* in = val(x.i);
        double* y = val(out.i);
        for (std::size_t k = 0; k < size(out.i); ++k) y[k] = std::tanh(in[k]);
        return out;
    }

    // max-subtracted for stability
    Var softmax(Var x) {
        check(x, "softmax");
        const std::size_t n = size(x.i);
        if (n == 0) throw std::invalid_argument("softmax: empty input");
        Var out = make(shape(x), &back_softmax, x.i);
        const double* in = val(x.i);
        double* y = val(out.i);
        double mx = in[0];
        for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, in[k]);
        double total = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            y[k] = std::exp(in[k] - mx);
            total += y[k];
        }
        for (std::size_t k = 0; k < n; ++k) y[k] /= total;
        return out;
    }

    Var concat(Var a, Var b) {
        check(a, "concat");
        check(b, "concat");
        if (shape(a).rank != 1 || shape(b).rank != 1)
            throw std::invalid_argument("concat: vectors only");
        const std::size_t na = size(a.i), nb = size(b.i);
        Var out = make(Shape::vec(na + nb), &back_concat, a.i, b.i);
        const double* av = val(a.i);
        const double* bv = val(b.i);
        double* y = val(out.i);
        std::copy(av, av + na, y);
        std::copy(bv, bv + nb, y + na);
        return out;
    }

    Var dot(Var a, Var b) {
        check(a, "dot");
        check(b, "dot");
        if (shape(a) != shape(b))
            throw std::invalid_argument("dot: shape mismatch " + shape(a).str() + " vs " +
                                        shape(b).str());
        Var out = make(Shape::scalar(), &back_dot, a.i, b.i);
        const double* av = val(a.i);
        const double* bv = val(b.i);
        double acc = 0.0;
        for (std::size_t k = 0; k < size(a.i); ++k) acc += av[k] * bv[k];
        *val(out.i) = acc;
        return out;
    }

    // sum_t w[t] * items[t]
    Var weighted_sum(Var w, std::span<const Var> items) {
        check(w, "weighted_sum");
        if (items.empty()) throw std::invalid_argument("weighted_sum: no items");
        if (size(w.i) != items.size())
            throw std::invalid_argument("weighted_sum: " + std::to_string(size(w.i)) +
                                        " weights for " + std::to_string(items.size()) +
                                        " items");
        const Shape s = shape(items[0]);
        for (const Var& it : items) {
            check(it, "weighted_sum");
            if (shape(it) != s)
                throw std::invalid_argument("weighted_sum: item shape mismatch " +
                                            shape(it).str() + " vs " + s.str());
        }
        const std::int32_t ia = static_cast<std::int32_t>(iaux_.size());
        iaux_.push_back(static_cast<std::int32_t>(items.size()));
        for (const Var& it : items) iaux_.push_back(it.i);
        Var out = make(s, &back_weighted_sum, w.i);
        nodes_[out.i].iaux = ia;
        const double* wv = val(w.i);
        double* y = val(out.i);
        std::fill(y, y + s.size(), 0.0);
        for (std::size_t t = 0; t < items.size(); ++t) {
            const double* item = val(items[t].i);
            const double wt = wv[t];
            for (std::size_t k = 0; k < s.size(); ++k) y[k] += wt * item[k];
        }
        return out;
    }

    Var sum(Var x) {
        check(x, "sum");
        Var out = make(Shape::scalar(), &back_sum, x.i);
        const double* in = val(x.i);
        double acc = 0.0;
        for (std::size_t k = 0; k < size(x.i); ++k) acc += in[k];
        *val(out.i) = acc;
        return out;
    }

    Var scale(Var x, double c) {
        check(x, "scale");
        const std::int32_t da = static_cast<std::int32_t>(daux_.size());
        daux_.push_back(c);
        Var out = make(shape(x), &back_scale, x.i);
        nodes_[out.i].daux = da;
        const double* in = val(x.i);
        double* y = val(out.i);
        for (std::size_t k = 0; k < size(x.i); ++k) y[k] = c * in[k];
        return out;
    }

    // -log p[label], p clamped at 1e-300 (clamp is counted)
    Var pick_nll(Var p, int label) {
        check(p, "pick_nll");
        if (label < 0 || static_cast<std::size_t>(label) >= size(p.i))
            throw std::out_of_range("pick_nll: label " + std::to_string(label) +
                                    " out of range for " + shape(p).str());
        Var out = make(Shape::scalar(), &back_pick_nll, p.i);
        nodes_[out.i].extra = label;
        double pl = val(p.i)[label];
        if (pl < kNllFloor) {
            pl = kNllFloor;
            ++clamp_events_;
        }
        *val(out.i) = -std::log(pl);
        return out;
    }

    // sum_t m[t]*log(pi_t) + (1-m[t])*log(1-pi_t), pi clamped to
    // [1e-12, 1-1e-12] (clamps counted)
    Var bernoulli_loglik(Var pi, std::span<const double> m) {
        check(pi, "bernoulli_loglik");
        if (size(pi.i) != m.size())
            throw std::invalid_argument("bernoulli_loglik: " + std::to_string(m.size()) +
                                        " weights for " + shape(pi).str());
        const std::int32_t da = static_cast<std::int32_t>(daux_.size());
        daux_.insert(daux_.end(), m.begin(), m.end());
        Var out = make(Shape::scalar(), &back_bernoulli, pi.i);
        nodes_[out.i].daux = da;
        const double* p = val(pi.i);
        double acc = 0.0;
        for (std::size_t t = 0; t < m.size(); ++t) {
            const double pc = clamp_prob(p[t]);
            acc += m[t] * std::log(pc) + (1.0 - m[t]) * std::log(1.0 - pc);
        }
        *val(out.i) = acc;
        return out;
    }

    // ---- backward ----

    // Propagates from a fresh upstream gradient of 1; gradients accumulate
    // into Param sinks across calls.
    void backward(Var loss) {
        check(loss, "backward");
        if (!recording_)
            throw std::logic_error("backward: graph was built without gradient recording");
        if (size(loss.i) != 1) throw std::invalid_argument("backward: loss must be scalar");
        for (std::int32_t k = 0; k <= loss.i; ++k) {
            double* gp = grd(k);
            std::fill(gp, gp + size(k), 0.0);
        }
        grd(loss.i)[0] = 1.0;
        for (std::int32_t k = loss.i; k >= 0; --k) {
            const Node& n = nodes_[k];
            if (n.back) n.back(*this, n);
        }
    }

    // ---- access ----

    std::span<const double> value(Var v) const {
        check(v, "value");
        return {buf_.data() + nodes_[v.i].val, size(v.i)};
    }
    std::span<const double> gradient(Var v) const {
        check(v, "gradient");
        if (!recording_)
            throw std::logic_error("gradient: graph was built without gradient recording");
        return {buf_.data() + nodes_[v.i].grd, size(v.i)};
    }
    double scalar(Var v) const {
        check(v, "scalar");
        return buf_[nodes_[v.i].val];
    }
    std::vector<double> value_copy(Var v) const {
        auto s = value(v);
        return {s.begin(), s.end()};
    }
    Shape var_shape(Var v) const {
        check(v, "var_shape");
        return nodes_[v.i].shape;
    }

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t clamp_events() const { return clamp_events_; }

    void clear() {
        nodes_.clear();
        buf_.clear();
        iaux_.clear();
        daux_.clear();
        bound_.clear();
        ++gen_;
    }

private:
    struct Node;
    using BackFn = void (*)(Graph&, const Node&);

    struct Node {
        BackFn back = nullptr;
        Shape shape;
        std::size_t val = 0;
        std::size_t grd = 0;
        std::int32_t in0 = -1, in1 = -1, in2 = -1;
        std::int32_t iaux = -1;
        std::int32_t daux = -1;
        std::int32_t extra = 0;
        const Param* sink = nullptr;
    };

    static constexpr double kNllFloor = 1e-300;
    static constexpr double kProbEps = 1e-12;

    double clamp_prob(double p) {
        if (p < kProbEps) {
            ++clamp_events_;
            return kProbEps;
        }
        if (p > 1.0 - kProbEps) {
            ++clamp_events_;
            return 1.0 - kProbEps;
        }
        return p;
    }

    void check(Var v, const char* where) const {
        if (v.owner != this || v.gen != gen_ || v.i < 0 ||
            static_cast<std::size_t>(v.i) >= nodes_.size())
            throw std::invalid_argument(std::string(where) +
                                        ": tensor is not on the current graph");
    }

    std::size_t size(std::int32_t i) const { return nodes_[i].shape.size(); }
    Shape shape(Var v) const { return nodes_[v.i].shape; }
    double* val(std::int32_t i) { return buf_.data() + nodes_[i].val; }
    const double* val(std::int32_t i) const { return buf_.data() + nodes_[i].val; }
    double* grd(std::int32_t i) { return buf_.data() + nodes_[i].grd; }

    Var make(Shape s, BackFn back, std::int32_t in0 = -1, std::int32_t in1 = -1,
             std::int32_t in2 = -1) {
        Node n;
        n.back = back;
        n.shape = s;
        const std::size_t len = s.size();
        n.val = buf_.size();
        buf_.resize(buf_.size() + len);
        if (recording_) {
            n.grd = buf_.size();
            buf_.resize(buf_.size() + len, 0.0);
        } else {
            n.grd = n.val;  // never written: backward is rejected
        }
        n.in0 = in0;
        n.in1 = in1;
        n.in2 = in2;
        nodes_.push_back(n);
        return Var{this, static_cast<std::int32_t>(nodes_.size()) - 1, gen_};
    }

    Var leaf(Shape s, const double* data, const Param* sink) {
        Var v = make(s, sink ? &back_leaf : nullptr);
        nodes_[v.i].sink = sink;
        std::copy(data, data + s.size(), val(v.i));
        return v;
    }

    Var binary(Var a, Var b, BackFn back, const char* where) {
        check(a, where);
        check(b, where);
        if (shape(a) != shape(b))
            throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                        shape(a).str() + " vs " + shape(b).str());
        Var out = make(shape(a), back, a.i, b.i);
        const double* av = val(a.i);
        const double* bv = val(b.i);
        double* y = val(out.i);
        if (back == &back_add) {
            for (std::size_t k = 0; k < size(out.i); ++k) y[k] = av[k] + bv[k];
        } else {
            for (std::size_t k = 0; k < size(out.i); ++k) y[k] = av[k] * bv[k];
        }
        return out;
    }

    // ---- backward rules ----

    static void back_leaf(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        double* sink = n.sink->grad.v.data();
        for (std::size_t k = 0; k < n.shape.size(); ++k) sink[k] += gy[k];
    }

    static void back_affine(Graph& g, const Node& n) {
        const std::size_t m = n.shape.dim[0];
        const std::size_t cols = g.nodes_[n.in0].shape.cols();
        const double* gy = g.buf_.data() + n.grd;
        const double* w = g.val(n.in0);
        const double* x = g.val(n.in1);
        double* gw = g.grd(n.in0);
        double* gx = g.grd(n.in1);
        double* gb = g.grd(n.in2);
        for (std::size_t r = 0; r < m; ++r) {
            const double gr = gy[r];
            gb[r] += gr;
            const double* row = w + r * cols;
            double* growout = gw + r * cols;
            for (std::size_t c = 0; c < cols; ++c) {
                growout[c] += gr * x[c];
                gx[c] += gr * row[c];
            }
        }
    }

    static void back_affine2(Graph& g, const Node& n) {
        const std::size_t m = n.shape.dim[0];
        const std::int32_t ui = g.iaux_[n.iaux];
        const std::int32_t xi = g.iaux_[n.iaux + 1];
        const std::size_t nh = g.nodes_[n.in0].shape.cols();
        const std::size_t nx = g.nodes_[ui].shape.cols();
        const double* gy = g.buf_.data() + n.grd;
        const double* w = g.val(n.in0);
        const double* h = g.val(n.in1);
        const double* u = g.val(ui);
        const double* x = g.val(xi);
        double* gw = g.grd(n.in0);
        double* gh = g.grd(n.in1);
        double* gu = g.grd(ui);
        double* gx = g.grd(xi);
        double* gb = g.grd(n.in2);
        for (std::size_t r = 0; r < m; ++r) {
            const double gr = gy[r];
            gb[r] += gr;
            const double* wrow = w + r * nh;
            double* gwrow = gw + r * nh;
            for (std::size_t c = 0; c < nh; ++c) {
                gwrow[c] += gr * h[c];
                gh[c] += gr * wrow[c];
            }
            const double* urow = u + r * nx;
            double* gurow = gu + r * nx;
            for (std::size_t c = 0; c < nx; ++c) {
                gurow[c] += gr * x[c];
                gx[c] += gr * urow[c];
            }
        }
    }

    static void back_slice(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        double* gin = g.grd(n.in0);
        for (std::size_t k = 0; k < n.shape.size(); ++k) gin[n.extra + k] += gy[k];
    }

    static void back_lstm_step(Graph& g, const Node& n) {
        const std::int32_t* in = g.iaux_.data() + n.iaux;
        const std::size_t dh = n.shape.dim[0] / 2;
        const std::size_t dx = g.nodes_[in[2]].shape.dim[0];
        const double* gy = g.buf_.data() + n.grd;  // [gh | gc_out]
        const double* saved = g.daux_.data() + n.daux;

        const double* hp = g.val(in[0]);
        const double* cp = g.val(in[1]);
        const double* xv = g.val(in[2]);
        const double* wi = g.val(in[3]);
        const double* wf = g.val(in[4]);
        const double* wc = g.val(in[5]);
        const double* wo = g.val(in[6]);
        const double* ui = g.val(in[7]);
        const double* uf = g.val(in[8]);
        const double* uc = g.val(in[9]);
        const double* uo = g.val(in[10]);
        double* ghp = g.grd(in[0]);
        double* gcp = g.grd(in[1]);
        double* gx = g.grd(in[2]);
        double* gwi = g.grd(in[3]);
        double* gwf = g.grd(in[4]);
        double* gwc = g.grd(in[5]);
        double* gwo = g.grd(in[6]);
        double* gui = g.grd(in[7]);
        double* guf = g.grd(in[8]);
        double* guc = g.grd(in[9]);
        double* guo = g.grd(in[10]);
        double* gbi = g.grd(in[11]);
        double* gbf = g.grd(in[12]);
        double* gbc = g.grd(in[13]);
        double* gbo = g.grd(in[14]);

        for (std::size_t r = 0; r < dh; ++r) {
            const double gi = saved[r];
            const double gf = saved[dh + r];
            const double gg = saved[2 * dh + r];
            const double go = saved[3 * dh + r];
            const double tc = saved[4 * dh + r];
            const double gh = gy[r];
            const double gc = gy[dh + r] + gh * go * (1.0 - tc * tc);
            const double d_o = gh * tc * go * (1.0 - go);
            const double d_i = gc * gg * gi * (1.0 - gi);
            const double d_g = gc * gi * (1.0 - gg * gg);
            const double d_f = gc * cp[r] * gf * (1.0 - gf);
            gcp[r] += gc * gf;
            gbi[r] += d_i;
            gbf[r] += d_f;
            gbc[r] += d_g;
            gbo[r] += d_o;
            const double* wir = wi + r * dh;
            const double* wfr = wf + r * dh;
            const double* wcr = wc + r * dh;
            const double* wor = wo + r * dh;
            double* gwir = gwi + r * dh;
            double* gwfr = gwf + r * dh;
            double* gwcr = gwc + r * dh;
            double* gwor = gwo + r * dh;
            for (std::size_t k = 0; k < dh; ++k) {
                const double h = hp[k];
                gwir[k] += d_i * h;
                gwfr[k] += d_f * h;
                gwcr[k] += d_g * h;
                gwor[k] += d_o * h;
                ghp[k] += d_i * wir[k] + d_f * wfr[k] + d_g * wcr[k] + d_o * wor[k];
            }
            const double* uir = ui + r * dx;
            const double* ufr = uf + r * dx;
            const double* ucr = uc + r * dx;
            const double* uor = uo + r * dx;
            double* guir = gui + r * dx;
            double* gufr = guf + r * dx;
            double* gucr = guc + r * dx;
            double* guor = guo + r * dx;
            for (std::size_t k = 0; k < dx; ++k) {
                const double xk = xv[k];
                guir[k] += d_i * xk;
                gufr[k] += d_f * xk;
                gucr[k] += d_g * xk;
                guor[k] += d_o * xk;
                gx[k] += d_i * uir[k] + d_f * ufr[k] + d_g * ucr[k] + d_o * uor[k];
            }
        }
    }

    static void back_stack(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        const std::int32_t count = g.iaux_[n.iaux];
        const std::int32_t* idx = g.iaux_.data() + n.iaux + 1;
        for (std::int32_t t = 0; t < count; ++t) g.grd(idx[t])[0] += gy[t];
    }

    static void back_add(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        double* ga = g.grd(n.in0);
        double* gb = g.grd(n.in1);
        for (std::size_t k = 0; k < n.shape.size(); ++k) {
            ga[k] += gy[k];
            gb[k] += gy[k];
        }
    }

    static void back_hadamard(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        const double* a = g.val(n.in0);
        const double* b = g.val(n.in1);
        double* ga = g.grd(n.in0);
        double* gb = g.grd(n.in1);
        for (std::size_t k = 0; k < n.shape.size(); ++k) {
            ga[k] += gy[k] * b[k];
            gb[k] += gy[k] * a[k];
        }
    }

    static void back_sigmoid(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        const double* y = g.buf_.data() + n.val;
        double* gx = g.grd(n.in0);
        for (std::size_t k = 0; k < n.shape.size(); ++k)
            gx[k] += gy[k] * y[k] * (1.0 - y[k]);
    }

    static void back_tanh(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        const double* y = g.buf_.data() + n.val;
        double* gx = g.grd(n.in0);
        for (std::size_t k = 0; k < n.shape.size(); ++k)
            gx[k] += gy[k] * (1.0 - y[k] * y[k]);
    }

    static void back_softmax(Graph& g, const Node& n) {
        const std::size_t len = n.shape.size();
        const double* gy = g.buf_.data() + n.grd;
        const double* y = g.buf_.data() + n.val;
        double* gx = g.grd(n.in0);
        double s = 0.0;
        for (std::size_t k = 0; k < len; ++k) s += gy[k] * y[k];
        for (std::size_t k = 0; k < len; ++k) gx[k] += y[k] * (gy[k] - s);
    }

    static void back_concat(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        const std::size_t na = g.nodes_[n.in0].shape.size();
        double* ga = g.grd(n.in0);
        double* gb = g.grd(n.in1);
        for (std::size_t k = 0; k < na; ++k) ga[k] += gy[k];
        for (std::size_t k = na; k < n.shape.size(); ++k) gb[k - na] += gy[k];
    }

    static void back_dot(Graph& g, const Node& n) {
        const double g0 = g.buf_[n.grd];
        const double* a = g.val(n.in0);
        const double* b = g.val(n.in1);
        double* ga = g.grd(n.in0);
        double* gb = g.grd(n.in1);
        for (std::size_t k = 0; k < g.nodes_[n.in0].shape.size(); ++k) {
            ga[k] += g0 * b[k];
            gb[k] += g0 * a[k];
        }
    }

    static void back_weighted_sum(Graph& g, const Node& n) {
        const double* gy = g.buf_.data() + n.grd;
        const std::int32_t count = g.iaux_[n.iaux];
        const std::int32_t* idx = g.iaux_.data() + n.iaux + 1;
        const double* w = g.val(n.in0);
        double* gw = g.grd(n.in0);
        const std::size_t len = n.shape.size();
        for (std::int32_t t = 0; t < count; ++t) {
            const double* item = g.val(idx[t]);
            double* gitem = g.grd(idx[t]);
            double acc = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                acc += gy[k] * item[k];
                gitem[k] += w[t] * gy[k];
            }
            gw[t] += acc;
        }
    }

    static void back_sum(Graph& g, const Node& n) {
        const double g0 = g.buf_[n.grd];
        double* gx = g.grd(n.in0);
        for (std::size_t k = 0; k < g.nodes_[n.in0].shape.size(); ++k) gx[k] += g0;
    }

    static void back_scale(Graph& g, const Node& n) {
        const double c = g.daux_[n.daux];
        const double* gy = g.buf_.data() + n.grd;
        double* gx = g.grd(n.in0);
        for (std::size_t k = 0; k < n.shape.size(); ++k) gx[k] += c * gy[k];
    }

    static void back_pick_nll(Graph& g, const Node& n) {
        const double g0 = g.buf_[n.grd];
        const double pl = std::max(g.val(n.in0)[n.extra], kNllFloor);
        g.grd(n.in0)[n.extra] += -g0 / pl;
    }

    static void back_bernoulli(Graph& g, const Node& n) {
        const double g0 = g.buf_[n.grd];
        const double* p = g.val(n.in0);
        const double* m = g.daux_.data() + n.daux;
        double* gp = g.grd(n.in0);
        const std::size_t len = g.nodes_[n.in0].shape.size();
        for (std::size_t t = 0; t < len; ++t) {
            double pc = p[t];
            pc = pc < kProbEps ? kProbEps : (pc > 1.0 - kProbEps ? 1.0 - kProbEps : pc);
            gp[t] += g0 * (m[t] / pc - (1.0 - m[t]) / (1.0 - pc));
        }
    }

    std::vector<Node> nodes_;
    std::vector<double> buf_;
    std::vector<std::int32_t> iaux_;
    std::vector<double> daux_;
    std::unordered_map<const Param*, std::int32_t> bound_;
    std::uint32_t gen_ = 0;
    std::size_t clamp_events_ = 0;
    bool recording_ = true;
};

}  // namespace emhrnn
