// EM training: exact-enumeration posteriors, generalized-EM ascent with
// backtracking, classification-EM imputation, and the two block-bootstrap
// schedules (non-overlapping and local).
//
// Posterior enumeration and Q evaluation share per-segmentation forward
// passes through DocEvaluator; the naive per-configuration path exists in the
// test suites as the independent oracle. Config-evaluation counters count
// enumerated indicator configurations, matching the closed forms 2^n,
// 2^l * ceil(n/l), and 2^5 * 10 * M.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "emhrnn/data_io.hpp"
#include "emhrnn/doc_eval.hpp"
#include "emhrnn/model.hpp"
#include "emhrnn/parallel.hpp"

namespace emhrnn {

// ---------------------------------------------------------------- posterior

struct PosteriorTable {
    std::vector<IndicatorAssignment> configs;
    std::vector<double> weights;      // normalized, sum to 1
    double log_marginal = 0.0;        // log sum over enumerated configs of p(y, Z | w)
};

struct BlockSpec {
    std::vector<TokenRange> blocks;
    IndicatorAssignment fixed_z;  // full length; bits inside an active block are ignored
};

inline double bernoulli_loglik_value(std::span<const double> pi,
                                     const IndicatorAssignment& z) {
    constexpr double eps = 1e-12;
    double acc = 0.0;
    for (std::size_t t = 0; t < z.size(); ++t) {
        double p = pi[t];
        p = p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p);
        acc += z[t] ? std::log(p) : std::log(1.0 - p);
    }
    return acc;
}

inline double log_sum_exp(std::span<const double> xs) {
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

// Enumerates every assignment of the free positions with the remaining bits
// held at fixed_z, normalizes p(y, Z | w) by log-sum-exp. Exactly
// 2^(#free) configurations are evaluated (and counted).
inline PosteriorTable enumerate_posterior(const ModelParams& params, const Document& doc,
                                          std::span<const int> free_positions,
                                          const IndicatorAssignment& fixed_z,
                                          int max_exact_n,
                                          std::uint64_t* config_counter = nullptr) {
    const std::size_t n = doc.token_count();
    if (fixed_z.size() != n)
        throw std::invalid_argument("enumerate_posterior: fixed_z length mismatch");
    const int nf = static_cast<int>(free_positions.size());
    if (nf > max_exact_n)
        throw std::invalid_argument(
            "enumerate_posterior: " + std::to_string(nf) +
            " free positions exceed the exact-enumeration limit of " +
            std::to_string(max_exact_n) +
            "; use a bootstrap strategy (nonoverlap:<l> or local)");
    for (int t : free_positions)
        if (t < 0 || static_cast<std::size_t>(t) >= n)
            throw std::invalid_argument("enumerate_posterior: free position out of range");

    Graph g(false);
    DocEvaluator eval(g, params, doc);
    const auto pi = eval.pi_values();

    PosteriorTable table;
    const std::size_t count = std::size_t(1) << nf;
    table.configs.reserve(count);
    std::vector<double> lls(count);
    IndicatorAssignment z = fixed_z;
    for (std::size_t mask = 0; mask < count; ++mask) {
        for (int j = 0; j < nf; ++j) z[free_positions[j]] = (mask >> j) & 1u;
        lls[mask] = eval.log_prob(z) + bernoulli_loglik_value(pi, z);
        table.configs.push_back(z);
    }
    table.log_marginal = log_sum_exp(lls);
    table.weights.resize(count);
    for (std::size_t mask = 0; mask < count; ++mask)
        table.weights[mask] = std::exp(lls[mask] - table.log_marginal);
    if (config_counter) *config_counter += count;
    return table;
}

// full-posterior form: every position is free
inline PosteriorTable enumerate_posterior(const ModelParams& params, const Document& doc,
                                          int max_exact_n = 16,
                                          std::uint64_t* config_counter = nullptr) {
    std::vector<int> all(doc.token_count());
    for (std::size_t t = 0; t < all.size(); ++t) all[t] = static_cast<int>(t);
    IndicatorAssignment zeros(doc.token_count(), 0);
    return enumerate_posterior(params, doc, all, zeros, max_exact_n, config_counter);
}

// block-restricted form
inline PosteriorTable enumerate_posterior(const ModelParams& params, const Document& doc,
                                          const BlockSpec& spec, std::size_t block_index,
                                          int max_exact_n = 16,
                                          std::uint64_t* config_counter = nullptr) {
    const TokenRange& block = spec.blocks.at(block_index);
    std::vector<int> free;
    for (int t = block.begin; t < block.end; ++t) free.push_back(t);
    return enumerate_posterior(params, doc, free, spec.fixed_z, max_exact_n,
                               config_counter);
}

// ---------------------------------------------------------------- Q function

// Q(params | table) = sum_k w_k [log p(y | seg(z_k)) + log Bern(z_k; pi)].
// Identical configurations' class chains are shared through DocEvaluator and
// the Bernoulli part collapses onto posterior marginals; both rewrites are
// exact linear identities.
inline Var build_q_value(Graph& g, const ModelParams& params, const Document& doc,
                         const PosteriorTable& table) {
    if (table.configs.empty()) throw std::invalid_argument("build_q_value: empty table");
    DocEvaluator eval(g, params, doc);
    const std::size_t n = doc.token_count();

    std::vector<Var> distinct;
    std::vector<double> distinct_weight;
    std::unordered_map<std::int32_t, std::size_t> slot_of;
    std::vector<double> marginals(n, 0.0);
    for (std::size_t k = 0; k < table.configs.size(); ++k) {
        const auto& z = table.configs[k];
        const double w = table.weights[k];
        Var lp = eval.log_prob_var(z);
        auto [it, fresh] = slot_of.try_emplace(lp.i, distinct.size());
        if (fresh) {
            distinct.push_back(lp);
            distinct_weight.push_back(0.0);
        }
        distinct_weight[it->second] += w;
        for (std::size_t t = 0; t < n; ++t)
            if (z[t]) marginals[t] += w;
    }
    Var wvec = g.constant(Shape::vec(distinct_weight.size()), distinct_weight.data());
    Var class_part = g.weighted_sum(wvec, distinct);
    Var bern_part = g.bernoulli_loglik(eval.pi(), marginals);
    return g.add(class_part, bern_part);
}

inline double q_value(const ModelParams& params, const Document& doc,
                      const PosteriorTable& table) {
    Graph g(false);
    return g.scalar(build_q_value(g, params, doc, table));
}

// ---------------------------------------------------------------- optimizer

// velocity' = mu * velocity + grad; value' = value - lr * velocity'
inline void sgd_momentum_update(std::span<double> value, std::span<const double> grad,
                                std::span<double> velocity, double lr, double mu) {
    if (value.size() != grad.size() || value.size() != velocity.size())
        throw std::invalid_argument("sgd_momentum_update: size mismatch");
    for (std::size_t k = 0; k < value.size(); ++k) {
        velocity[k] = mu * velocity[k] + grad[k];
        value[k] -= lr * velocity[k];
    }
}

struct SgdState {
    std::vector<Tensor> velocity;

    SgdState() = default;
    explicit SgdState(ModelParams& params) {
        for (Param* p : params.params()) velocity.emplace_back(p->shape());
    }
};

// ---------------------------------------------------------------- CEM

// Hard assignment by thresholding the indicator probabilities at 0.5
// (ties impute 0).
inline IndicatorAssignment cem_impute(const ModelParams& params, const Document& doc) {
    auto pi = indicator_probs(params, doc);
    return threshold_indicators(pi);
}

// ---------------------------------------------------------------- blocks

// ceil(n/l) consecutive blocks; the last may be shorter.
inline BlockSpec partition_blocks(int n, int l) {
    if (n < 1 || l < 1) throw std::invalid_argument("partition_blocks: n, l must be >= 1");
    BlockSpec spec;
    spec.fixed_z.assign(n, 0);
    for (int b = 0; b < n; b += l) spec.blocks.push_back({b, std::min(b + l, n)});
    return spec;
}

// Ten centered length-5 windows, shifted inward at the edges; centers drawn
// without replacement (with replacement when n < 10). For n < 5 every block
// is the whole document.
inline BlockSpec sample_local_blocks(int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample_local_blocks: n must be >= 1");
    constexpr int n_blocks = 10;
    BlockSpec spec;
    spec.fixed_z.assign(n, 0);
    std::vector<int> centers;
    if (n >= n_blocks) {
        std::vector<int> pool(n);
        for (int t = 0; t < n; ++t) pool[t] = t;
        for (int k = 0; k < n_blocks; ++k) {
            const int j = k + static_cast<int>(rng.uniform_index(n - k));
            std::swap(pool[k], pool[j]);
            centers.push_back(pool[k]);
        }
    } else {
        for (int k = 0; k < n_blocks; ++k)
            centers.push_back(static_cast<int>(rng.uniform_index(n)));
    }
    for (int c : centers) {
        if (n < 5) {
            spec.blocks.push_back({0, n});
        } else {
            const int begin = std::clamp(c - 2, 0, n - 5);
            spec.blocks.push_back({begin, begin + 5});
        }
    }
    return spec;
}

// ---------------------------------------------------------------- GEM step

struct GemPass {
    double q_before = 0.0;
    double q_after = 0.0;
    int halvings = 0;
    bool accepted = false;
    bool rejected_nonfinite = false;
};

struct GemResult {
    std::vector<GemPass> passes;
    double q_initial = 0.0;
    double q_final = 0.0;
    int skipped = 0;  // passes that made no update

    double min_delta() const {
        double d = 0.0;
        for (const auto& p : passes)
            if (p.accepted) d = std::min(d, p.q_after - p.q_before);
        return d;
    }
};

struct GemConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    int m_step_passes = 1;
    int max_halvings = 8;
    int threads = 1;
    std::size_t chunk_size = 8;
};

// One generalized-EM M-step on a mini-batch: gradient-ascent passes on
// sum_docs Q with lr backtracking; a pass is only accepted when the batch Q
// does not decrease by more than 1e-9. update_mask selects which parameters
// move (empty = all); frozen parameters and their velocity stay untouched.
inline GemResult gem_step(ModelParams& params, std::span<const Document* const> docs,
                          std::span<const PosteriorTable* const> tables,
                          const GemConfig& cfg, SgdState& opt,
                          const std::vector<char>& update_mask = {}) {
    if (docs.size() != tables.size())
        throw std::invalid_argument("gem_step: one table per document required");
    auto plist = params.params();
    const std::vector<char> mask =
        update_mask.empty() ? std::vector<char>(plist.size(), 1) : update_mask;
    if (mask.size() != plist.size())
        throw std::invalid_argument("gem_step: update mask size mismatch");

    const std::size_t n_docs = docs.size();
    const std::size_t chunks = chunk_count(n_docs, cfg.chunk_size);

    auto batch_q = [&]() {
        std::vector<double> partial(chunks, 0.0);
        run_chunks(n_docs, cfg.chunk_size, cfg.threads,
                   [&](std::size_t c, std::size_t b, std::size_t e) {
                       Graph g(false);
                       double q = 0.0;
                       for (std::size_t d = b; d < e; ++d) {
                           g.clear();
                           q += g.scalar(build_q_value(g, params, *docs[d], *tables[d]));
                       }
                       partial[c] = q;
                   });
        double total = 0.0;
        for (double q : partial) total += q;  // fixed chunk order
        return total;
    };

    GemResult result;
    for (int pass = 0; pass < cfg.m_step_passes; ++pass) {
        GemPass rec;

        // gradient pass over per-chunk parameter copies, merged in chunk order
        std::vector<ModelParams> locals(chunks, params);
        std::vector<double> partial_q(chunks, 0.0);
        run_chunks(n_docs, cfg.chunk_size, cfg.threads,
                   [&](std::size_t c, std::size_t b, std::size_t e) {
                       ModelParams& local = locals[c];
                       local.zero_grads();
                       Graph g;
                       double q = 0.0;
                       for (std::size_t d = b; d < e; ++d) {
                           g.clear();
                           Var qv = build_q_value(g, local, *docs[d], *tables[d]);
                           q += g.scalar(qv);
                           g.backward(qv);
                       }
                       partial_q[c] = q;
                   });
        rec.q_before = 0.0;
        for (double q : partial_q) rec.q_before += q;

        // mean gradient: step sizes stay comparable across batch sizes
        std::vector<Tensor> grads;
        grads.reserve(plist.size());
        for (Param* p : plist) grads.emplace_back(p->shape());
        for (std::size_t c = 0; c < chunks; ++c) {
            auto lp = locals[c].params();
            for (std::size_t i = 0; i < plist.size(); ++i)
                for (std::size_t k = 0; k < grads[i].size(); ++k)
                    grads[i].v[k] += lp[i]->grad.v[k];
        }
        const double inv_docs = 1.0 / static_cast<double>(n_docs);
        for (auto& gten : grads)
            for (double& x : gten.v) x *= inv_docs;

        bool finite = true;
        for (const Tensor& gten : grads)
            for (double x : gten.v)
                if (!std::isfinite(x)) finite = false;
        if (!finite) {
            rec.rejected_nonfinite = true;
            rec.q_after = rec.q_before;
            result.passes.push_back(rec);
            ++result.skipped;
            continue;
        }

        // ascent on Q = descent on -Q: feed negated gradients to the update
        std::vector<Tensor> velocity_trial = opt.velocity;
        for (std::size_t i = 0; i < plist.size(); ++i) {
            if (!mask[i]) continue;
            for (std::size_t k = 0; k < grads[i].size(); ++k)
                velocity_trial[i].v[k] =
                    cfg.momentum * opt.velocity[i].v[k] - grads[i].v[k];
        }

        std::vector<std::vector<double>> snapshot(plist.size());
        for (std::size_t i = 0; i < plist.size(); ++i)
            if (mask[i]) snapshot[i] = plist[i]->value.v;

        double lr = cfg.learning_rate;
        for (int attempt = 0; attempt <= cfg.max_halvings; ++attempt) {
            for (std::size_t i = 0; i < plist.size(); ++i) {
                if (!mask[i]) continue;
                for (std::size_t k = 0; k < snapshot[i].size(); ++k)
                    plist[i]->value.v[k] = snapshot[i][k] - lr * velocity_trial[i].v[k];
            }
            const double q_new = batch_q();
            if (q_new >= rec.q_before - 1e-9) {
                rec.accepted = true;
                rec.q_after = q_new;
                break;
            }
            ++rec.halvings;
            lr *= 0.5;
        }
        if (rec.accepted) {
            for (std::size_t i = 0; i < plist.size(); ++i)
                if (mask[i]) opt.velocity[i] = velocity_trial[i];
        } else {
            // parameters stay put; stale momentum would fail the same way
            // next pass, so it is dropped
            for (std::size_t i = 0; i < plist.size(); ++i) {
                if (!mask[i]) continue;
                plist[i]->value.v = snapshot[i];
                opt.velocity[i].fill(0.0);
            }
            rec.q_after = rec.q_before;
            ++result.skipped;
        }
        result.passes.push_back(rec);
    }
    result.q_initial = result.passes.front().q_before;
    result.q_final = result.passes.back().q_after;
    return result;
}

// ---------------------------------------------------------------- metrics

struct RecoveryStats {
    double overall = std::numeric_limits<double>::quiet_NaN();
    double sentence_final = std::numeric_limits<double>::quiet_NaN();
};

// Position-wise match count between two indicator lists.
inline double indicator_match(const std::vector<IndicatorAssignment>& z_hat,
                              const std::vector<IndicatorAssignment>& z_true) {
    std::size_t correct = 0, total = 0;
    for (std::size_t d = 0; d < z_hat.size(); ++d) {
        for (std::size_t t = 0; t < z_hat[d].size(); ++t) {
            correct += z_hat[d][t] == z_true[d][t];
            ++total;
        }
    }
    return total ? double(correct) / double(total) : 0.0;
}

// CEM imputation with the static-boundary rule applied: a sentence-final
// position always closes a segment, so it is imputed as 1 irrespective of
// the head output.
inline IndicatorAssignment impute_with_static_close(const ModelParams& params,
                                                    const Document& doc) {
    IndicatorAssignment z = cem_impute(params, doc);
    std::size_t t = 0;
    for (const auto& sentence : doc.sentences) {
        t += sentence.size();
        z[t - 1] = 1;
    }
    return z;
}

// Recovery compares the imputed indicators (with static closes) against the
// ground truth position by position; the raw threshold behavior at
// sentence-final positions is reported separately.
inline RecoveryStats recovery_stats(const ModelParams& params, const Corpus& corpus) {
    if (!corpus.has_true_z()) return {};
    std::size_t correct = 0, total = 0, final_correct = 0, final_total = 0;
    for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
        const Document& doc = corpus.docs[d];
        const auto z_hat = cem_impute(params, doc);
        const auto& z_true = corpus.true_z[d];
        std::size_t t = 0;
        for (const auto& sentence : doc.sentences) {
            for (std::size_t j = 0; j < sentence.size(); ++j, ++t) {
                const bool final_pos = (j + 1 == sentence.size());
                correct += (final_pos ? 1 : z_hat[t]) == z_true[t];
                ++total;
                if (final_pos) {
                    final_correct += z_hat[t] == z_true[t];
                    ++final_total;
                }
            }
        }
    }
    RecoveryStats stats;
    stats.overall = total ? double(correct) / double(total) : 0.0;
    stats.sentence_final =
        final_total ? double(final_correct) / double(final_total) : 0.0;
    return stats;
}

inline double corpus_accuracy(const ModelParams& params, const Corpus& corpus,
                              int threads = 1) {
    if (corpus.docs.empty()) return 0.0;
    std::vector<std::uint32_t> hits(chunk_count(corpus.docs.size(), 16), 0);
    run_chunks(corpus.docs.size(), 16, threads,
               [&](std::size_t c, std::size_t b, std::size_t e) {
                   std::uint32_t h = 0;
                   for (std::size_t d = b; d < e; ++d)
                       h += predict(params, corpus.docs[d]).label == corpus.docs[d].label;
                   hits[c] = h;
               });
    std::size_t total = 0;
    for (auto h : hits) total += h;
    return double(total) / double(corpus.docs.size());
}

// ---------------------------------------------------------------- training

enum class Strategy { exact_em, nonoverlap, local_bootstrap };

inline std::string strategy_name(Strategy s, int block_len = 0) {
    switch (s) {
        case Strategy::exact_em: return "exact";
        case Strategy::nonoverlap: return "nonoverlap:" + std::to_string(block_len);
        case Strategy::local_bootstrap: return "local";
    }
    return "?";
}

struct EpochStats {
    int epoch = 0;
    std::string strategy;
    double q_sum = 0.0;        // sum over batches of the accepted batch Q
    double marginal_ll = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t config_evals = 0;
    double min_delta_q = 0.0;  // most negative accepted Q change
    int steps_accepted = 0;
    int steps_skipped = 0;
    double recovery = std::numeric_limits<double>::quiet_NaN();
    double recovery_final = std::numeric_limits<double>::quiet_NaN();
    double accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::uint64_t total_config_evals = 0;
};

struct TrainConfig {
    Strategy strategy = Strategy::exact_em;
    int block_len = 5;         // l, nonoverlap only
    double learning_rate = 0.1;
    double momentum = 0.9;
    int batch_size = 64;
    int m_step_passes = 1;
    int outer_iters = 1;       // K, local bootstrap
    int inner_iters = 1;       // M, local bootstrap
    int epochs = 1;            // exact / nonoverlap
    std::uint64_t seed = 1;
    int max_exact_n = 16;
    int threads = 1;
    bool track_metrics = true;  // per-epoch recovery/accuracy in the history
    std::function<void(const EpochStats&)> progress;  // called after each epoch

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate <= 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("TrainConfig: momentum outside [0, 1)");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size < 1");
        if (block_len < 1) throw std::invalid_argument("TrainConfig: block length < 1");
        if (m_step_passes < 1) throw std::invalid_argument("TrainConfig: m_step_passes < 1");
        if (outer_iters < 1 || inner_iters < 1)
            throw std::invalid_argument("TrainConfig: bootstrap iteration counts < 1");
        if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs < 0");
        if (max_exact_n < 1 || max_exact_n > 30)
            throw std::invalid_argument("TrainConfig: max_exact_n outside [1, 30]");
        if (threads < 1) throw std::invalid_argument("TrainConfig: threads < 1");
    }

    GemConfig gem() const {
        GemConfig g;
        g.learning_rate = learning_rate;
        g.momentum = momentum;
        g.m_step_passes = m_step_passes;
        g.threads = threads;
        return g;
    }
};

namespace detail {

inline void absorb(EpochStats& st, const GemResult& gem) {
    st.q_sum += gem.q_final;
    st.min_delta_q = std::min(st.min_delta_q, gem.min_delta());
    for (const auto& p : gem.passes) st.steps_accepted += p.accepted;
    st.steps_skipped += gem.skipped;
}

inline void finish_epoch(EpochStats& st, TrainHistory& history, ModelParams& params,
                         const Corpus& corpus, const TrainConfig& cfg) {
    if (cfg.track_metrics) {
        if (corpus.has_true_z()) {
            auto rec = recovery_stats(params, corpus);
            st.recovery = rec.overall;
            st.recovery_final = rec.sentence_final;
        }
        st.accuracy = corpus_accuracy(params, corpus, cfg.threads);
    }
    history.total_config_evals += st.config_evals;
    if (cfg.progress) cfg.progress(st);
    history.epochs.push_back(st);
}

// E-step over one batch: one full-posterior table per document, in parallel
// deterministic chunks.
inline std::vector<PosteriorTable> full_tables(const ModelParams& params,
                                               const Corpus& corpus,
                                               const std::vector<int>& batch,
                                               const TrainConfig& cfg,
                                               std::uint64_t& counter, double& marginal) {
    std::vector<PosteriorTable> tables(batch.size());
    const std::size_t chunks = chunk_count(batch.size(), 8);
    std::vector<std::uint64_t> counts(chunks, 0);
    run_chunks(batch.size(), 8, cfg.threads,
               [&](std::size_t c, std::size_t b, std::size_t e) {
                   for (std::size_t i = b; i < e; ++i)
                       tables[i] = enumerate_posterior(params, corpus.docs[batch[i]],
                                                       cfg.max_exact_n, &counts[c]);
               });
    for (std::size_t c = 0; c < chunks; ++c) counter += counts[c];
    for (const auto& t : tables) marginal += t.log_marginal;
    return tables;
}

}  // namespace detail

// Exact-enumeration generalized EM: alternate full-posterior E-steps and
// GEM M-steps over mini-batches.
inline TrainHistory train_exact_em(ModelParams& params, const Corpus& corpus,
                                   const TrainConfig& cfg) {
    cfg.validate();
    corpus.validate();
    for (const Document& doc : corpus.docs)
        if (static_cast<int>(doc.token_count()) > cfg.max_exact_n)
            throw std::invalid_argument(
                "train_exact_em: a document has " + std::to_string(doc.token_count()) +
                " tokens, above the exact-enumeration limit of " +
                std::to_string(cfg.max_exact_n) + "; use nonoverlap:<l> or local");

    Rng rng(cfg.seed);
    SgdState opt(params);
    TrainHistory history;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng erng = rng.derive(epoch);
        auto batches = batch_by_length(corpus.docs, cfg.batch_size, erng);
        EpochStats st;
        st.epoch = epoch;
        st.strategy = strategy_name(Strategy::exact_em);
        st.marginal_ll = 0.0;
        for (const auto& batch : batches) {
            auto tables = detail::full_tables(params, corpus, batch, cfg, st.config_evals,
                                              st.marginal_ll);
            std::vector<const Document*> dptr;
            std::vector<const PosteriorTable*> tptr;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                dptr.push_back(&corpus.docs[batch[i]]);
                tptr.push_back(&tables[i]);
            }
            detail::absorb(st, gem_step(params, dptr, tptr, cfg.gem(), opt));
        }
        detail::finish_epoch(st, history, params, corpus, cfg);
    }
    return history;
}

// Non-overlapping block bootstrap: per document the indicators outside the
// active block are fixed at their CEM imputation; blocks are visited in
// order and the finished block's bits are re-imputed before moving on.
inline TrainHistory train_nonoverlap(ModelParams& params, const Corpus& corpus,
                                     const TrainConfig& cfg) {
    cfg.validate();
    corpus.validate();
    if (cfg.block_len > cfg.max_exact_n)
        throw std::invalid_argument("train_nonoverlap: block length exceeds max_exact_n");

    // with one block per document the enumeration is the full posterior and
    // the marginal log-likelihood is exact
    bool whole_doc_blocks = true;
    for (const Document& doc : corpus.docs)
        if (static_cast<int>(doc.token_count()) > cfg.block_len) whole_doc_blocks = false;

    Rng rng(cfg.seed);
    SgdState opt(params);
    TrainHistory history;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng erng = rng.derive(epoch);
        auto batches = batch_by_length(corpus.docs, cfg.batch_size, erng);
        EpochStats st;
        st.epoch = epoch;
        st.strategy = strategy_name(Strategy::nonoverlap, cfg.block_len);
        if (whole_doc_blocks) st.marginal_ll = 0.0;
        for (const auto& batch : batches) {
            std::vector<BlockSpec> specs(batch.size());
            run_chunks(batch.size(), 8, cfg.threads,
                       [&](std::size_t, std::size_t b, std::size_t e) {
                           for (std::size_t i = b; i < e; ++i) {
                               const Document& doc = corpus.docs[batch[i]];
                               specs[i] = partition_blocks(
                                   static_cast<int>(doc.token_count()), cfg.block_len);
                               specs[i].fixed_z = cem_impute(params, doc);
                           }
                       });
            std::size_t max_blocks = 0;
            for (const auto& s : specs) max_blocks = std::max(max_blocks, s.blocks.size());

            for (std::size_t j = 0; j < max_blocks; ++j) {
                std::vector<std::size_t> subset;
                for (std::size_t i = 0; i < batch.size(); ++i)
                    if (j < specs[i].blocks.size()) subset.push_back(i);

                std::vector<PosteriorTable> tables(subset.size());
                const std::size_t chunks = chunk_count(subset.size(), 8);
                std::vector<std::uint64_t> counts(chunks, 0);
                run_chunks(subset.size(), 8, cfg.threads,
                           [&](std::size_t c, std::size_t b, std::size_t e) {
                               for (std::size_t s = b; s < e; ++s) {
                                   const std::size_t i = subset[s];
                                   tables[s] = enumerate_posterior(
                                       params, corpus.docs[batch[i]], specs[i], j,
                                       cfg.max_exact_n, &counts[c]);
                               }
                           });
                for (auto c : counts) st.config_evals += c;
                if (whole_doc_blocks)
                    for (const auto& t : tables) st.marginal_ll += t.log_marginal;

                std::vector<const Document*> dptr;
                std::vector<const PosteriorTable*> tptr;
                for (std::size_t s = 0; s < subset.size(); ++s) {
                    dptr.push_back(&corpus.docs[batch[subset[s]]]);
                    tptr.push_back(&tables[s]);
                }
                detail::absorb(st, gem_step(params, dptr, tptr, cfg.gem(), opt));

                // refresh the finished block's imputation
                run_chunks(subset.size(), 8, cfg.threads,
                           [&](std::size_t, std::size_t b, std::size_t e) {
                               for (std::size_t s = b; s < e; ++s) {
                                   const std::size_t i = subset[s];
                                   const Document& doc = corpus.docs[batch[i]];
                                   auto pi = indicator_probs(params, doc);
                                   const TokenRange& blk = specs[i].blocks[j];
                                   for (int t = blk.begin; t < blk.end; ++t)
                                       specs[i].fixed_z[t] = pi[t] > 0.5 ? 1 : 0;
                               }
                           });
            }
        }
        detail::finish_epoch(st, history, params, corpus, cfg);
    }
    return history;
}

// Local block bootstrap: outer_iters x inner_iters rounds; each round first
// improves all parameters except the indicator head on CEM-imputed
// single-config tables, then sweeps ten sampled length-5 blocks updating only
// the indicator head on 2^5-config block posteriors.
inline TrainHistory train_local_bootstrap(ModelParams& params, const Corpus& corpus,
                                          const TrainConfig& cfg) {
    cfg.validate();
    corpus.validate();

    auto plist = params.params();
    std::vector<char> theta_mask(plist.size(), 1);   // everything but the head
    std::vector<char> head_mask(plist.size(), 0);    // only the head
    for (std::size_t i = 0; i < plist.size(); ++i) {
        if (plist[i] == &params.w_pi || plist[i] == &params.b_pi) {
            theta_mask[i] = 0;
            head_mask[i] = 1;
        }
    }

    Rng rng(cfg.seed);
    SgdState opt(params);
    TrainHistory history;
    for (int outer = 1; outer <= cfg.outer_iters; ++outer) {
        for (int inner = 1; inner <= cfg.inner_iters; ++inner) {
            const int round = (outer - 1) * cfg.inner_iters + inner;
            Rng erng = rng.derive(round);
            auto batches = batch_by_length(corpus.docs, cfg.batch_size, erng);
            EpochStats st;
            st.epoch = round;
            st.strategy = strategy_name(Strategy::local_bootstrap);
            for (const auto& batch : batches) {
                // per-document window sampling, seeded by the document index
                std::vector<BlockSpec> specs(batch.size());
                std::vector<PosteriorTable> cem_tables(batch.size());
                run_chunks(batch.size(), 8, cfg.threads,
                           [&](std::size_t, std::size_t b, std::size_t e) {
                               for (std::size_t i = b; i < e; ++i) {
                                   const Document& doc = corpus.docs[batch[i]];
                                   Rng drng = erng.derive(batch[i]);
                                   specs[i] = sample_local_blocks(
                                       static_cast<int>(doc.token_count()), drng);
                                   specs[i].fixed_z = cem_impute(params, doc);
                                   cem_tables[i].configs = {specs[i].fixed_z};
                                   cem_tables[i].weights = {1.0};
                               }
                           });

                std::vector<const Document*> dptr;
                std::vector<const PosteriorTable*> tptr;
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    dptr.push_back(&corpus.docs[batch[i]]);
                    tptr.push_back(&cem_tables[i]);
                }
                detail::absorb(st, gem_step(params, dptr, tptr, cfg.gem(), opt, theta_mask));

                for (std::size_t j = 0; j < 10; ++j) {
                    std::vector<PosteriorTable> tables(batch.size());
                    const std::size_t chunks = chunk_count(batch.size(), 8);
                    std::vector<std::uint64_t> counts(chunks, 0);
                    run_chunks(batch.size(), 8, cfg.threads,
                               [&](std::size_t c, std::size_t b, std::size_t e) {
                                   for (std::size_t i = b; i < e; ++i)
                                       tables[i] = enumerate_posterior(
                                           params, corpus.docs[batch[i]], specs[i], j,
                                           cfg.max_exact_n, &counts[c]);
                               });
                    for (auto c : counts) st.config_evals += c;
                    tptr.clear();
                    for (std::size_t i = 0; i < batch.size(); ++i)
                        tptr.push_back(&tables[i]);
                    detail::absorb(st,
                                   gem_step(params, dptr, tptr, cfg.gem(), opt, head_mask));
                }
            }
            detail::finish_epoch(st, history, params, corpus, cfg);
        }
    }
    return history;
}

inline TrainHistory train(ModelParams& params, const Corpus& corpus,
                          const TrainConfig& cfg) {
    switch (cfg.strategy) {
        case Strategy::exact_em: return train_exact_em(params, corpus, cfg);
        case Strategy::nonoverlap: return train_nonoverlap(params, corpus, cfg);
        case Strategy::local_bootstrap: return train_local_bootstrap(params, corpus, cfg);
    }
    throw std::invalid_argument("train: unknown strategy");
}

}  // namespace emhrnn
