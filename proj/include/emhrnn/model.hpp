// The full pipeline: word LSTM -> Bernoulli indicator head -> segmentation ->
// word-attention phrase vectors -> phrase LSTM -> phrase-attention sentence
// vectors -> sentence BiLSTM -> sentence attention -> classifier.
//
// Sentence boundaries are static: the word and phrase LSTMs reset at every
// sentence start, and the last token of a sentence always closes a segment
// regardless of its indicator bit (the bit still carries its Bernoulli
// likelihood term). The indicator head reads word-layer states only, so the
// indicator probabilities never depend on phrase/sentence/classifier
// parameters.
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emhrnn/layers.hpp"

namespace emhrnn {

struct ModelDims {
    std::size_t d_emb = 100;
    std::size_t d_h = 50;
    std::size_t d_a = 50;
    int n_classes = 5;
};

struct ModelParams {
    ModelDims dims;
    LstmParams word_lstm;    // input d_emb
    LstmParams phrase_lstm;  // input d_h
    LstmParams sent_fwd, sent_bwd;  // input d_h
    AttentionParams attn_word;      // over d_h states
    AttentionParams attn_phrase;    // over d_h states
    AttentionParams attn_sent;      // over 2*d_h states
    Param w_pi, b_pi;  // indicator head, 1 x d_h and scalar
    Param w_c, b_c;    // classifier, C x 2*d_h and C

    ModelParams() = default;
    explicit ModelParams(ModelDims d) { resize(d); }

    void resize(ModelDims d) {
        dims = d;
        word_lstm.resize(d.d_emb, d.d_h);
        phrase_lstm.resize(d.d_h, d.d_h);
        sent_fwd.resize(d.d_h, d.d_h);
        sent_bwd.resize(d.d_h, d.d_h);
        attn_word = AttentionParams(d.d_h, d.d_a);
        attn_phrase = AttentionParams(d.d_h, d.d_a);
        attn_sent = AttentionParams(2 * d.d_h, d.d_a);
        w_pi = Param(Shape::mat(1, d.d_h));
        b_pi = Param(Shape::vec(1));
        w_c = Param(Shape::mat(d.n_classes, 2 * d.d_h));
        b_c = Param(Shape::vec(d.n_classes));
    }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        word_lstm.init(rng);
        phrase_lstm.init(rng);
        sent_fwd.init(rng);
        sent_bwd.init(rng);
        attn_word.init(rng);
        attn_phrase.init(rng);
        attn_sent.init(rng);
        w_pi.init_uniform(rng, dims.d_h);
        w_c.init_uniform(rng, 2 * dims.d_h);
        // b_pi, b_c stay zero
    }

    // Canonical parameter order: archives, optimizer state, and gradient
    // buffers all rely on it.
    std::vector<std::pair<std::string, Param*>> named() {
        std::vector<std::pair<std::string, Param*>> out = word_lstm.named("word_lstm");
        auto append = [&](std::vector<std::pair<std::string, Param*>> more) {
            out.insert(out.end(), more.begin(), more.end());
        };
        append(phrase_lstm.named("phrase_lstm"));
        append(sent_fwd.named("sent_fwd"));
        append(sent_bwd.named("sent_bwd"));
        append(attn_word.named("attn_word"));
        append(attn_phrase.named("attn_phrase"));
        append(attn_sent.named("attn_sent"));
        out.emplace_back("w_pi", &w_pi);
        out.emplace_back("b_pi", &b_pi);
        out.emplace_back("w_c", &w_c);
        out.emplace_back("b_c", &b_c);
        return out;
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        for (auto& [name, p] : named()) out.push_back(p);
        return out;
    }

    void zero_grads() {
        for (Param* p : params()) p->zero_grad();
    }
};

// Token vectors grouped into sentences; label is a zero-based class index.
struct Document {
    std::vector<std::vector<Tensor>> sentences;
    int label = 0;

    std::size_t token_count() const {
        std::size_t n = 0;
        for (const auto& s : sentences) n += s.size();
        return n;
    }

    void validate() const {
        if (sentences.empty()) throw std::invalid_argument("Document: no sentences");
        for (const auto& s : sentences)
            if (s.empty()) throw std::invalid_argument("Document: empty sentence");
    }
};

// One bit per token in document order; z_t = 1 marks the end of a phrase.
using IndicatorAssignment = std::vector<std::uint8_t>;

// Documents plus, when the corpus is synthetic, the ground-truth indicators.
struct Corpus {
    std::vector<Document> docs;
    std::vector<IndicatorAssignment> true_z;  // empty when unknown
    int n_classes = 0;

    bool has_true_z() const { return !true_z.empty(); }
    void validate() const {
        for (const auto& d : docs) d.validate();
        if (!true_z.empty() && true_z.size() != docs.size())
            throw std::invalid_argument("Corpus: true_z count mismatch");
    }
};

// Half-open range of document-wide token positions.
struct TokenRange {
    int begin = 0;
    int end = 0;
    int length() const { return end - begin; }
    bool operator==(const TokenRange& o) const { return begin == o.begin && end == o.end; }
};

// Within each sentence a segment ends at every z_t = 1 and at the sentence's
// final position; segments partition the sentence.
inline std::vector<std::vector<TokenRange>> segments_from(const Document& doc,
                                                          const IndicatorAssignment& z) {
    if (z.size() != doc.token_count())
        throw std::invalid_argument("segments_from: " + std::to_string(z.size()) +
                                    " indicator bits for " +
                                    std::to_string(doc.token_count()) + " tokens");
    std::vector<std::vector<TokenRange>> out;
    out.reserve(doc.sentences.size());
    int pos = 0;
    for (const auto& sentence : doc.sentences) {
        std::vector<TokenRange> segs;
        int start = pos;
        for (std::size_t j = 0; j < sentence.size(); ++j, ++pos) {
            const bool last = (j + 1 == sentence.size());
            if (z[pos] || last) {
                segs.push_back({start, pos + 1});
                start = pos + 1;
            }
        }
        out.push_back(std::move(segs));
    }
    return out;
}

struct SegmentTrace {
    TokenRange range;
    std::vector<double> alpha;  // word-attention weights over the segment
};
struct SentenceTrace {
    std::vector<SegmentTrace> segments;
    std::vector<double> beta;  // phrase-attention weights over the segments
};
struct AttentionTrace {
    std::vector<SentenceTrace> sentences;
    std::vector<double> gamma;  // sentence-attention weights
    std::vector<double> pi;     // per-token indicator probabilities
};

// Word layer evaluated once per document: per-sentence LSTM states plus the
// indicator probabilities.
struct WordRun {
    std::vector<std::vector<LstmStateVar>> states;  // [sentence][token]
    Var pi;                                          // length n
};

inline WordRun build_word_layer(Graph& g, const ModelParams& p, const Document& doc) {
    doc.validate();
    WordRun run;
    std::vector<Var> pre;
    pre.reserve(doc.token_count());
    Var w_pi = g.param(p.w_pi);
    Var b_pi = g.param(p.b_pi);
    for (const auto& sentence : doc.sentences) {
        std::vector<Var> xs;
        xs.reserve(sentence.size());
        for (const Tensor& tok : sentence) xs.push_back(g.constant(tok));
        auto states = lstm_encode(g, p.word_lstm, xs);
        for (const auto& s : states) pre.push_back(g.affine(w_pi, s.h, b_pi));
        run.states.push_back(std::move(states));
    }
    run.pi = g.sigmoid(g.stack_scalars(pre));
    return run;
}

// pi_t = sigma(W_pi h_t + b_pi) for every token position.
inline std::vector<double> indicator_probs(const ModelParams& p, const Document& doc) {
    Graph g(false);
    return g.value_copy(build_word_layer(g, p, doc).pi);
}

struct ForwardResult {
    Var probs;
    AttentionTrace trace;
};

// Pipeline from precomputed word states; the trace records segment ranges and
// all attention weights.
inline ForwardResult forward_from_word_run(Graph& g, const ModelParams& p,
                                           const Document& doc, const WordRun& run,
                                           const IndicatorAssignment& z,
                                           bool want_trace = false) {
    auto segments = segments_from(doc, z);
    ForwardResult result;
    std::vector<Var> sentence_vecs;
    sentence_vecs.reserve(doc.sentences.size());
    std::vector<int> sentence_start(doc.sentences.size());
    int pos = 0;
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
        sentence_start[i] = pos;
        pos += static_cast<int>(doc.sentences[i].size());
    }
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
        SentenceTrace strace;
        std::vector<Var> phrase_vecs;
        phrase_vecs.reserve(segments[i].size());
        for (const TokenRange& seg : segments[i]) {
            std::vector<Var> hs;
            hs.reserve(seg.length());
            for (int t = seg.begin; t < seg.end; ++t)
                hs.push_back(run.states[i][t - sentence_start[i]].h);
            auto pooled = attention_pool(g, p.attn_word, hs);
            phrase_vecs.push_back(pooled.pooled);
            if (want_trace)
                strace.segments.push_back({seg, g.value_copy(pooled.weights)});
        }
        auto phrase_states = lstm_encode(g, p.phrase_lstm, phrase_vecs);
        std::vector<Var> hs2;
        hs2.reserve(phrase_states.size());
        for (const auto& s : phrase_states) hs2.push_back(s.h);
        auto pooled = attention_pool(g, p.attn_phrase, hs2);
        sentence_vecs.push_back(pooled.pooled);
        if (want_trace) {
            strace.beta = g.value_copy(pooled.weights);
            result.trace.sentences.push_back(std::move(strace));
        }
    }
    auto h3 = bilstm_encode(g, p.sent_fwd, p.sent_bwd, sentence_vecs);
    auto doc_pooled = attention_pool(g, p.attn_sent, h3);
    result.probs = classify(g, p.w_c, p.b_c, doc_pooled.pooled);
    if (want_trace) {
        result.trace.gamma = g.value_copy(doc_pooled.weights);
        result.trace.pi = g.value_copy(run.pi);
    }
    return result;
}

inline ForwardResult forward_given_z(Graph& g, const ModelParams& p, const Document& doc,
                                     const IndicatorAssignment& z, bool want_trace = true) {
    WordRun run = build_word_layer(g, p, doc);
    return forward_from_word_run(g, p, doc, run, z, want_trace);
}

// log p(y | Z, w) + sum_t [z_t log pi_t + (1 - z_t) log(1 - pi_t)]
inline Var complete_log_likelihood(Graph& g, const ModelParams& p, const Document& doc,
                                   const IndicatorAssignment& z) {
    WordRun run = build_word_layer(g, p, doc);
    auto fwd = forward_from_word_run(g, p, doc, run, z, false);
    Var log_py = g.scale(g.pick_nll(fwd.probs, doc.label), -1.0);
    std::vector<double> m(z.begin(), z.end());
    return g.add(log_py, g.bernoulli_loglik(run.pi, m));
}

inline IndicatorAssignment threshold_indicators(std::span<const double> pi) {
    IndicatorAssignment z(pi.size());
    for (std::size_t t = 0; t < pi.size(); ++t) z[t] = pi[t] > 0.5 ? 1 : 0;  // ties -> 0
    return z;
}

struct Prediction {
    int label = 0;
    IndicatorAssignment z_hat;
    AttentionTrace trace;
};

// z_hat_t = 1 iff pi_t > 0.5, then argmax of the class probabilities.
inline Prediction predict(const ModelParams& p, const Document& doc) {
    Graph g(false);
    WordRun run = build_word_layer(g, p, doc);
    Prediction out;
    out.z_hat = threshold_indicators(g.value(run.pi));
    auto fwd = forward_from_word_run(g, p, doc, run, out.z_hat, true);
    auto probs = g.value(fwd.probs);
    out.label = static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                                 probs.begin());
    out.trace = std::move(fwd.trace);
    return out;
}

}  // namespace emhrnn
