// Synthetic indicator-recovery experiment: documents of two five-token
// sentences, ground-truth phrase indicators, and labels produced by a frozen
// randomly-initialized teacher network run with the true indicators.
//
// Construction per document: non-final indicators are i.i.d. Bernoulli(0.5)
// and induce the true segments. Each segment draws one random phrase vector;
// its tokens are that vector plus within-phrase noise, and the segment's last
// token additionally carries an end marker along a fixed random unit
// direction (cue_scale). Phrase-coherent tokens make the class label depend
// sharply on how tokens are pooled, and the causal end marker makes the
// boundaries identifiable from the tokens alone. Holding the indicators
// fixed, a document's tokens are redrawn until the teacher's top-two logit
// gap clears min_margin, so the labels carry real margins and stay learnable;
// the indicator marginals are untouched by this resampling. Sentence-final
// tokens share one end-of-sentence vector with their indicator forced to 1.
// The teacher is redrawn (up to a bound) while any class receives under 2%
// of the training labels.
#pragma once

#include <cstdint>
#include <vector>

#include "emhrnn/model.hpp"
#include "emhrnn/trainer.hpp"

namespace emhrnn {

struct SimgenConfig {
    int n_train = 10000;
    int n_test = 1000;
    std::uint64_t data_seed = 1;
    std::uint64_t teacher_seed = 2;
    std::size_t d_token = 50;
    std::size_t teacher_d_h = 50;
    int n_classes = 5;
    double cue_scale = 3.0;     // end-marker strength on segment-final tokens
    double phrase_scale = 1.0;  // scale of the per-segment phrase vectors
    double noise_scale = 0.35;  // within-phrase token noise
    double min_margin = 0.1;    // teacher top-two logit gap per document
    int max_resample = 40;      // token redraws per document before giving up
    double min_class_share = 0.02;
    int max_teacher_redraws = 10;

    void validate() const {
        if (n_train < 1 || n_test < 1)
            throw std::invalid_argument("SimgenConfig: corpus sizes must be >= 1");
        if (d_token < 1) throw std::invalid_argument("SimgenConfig: d_token < 1");
        if (n_classes < 2) throw std::invalid_argument("SimgenConfig: n_classes < 2");
        if (max_resample < 1) throw std::invalid_argument("SimgenConfig: max_resample < 1");
    }
};

struct SyntheticData {
    Corpus train;
    Corpus test;
    ModelParams teacher;
    std::uint64_t teacher_seed_used = 0;
};

// argmax class of the frozen teacher run with the true indicators
inline int teacher_label(const ModelParams& teacher, const Document& doc,
                         const IndicatorAssignment& true_z) {
    Graph g(false);
    auto fwd = forward_given_z(g, teacher, doc, true_z, false);
    auto probs = g.value(fwd.probs);
    int best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[best]) best = static_cast<int>(k);
    return best;
}

namespace detail {

// label plus the top-two logit gap (log-probability gap, same ordering)
inline std::pair<int, double> teacher_label_margin(const ModelParams& teacher,
                                                   const Document& doc,
                                                   const IndicatorAssignment& true_z) {
    Graph g(false);
    auto fwd = forward_given_z(g, teacher, doc, true_z, false);
    auto probs = g.value(fwd.probs);
    int best = 0, second = -1;
    for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[best]) best = static_cast<int>(k);
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (static_cast<int>(k) == best) continue;
        if (second < 0 || probs[k] > probs[second]) second = static_cast<int>(k);
    }
    return {best, std::log(probs[best]) - std::log(probs[second])};
}

// One document: indicators are drawn once per sentence; the tokens are
// redrawn (same rng stream) until the teacher margin is met. Within a
// sentence consecutive phrases carry opposite copies of the sentence's
// phrase vector, so pooling across a true boundary cancels toward the noise
// floor while aligned pooling preserves the vector.
inline void generate_doc(Document& doc, IndicatorAssignment& z, int& label, Rng& rng,
                         const Tensor& cue, const Tensor& eos, const ModelParams& teacher,
                         const SimgenConfig& cfg) {
    std::uint8_t bits[2][5];
    z.clear();
    for (int s = 0; s < 2; ++s) {
        for (int j = 0; j < 4; ++j) bits[s][j] = rng.uniform() < 0.5 ? 1 : 0;
        bits[s][4] = 1;
        for (int j = 0; j < 5; ++j) z.push_back(bits[s][j]);
    }
    double best_margin = -1.0;
    Document best_doc;
    int best_label = 0;
    for (int attempt = 0; attempt < cfg.max_resample; ++attempt) {
        Document candidate;
        for (int s = 0; s < 2; ++s) {
            std::vector<Tensor> sent(5, Tensor(Shape::vec(cfg.d_token)));
            Tensor phrase(Shape::vec(cfg.d_token));
            for (double& x : phrase.v) x = cfg.phrase_scale * rng.normal();
            double sign = 1.0;
            for (int j = 0; j < 4; ++j) {
                for (std::size_t k = 0; k < cfg.d_token; ++k) {
                    sent[j].v[k] = sign * phrase[k] + cfg.noise_scale * rng.normal();
                    if (bits[s][j]) sent[j].v[k] += cfg.cue_scale * cue[k];
                }
                if (bits[s][j]) sign = -sign;  // next phrase flips the vector
            }
            sent[4] = eos;
            candidate.sentences.push_back(std::move(sent));
        }
        auto [lab, margin] = teacher_label_margin(teacher, candidate, z);
        if (margin > best_margin) {
            best_margin = margin;
            best_doc = std::move(candidate);
            best_label = lab;
        }
        if (best_margin >= cfg.min_margin) break;
    }
    doc = std::move(best_doc);
    doc.label = best_label;
    label = best_label;
}

inline void generate_corpus_docs(Corpus& corpus, int count, std::uint64_t stream_base,
                                 const Rng& master, const Tensor& cue, const Tensor& eos,
                                 const ModelParams& teacher, const SimgenConfig& cfg) {
    corpus.docs.assign(count, Document{});
    corpus.true_z.assign(count, IndicatorAssignment{});
    corpus.n_classes = cfg.n_classes;
    for (int i = 0; i < count; ++i) {
        Rng rng = master.derive(stream_base + static_cast<std::uint64_t>(i));
        int label = 0;
        generate_doc(corpus.docs[i], corpus.true_z[i], label, rng, cue, eos, teacher, cfg);
    }
}

}  // namespace detail

inline SyntheticData generate_corpus(const SimgenConfig& cfg) {
    cfg.validate();
    Rng master(cfg.data_seed);

    // fixed generating mechanism: unit cue direction and the shared
    // end-of-sentence vector
    Rng mech = master.derive(0);
    Tensor cue(Shape::vec(cfg.d_token));
    double norm = 0.0;
    for (double& x : cue.v) {
        x = mech.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : cue.v) x /= norm;
    Tensor eos(Shape::vec(cfg.d_token));
    for (std::size_t k = 0; k < cfg.d_token; ++k)
        eos.v[k] = cfg.phrase_scale * mech.normal() + cfg.cue_scale * cue[k];

    // teacher with a non-degenerate label distribution over the training set
    SyntheticData data;
    ModelDims dims{cfg.d_token, cfg.teacher_d_h, cfg.teacher_d_h, cfg.n_classes};
    std::uint64_t seed = cfg.teacher_seed;
    for (int attempt = 0;; ++attempt, ++seed) {
        data.teacher = ModelParams(dims);
        data.teacher.init(seed);
        detail::generate_corpus_docs(data.train, cfg.n_train, 1u << 20, master, cue, eos,
                                     data.teacher, cfg);
        std::vector<int> counts(cfg.n_classes, 0);
        for (const auto& doc : data.train.docs) ++counts[doc.label];
        const int floor_count =
            static_cast<int>(cfg.min_class_share * static_cast<double>(cfg.n_train));
        bool ok = true;
        for (int c : counts) ok = ok && c >= floor_count;
        if (ok || attempt >= cfg.max_teacher_redraws) {
            data.teacher_seed_used = seed;
            break;
        }
    }
    detail::generate_corpus_docs(data.test, cfg.n_test, 1u << 30, master, cue, eos,
                                 data.teacher, cfg);
    return data;
}

inline SyntheticData generate_corpus(int n_train, int n_test, std::uint64_t data_seed,
                                     std::uint64_t teacher_seed) {
    SimgenConfig cfg;
    cfg.n_train = n_train;
    cfg.n_test = n_test;
    cfg.data_seed = data_seed;
    cfg.teacher_seed = teacher_seed;
    return generate_corpus(cfg);
}

// fraction of indicators the model imputes correctly (static sentence closes
// applied)
inline double recovery_accuracy(const ModelParams& params, const Corpus& corpus) {
    if (!corpus.has_true_z())
        throw std::invalid_argument("recovery_accuracy: corpus has no ground truth");
    return recovery_stats(params, corpus).overall;
}

}  // namespace emhrnn
