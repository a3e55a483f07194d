// Segmentation reports: phrase-length statistics (a phrase's length is its
// segment's token count, i.e. words between consecutive boundaries with the
// opening boundary excluded and the closing one included), rendered "//"
// markers after each segment, and the most-attended-word drill-down
// (strongest sentence -> strongest phrase -> strongest word).
#pragma once

#include <map>
#include <string>

#include "emhrnn/model.hpp"

namespace emhrnn {

struct PhraseLengthStats {
    std::size_t count = 0;
    long long total = 0;
    int min = 0;
    int max = 0;
    std::map<int, std::size_t> histogram;

    double mean() const { return count ? double(total) / double(count) : 0.0; }

    void add(int length) {
        if (count == 0) {
            min = max = length;
        } else {
            min = std::min(min, length);
            max = std::max(max, length);
        }
        ++count;
        total += length;
        ++histogram[length];
    }

    void merge(const PhraseLengthStats& other) {
        if (other.count == 0) return;
        if (count == 0) {
            *this = other;
            return;
        }
        min = std::min(min, other.min);
        max = std::max(max, other.max);
        count += other.count;
        total += other.total;
        for (const auto& [len, c] : other.histogram) histogram[len] += c;
    }
};

inline PhraseLengthStats phrase_length_stats(
    const std::vector<std::vector<TokenRange>>& segments) {
    PhraseLengthStats stats;
    for (const auto& sentence : segments)
        for (const auto& seg : sentence) stats.add(seg.length());
    return stats;
}

inline PhraseLengthStats phrase_length_stats(const Document& doc,
                                             const IndicatorAssignment& z) {
    return phrase_length_stats(segments_from(doc, z));
}

// "w1 w2 w3 // w4 w5 //" style rendering; token strings are used when
// available, positional placeholders otherwise.
inline std::string render_segmented(const Document& doc, const IndicatorAssignment& z,
                                    const std::vector<std::vector<std::string>>* tokens =
                                        nullptr) {
    auto segments = segments_from(doc, z);
    std::string out;
    int sentence_start = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        for (const TokenRange& seg : segments[i]) {
            for (int t = seg.begin; t < seg.end; ++t) {
                if (!out.empty()) out += ' ';
                if (tokens)
                    out += (*tokens)[i][t - sentence_start];
                else
                    out += "w" + std::to_string(t + 1);
            }
            out += " //";
        }
        sentence_start += static_cast<int>(doc.sentences[i].size());
    }
    return out;
}

struct TopAttention {
    int sentence = -1;
    int segment = -1;
    TokenRange range;
    int token = -1;  // document-wide position
};

inline TopAttention top_attention(const AttentionTrace& trace) {
    TopAttention top;
    if (trace.gamma.empty()) return top;
    top.sentence = 0;
    for (std::size_t i = 1; i < trace.gamma.size(); ++i)
        if (trace.gamma[i] > trace.gamma[top.sentence]) top.sentence = static_cast<int>(i);
    const auto& sent = trace.sentences[top.sentence];
    top.segment = 0;
    for (std::size_t j = 1; j < sent.beta.size(); ++j)
        if (sent.beta[j] > sent.beta[top.segment]) top.segment = static_cast<int>(j);
    const auto& seg = sent.segments[top.segment];
    top.range = seg.range;
    int best = 0;
    for (std::size_t t = 1; t < seg.alpha.size(); ++t)
        if (seg.alpha[t] > seg.alpha[best]) best = static_cast<int>(t);
    top.token = seg.range.begin + best;
    return top;
}

}  // namespace emhrnn
