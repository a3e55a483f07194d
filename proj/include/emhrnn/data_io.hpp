// Text ingestion and corpus files: tokenizer with static sentence boundaries,
// embedding-table loading, line-delimited corpus records, and length-sorted
// batching.
//
// File formats (all UTF-8):
//   embeddings   one token per line followed by d space-separated floats
//   text corpus  one JSON record {"text": ..., "label": k} per line, k >= 1
//   vector corpus one JSON record {"doc_id": i, "label": k, "true_z": [...],
//                "sentences": [[[f, ...], ...], ...]} per line; floats are
//                written with 17 significant digits so values round-trip
//                exactly. Labels are 1-based in files, 0-based in memory.
#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "emhrnn/model.hpp"
#include "emhrnn/rng.hpp"

namespace emhrnn {

struct Vocabulary {
    std::unordered_map<std::string, int> ids;
    std::vector<Tensor> rows;
    int unk_id = -1;
    std::size_t d_emb = 0;

    std::size_t size() const { return rows.size(); }

    // total: unknown tokens map to unk_id
    int lookup(const std::string& token) const {
        auto it = ids.find(token);
        return it == ids.end() ? unk_id : it->second;
    }
    const Tensor& embedding(int id) const { return rows.at(id); }
};

// Loads a text-format embedding table; lines with the wrong number of fields
// are skipped and counted, more than 1% of them is an error. The UNK row is
// appended last as a zero vector.
inline Vocabulary load_embeddings(const std::string& path, std::size_t d_emb) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_embeddings: cannot read " + path);
    Vocabulary vocab;
    vocab.d_emb = d_emb;
    std::string line;
    std::size_t malformed = 0, total = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++total;
        std::istringstream fields(line);
        std::string token;
        fields >> token;
        Tensor row(Shape::vec(d_emb));
        bool ok = !token.empty();
        for (std::size_t k = 0; ok && k < d_emb; ++k) ok = bool(fields >> row.v[k]);
        double extra;
        if (ok && (fields >> extra)) ok = false;
        if (!ok) {
            ++malformed;
            continue;
        }
        if (vocab.ids.count(token)) continue;  // first occurrence wins
        vocab.ids.emplace(token, static_cast<int>(vocab.rows.size()));
        vocab.rows.push_back(std::move(row));
    }
    if (total > 0 && malformed * 100 > total)
        throw std::runtime_error("load_embeddings: " + std::to_string(malformed) + " of " +
                                 std::to_string(total) + " lines malformed in " + path);
    vocab.unk_id = static_cast<int>(vocab.rows.size());
    vocab.rows.emplace_back(Shape::vec(d_emb));  // zero vector
    return vocab;
}

namespace detail {
inline void write_double(std::string& out, double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    out += buf;
}
}  // namespace detail

inline void write_embeddings(const std::string& path,
                             const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_embeddings: cannot write " + path);
    std::string line;
    for (const auto& [token, row] : entries) {
        line = token;
        for (double x : row.v) {
            line += ' ';
            detail::write_double(line, x);
        }
        line += '\n';
        out << line;
    }
}

// Lowercases, detaches punctuation into separate tokens, and closes a
// sentence after '.', '!', or '?'. Text without sentence-final punctuation is
// a single sentence.
inline std::vector<std::vector<std::string>> split_sentences_tokenize(
    const std::string& text) {
    static const std::string punct = ".,!?;:";
    static const std::string enders = ".!?";
    std::vector<std::vector<std::string>> sentences;
    std::vector<std::string> current;
    std::string token;
    auto flush_token = [&] {
        if (!token.empty()) {
            current.push_back(token);
            token.clear();
        }
    };
    auto flush_sentence = [&] {
        flush_token();
        if (!current.empty()) {
            sentences.push_back(std::move(current));
            current.clear();
        }
    };
    for (unsigned char ch : text) {
        const char c =
            ch < 0x80 ? static_cast<char>(std::tolower(ch)) : static_cast<char>(ch);
        if (ch < 0x80 && std::isspace(ch)) {
            flush_token();
        } else if (punct.find(c) != std::string::npos) {
            flush_token();
            current.push_back(std::string(1, c));
            if (enders.find(c) != std::string::npos) flush_sentence();
        } else {
            token.push_back(c);
        }
    }
    flush_sentence();
    if (sentences.empty())
        throw std::invalid_argument("split_sentences_tokenize: no tokens in text");
    return sentences;
}

// Tokens to embedding vectors; label is the zero-based class index.
inline Document encode(const std::string& text, int label, const Vocabulary& vocab) {
    Document doc;
    doc.label = label;
    for (const auto& sentence : split_sentences_tokenize(text)) {
        std::vector<Tensor> vecs;
        vecs.reserve(sentence.size());
        for (const auto& token : sentence)
            vecs.push_back(vocab.embedding(vocab.lookup(token)));
        doc.sentences.push_back(std::move(vecs));
    }
    return doc;
}

struct RawRecord {
    std::string text;
    int label = 1;  // 1-based in files
};
struct RawCorpus {
    std::vector<RawRecord> records;
    int class_count = 0;
};

inline RawCorpus read_raw_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_raw_corpus: cannot read " + path);
    RawCorpus corpus;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("text") || !j.contains("label"))
            throw std::runtime_error("read_raw_corpus: bad record at " + path + ":" +
                                     std::to_string(lineno));
        RawRecord r;
        r.text = j["text"].get<std::string>();
        r.label = j["label"].get<int>();
        if (r.label < 1)
            throw std::runtime_error("read_raw_corpus: label < 1 at " + path + ":" +
                                     std::to_string(lineno));
        if (r.text.empty())
            throw std::runtime_error("read_raw_corpus: empty text at " + path + ":" +
                                     std::to_string(lineno));
        corpus.class_count = std::max(corpus.class_count, r.label);
        corpus.records.push_back(std::move(r));
    }
    return corpus;
}

inline void write_raw_corpus(const std::string& path, const RawCorpus& corpus) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_raw_corpus: cannot write " + path);
    for (const auto& r : corpus.records) {
        nlohmann::json j{{"text", r.text}, {"label", r.label}};
        out << j.dump() << '\n';
    }
}

inline Corpus encode_corpus(const RawCorpus& raw, const Vocabulary& vocab) {
    Corpus corpus;
    corpus.n_classes = raw.class_count;
    corpus.docs.reserve(raw.records.size());
    for (const auto& r : raw.records) corpus.docs.push_back(encode(r.text, r.label - 1, vocab));
    return corpus;
}

inline void write_vector_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_vector_corpus: cannot write " + path);
    std::string line;
    for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
        const Document& doc = corpus.docs[d];
        line.clear();
        line += "{\"doc_id\":" + std::to_string(d);
        line += ",\"label\":" + std::to_string(doc.label + 1);
        if (corpus.has_true_z()) {
            line += ",\"true_z\":[";
            for (std::size_t t = 0; t < corpus.true_z[d].size(); ++t) {
                if (t) line += ',';
                line += corpus.true_z[d][t] ? '1' : '0';
            }
            line += ']';
        }
        line += ",\"sentences\":[";
        for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
            if (i) line += ',';
            line += '[';
            for (std::size_t j = 0; j < doc.sentences[i].size(); ++j) {
                if (j) line += ',';
                line += '[';
                const Tensor& tok = doc.sentences[i][j];
                for (std::size_t k = 0; k < tok.size(); ++k) {
                    if (k) line += ',';
                    detail::write_double(line, tok[k]);
                }
                line += ']';
            }
            line += ']';
        }
        line += "]}";
        line += '\n';
        out << line;
    }
}

inline Corpus read_vector_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_vector_corpus: cannot read " + path);
    Corpus corpus;
    std::string line;
    std::size_t lineno = 0;
    bool any_true_z = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("label") || !j.contains("sentences"))
            throw std::runtime_error("read_vector_corpus: bad record at " + path + ":" +
                                     std::to_string(lineno));
        Document doc;
        doc.label = j["label"].get<int>() - 1;
        for (const auto& sent : j["sentences"]) {
            std::vector<Tensor> vecs;
            for (const auto& tok : sent) {
                Tensor t(Shape::vec(tok.size()));
                for (std::size_t k = 0; k < tok.size(); ++k) t.v[k] = tok[k].get<double>();
                vecs.push_back(std::move(t));
            }
            doc.sentences.push_back(std::move(vecs));
        }
        if (j.contains("true_z")) {
            IndicatorAssignment z;
            for (const auto& b : j["true_z"]) z.push_back(b.get<int>() ? 1 : 0);
            corpus.true_z.push_back(std::move(z));
            any_true_z = true;
        }
        corpus.n_classes = std::max(corpus.n_classes, doc.label + 1);
        corpus.docs.push_back(std::move(doc));
    }
    if (any_true_z && corpus.true_z.size() != corpus.docs.size())
        throw std::runtime_error("read_vector_corpus: true_z present on some records only");
    corpus.validate();
    return corpus;
}

// Any corpus file: vector records load directly, text records go through the
// vocabulary (required for them).
inline Corpus read_corpus(const std::string& path, const Vocabulary* vocab = nullptr) {
    std::ifstream probe(path);
    if (!probe) throw std::runtime_error("read_corpus: cannot read " + path);
    std::string first;
    while (std::getline(probe, first) && first.empty()) {
    }
    nlohmann::json j = nlohmann::json::parse(first, nullptr, false);
    if (!j.is_discarded() && j.contains("sentences")) return read_vector_corpus(path);
    if (!vocab)
        throw std::runtime_error("read_corpus: " + path +
                                 " holds text records; an embedding table is required");
    return encode_corpus(read_raw_corpus(path), *vocab);
}

// Stable-sorts document indices by token count and slices consecutive
// batches; the batch order is then shuffled.
inline std::vector<std::vector<int>> batch_by_length(const std::vector<Document>& docs,
                                                     int batch_size, Rng& rng) {
    if (batch_size < 1) throw std::invalid_argument("batch_by_length: batch_size < 1");
    std::vector<int> order(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return docs[a].token_count() < docs[b].token_count();
    });
    std::vector<std::vector<int>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size)
        batches.emplace_back(order.begin() + start,
                             order.begin() + std::min(order.size(),
                                                      start + batch_size));
    rng.shuffle(batches);
    return batches;
}

}  // namespace emhrnn
