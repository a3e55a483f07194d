#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "emhrnn/data_io.hpp"
#include "emhrnn/simgen.hpp"

using namespace emhrnn;

namespace {

SimgenConfig small_cfg(int n_train = 300, int n_test = 50) {
    SimgenConfig cfg;
    cfg.n_train = n_train;
    cfg.n_test = n_test;
    cfg.data_seed = 11;
    cfg.teacher_seed = 12;
    cfg.d_token = 12;  // keeps unit tests quick; the experiment uses 50
    cfg.teacher_d_h = 8;
    return cfg;
}

}  // namespace

TEST_CASE("default-scale corpus: counts and indicator totals") {
    SimgenConfig cfg;
    cfg.n_train = 10000;
    cfg.n_test = 1000;
    cfg.d_token = 8;  // count checks only
    cfg.teacher_d_h = 4;
    auto data = generate_corpus(cfg);
    CHECK(data.train.docs.size() == 10000);
    CHECK(data.test.docs.size() == 1000);
    std::size_t train_bits = 0, test_bits = 0;
    for (const auto& z : data.train.true_z) train_bits += z.size();
    for (const auto& z : data.test.true_z) test_bits += z.size();
    CHECK(train_bits == 100000);  // ten indicators per document
    CHECK(test_bits == 10000);

    // a head that never fires: sentence finals are imputed by the static
    // close, interior bits are a fair coin
    ModelParams p(ModelDims{8, 4, 4, 5});
    p.init(5);
    p.w_pi.value.fill(0.0);
    p.b_pi.value.v[0] = -10.0;
    CHECK(recovery_accuracy(p, data.train) == doctest::Approx(0.6).epsilon(0.0167));
}

TEST_CASE("every document shares the end-of-sentence vector bitwise") {
    auto data = generate_corpus(small_cfg());
    const Tensor& eos = data.train.docs[0].sentences[0][4];
    for (const Corpus* corpus : {&data.train, &data.test})
        for (const auto& doc : corpus->docs) {
            CHECK(doc.sentences[0][4].v == eos.v);
            CHECK(doc.sentences[1][4].v == eos.v);
        }
    // and the true indicators are forced on there
    for (const auto& z : data.train.true_z) {
        CHECK(z[4] == 1);
        CHECK(z[9] == 1);
    }
}

TEST_CASE("document shape is two sentences of five tokens") {
    auto data = generate_corpus(small_cfg(50, 10));
    for (const auto& doc : data.train.docs) {
        REQUIRE(doc.sentences.size() == 2);
        CHECK(doc.sentences[0].size() == 5);
        CHECK(doc.sentences[1].size() == 5);
    }
}

TEST_CASE("same seeds regenerate bit-identical corpora") {
    auto a = generate_corpus(small_cfg());
    auto b = generate_corpus(small_cfg());
    REQUIRE(a.train.docs.size() == b.train.docs.size());
    for (std::size_t d = 0; d < a.train.docs.size(); ++d) {
        CHECK(a.train.docs[d].label == b.train.docs[d].label);
        CHECK(a.train.true_z[d] == b.train.true_z[d]);
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t j = 0; j < 5; ++j)
                CHECK(a.train.docs[d].sentences[s][j].v ==
                      b.train.docs[d].sentences[s][j].v);
    }
    CHECK(a.teacher_seed_used == b.teacher_seed_used);
}

TEST_CASE("teacher labels are deterministic and non-degenerate") {
    auto data = generate_corpus(small_cfg(500, 50));
    std::vector<int> counts(5, 0);
    for (std::size_t d = 0; d < data.train.docs.size(); ++d) {
        const auto& doc = data.train.docs[d];
        CHECK(teacher_label(data.teacher, doc, data.train.true_z[d]) == doc.label);
        CHECK(doc.label >= 0);
        CHECK(doc.label < 5);
        ++counts[doc.label];
    }
    for (int c : counts) CHECK(c >= static_cast<int>(0.02 * 500));  // every class occurs
}

TEST_CASE("non-final indicators are close to a fair coin") {
    auto data = generate_corpus(small_cfg(2000, 10));
    std::size_t on = 0, total = 0;
    for (const auto& z : data.train.true_z)
        for (std::size_t t = 0; t < z.size(); ++t) {
            if (t == 4 || t == 9) continue;
            on += z[t];
            ++total;
        }
    CHECK(double(on) / double(total) == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("recovery accuracy: perfect and complemented imputations") {
    auto data = generate_corpus(small_cfg(50, 10));
    std::vector<IndicatorAssignment> complement;
    for (const auto& z : data.train.true_z) {
        IndicatorAssignment c(z.size());
        for (std::size_t t = 0; t < z.size(); ++t) c[t] = 1 - z[t];
        complement.push_back(c);
    }
    CHECK(indicator_match(data.train.true_z, data.train.true_z) == doctest::Approx(1.0));
    CHECK(indicator_match(complement, data.train.true_z) == doctest::Approx(0.0));
}

TEST_CASE("corpus serialization round-trips exactly") {
    auto data = generate_corpus(small_cfg(20, 5));
    const std::string path = "simgen_roundtrip_test.jsonl";
    write_vector_corpus(path, data.train);
    Corpus loaded = read_vector_corpus(path);

    REQUIRE(loaded.docs.size() == data.train.docs.size());
    CHECK(loaded.n_classes <= 5);
    for (std::size_t d = 0; d < loaded.docs.size(); ++d) {
        CHECK(loaded.docs[d].label == data.train.docs[d].label);
        CHECK(loaded.true_z[d] == data.train.true_z[d]);
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t j = 0; j < 5; ++j)
                CHECK(loaded.docs[d].sentences[s][j].v ==
                      data.train.docs[d].sentences[s][j].v);  // bitwise
    }

    // byte-identical rewrite
    const std::string path2 = "simgen_roundtrip_test2.jsonl";
    write_vector_corpus(path2, loaded);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}
