// Command-line front end: synthetic corpus generation, training under the
// exact / non-overlapping / local-bootstrap strategies, evaluation, and
// segmentation reports.
//
// Options may come from a JSON config file (--config); explicit flags always
// win, and unknown config keys are rejected. All randomness flows from
// --seed, so any command with a seed is end-to-end deterministic.
#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "emhrnn/analysis.hpp"
#include "emhrnn/archive.hpp"
#include "emhrnn/data_io.hpp"
#include "emhrnn/simgen.hpp"
#include "emhrnn/trainer.hpp"

using nlohmann::json;
using namespace emhrnn;

namespace {

// Binds flags and remembers them so config-file values can fill in whatever
// the command line left unset.
struct Registry {
    std::map<std::string, std::pair<CLI::Option*, std::function<void(const json&)>>> entries;

    template <class T>
    CLI::Option* bind(CLI::App& cmd, const std::string& name, T& field,
                      const std::string& help) {
        CLI::Option* opt = cmd.add_option("--" + name, field, help);
        entries[name] = {opt, [&field](const json& v) { field = v.get<T>(); }};
        return opt;
    }

    void merge(const json& cfg) {
        if (!cfg.is_object()) throw std::runtime_error("config file must hold a JSON object");
        for (auto it = cfg.begin(); it != cfg.end(); ++it) {
            auto found = entries.find(it.key());
            if (found == entries.end())
                throw std::runtime_error("config: unknown key \"" + it.key() + "\"");
            if (found->second.first->count() == 0) found->second.second(it.value());
        }
    }
};

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file " + path);
    json cfg = json::parse(in, nullptr, false);
    if (cfg.is_discarded()) throw std::runtime_error("config file " + path + " is not JSON");
    return cfg;
}

Strategy parse_strategy(const std::string& text, int& block_len) {
    if (text == "exact") return Strategy::exact_em;
    if (text == "local") return Strategy::local_bootstrap;
    if (text.rfind("nonoverlap:", 0) == 0) {
        block_len = std::stoi(text.substr(11));
        if (block_len < 1) throw std::runtime_error("strategy: block length must be >= 1");
        return Strategy::nonoverlap;
    }
    throw std::runtime_error("strategy must be exact, nonoverlap:<l>, or local (got \"" +
                             text + "\")");
}

void write_json_line(std::ostream& out, const json& j) { out << j.dump() << '\n'; }

json history_row(const EpochStats& e) {
    json row{{"epoch", e.epoch},
             {"strategy", e.strategy},
             {"q", e.q_sum},
             {"config_evals", e.config_evals},
             {"min_delta_q", e.min_delta_q},
             {"steps_accepted", e.steps_accepted},
             {"steps_skipped", e.steps_skipped}};
    if (!std::isnan(e.marginal_ll)) row["marginal_ll"] = e.marginal_ll;
    if (!std::isnan(e.recovery)) row["recovery"] = e.recovery;
    if (!std::isnan(e.recovery_final)) row["recovery_final"] = e.recovery_final;
    if (!std::isnan(e.accuracy)) row["accuracy"] = e.accuracy;
    return row;
}

// ------------------------------------------------------------------ simgen

struct SimgenOpts {
    std::uint64_t seed = 1;
    std::uint64_t teacher_seed = 0;  // 0: derived as seed + 1
    int n_train = 10000;
    int n_test = 1000;
    int d_token = 50;
    int teacher_dim = 50;
    double cue_scale = 3.0;
    std::string out = "simgen-out";
};

int run_simgen(const SimgenOpts& o) {
    SimgenConfig cfg;
    cfg.n_train = o.n_train;
    cfg.n_test = o.n_test;
    cfg.data_seed = o.seed;
    cfg.teacher_seed = o.teacher_seed ? o.teacher_seed : o.seed + 1;
    cfg.d_token = static_cast<std::size_t>(o.d_token);
    cfg.teacher_d_h = static_cast<std::size_t>(o.teacher_dim);
    cfg.cue_scale = o.cue_scale;

    auto data = generate_corpus(cfg);
    std::filesystem::create_directories(o.out);
    const std::string train_path = o.out + "/train.jsonl";
    const std::string test_path = o.out + "/test.jsonl";
    write_vector_corpus(train_path, data.train);
    write_vector_corpus(test_path, data.test);

    json manifest{{"n_train", cfg.n_train},
                  {"n_test", cfg.n_test},
                  {"data_seed", cfg.data_seed},
                  {"teacher_seed", cfg.teacher_seed},
                  {"teacher_seed_used", data.teacher_seed_used},
                  {"d_token", o.d_token},
                  {"teacher_dim", o.teacher_dim},
                  {"cue_scale", cfg.cue_scale},
                  {"n_classes", cfg.n_classes},
                  {"train_file", "train.jsonl"},
                  {"test_file", "test.jsonl"}};
    std::ofstream mf(o.out + "/manifest.json", std::ios::binary);
    if (!mf) throw std::runtime_error("cannot write " + o.out + "/manifest.json");
    mf << manifest.dump(2) << '\n';

    std::cout << "wrote " << data.train.docs.size() << " train and "
              << data.test.docs.size() << " test documents to " << o.out << "\n";
    return 0;
}

// ------------------------------------------------------------------ shared

struct CorpusOpts {
    std::string corpus;
    std::string embeddings;
    int d_emb = 100;
};

Corpus load_corpus_opts(const CorpusOpts& o) {
    if (o.embeddings.empty()) return read_corpus(o.corpus);
    Vocabulary vocab = load_embeddings(o.embeddings, static_cast<std::size_t>(o.d_emb));
    return read_corpus(o.corpus, &vocab);
}

// ------------------------------------------------------------------ train

struct TrainOpts {
    CorpusOpts data;
    std::string strategy = "exact";
    std::uint64_t seed = 1;
    int epochs = 1;
    double lr = 0.0;  // 0: grid selection on a validation split
    double momentum = 0.9;
    int batch = 64;
    int m_step_passes = 1;
    int k_outer = 1;
    int m_inner = 1;
    int hidden_dim = 50;
    int classes = 0;  // 0: from the corpus
    int max_exact_n = 16;
    int threads = 1;
    std::string model_in;
    std::string out = "model.json";
    std::string history;
    bool quiet_metrics = false;
};

TrainConfig make_train_config(const TrainOpts& o) {
    TrainConfig cfg;
    cfg.strategy = parse_strategy(o.strategy, cfg.block_len);
    cfg.learning_rate = o.lr > 0.0 ? o.lr : 0.1;
    cfg.momentum = o.momentum;
    cfg.batch_size = o.batch;
    cfg.m_step_passes = o.m_step_passes;
    cfg.outer_iters = o.k_outer;
    cfg.inner_iters = o.m_inner;
    cfg.epochs = o.epochs;
    cfg.seed = o.seed;
    cfg.max_exact_n = o.max_exact_n;
    cfg.threads = o.threads;
    cfg.track_metrics = !o.quiet_metrics;
    cfg.validate();
    return cfg;
}

ModelDims dims_for(const Corpus& corpus, const TrainOpts& o) {
    if (corpus.docs.empty()) throw std::runtime_error("train: corpus is empty");
    ModelDims dims;
    dims.d_emb = corpus.docs[0].sentences[0][0].size();
    dims.d_h = static_cast<std::size_t>(o.hidden_dim);
    dims.d_a = static_cast<std::size_t>(o.hidden_dim);
    dims.n_classes = o.classes > 0 ? o.classes : corpus.n_classes;
    if (dims.n_classes < 2) throw std::runtime_error("train: need at least two classes");
    for (const auto& doc : corpus.docs)
        if (doc.label < 0 || doc.label >= dims.n_classes)
            throw std::runtime_error("train: document label outside 1.." +
                                     std::to_string(dims.n_classes));
    return dims;
}

// Grid selection per the validation protocol: 10% of the training documents
// held out, one short run per candidate rate, best validation accuracy wins.
double select_learning_rate(const Corpus& corpus, const ModelDims& dims,
                            const TrainConfig& base, std::uint64_t seed) {
    const double grid[] = {0.1, 0.05, 0.01};
    std::vector<int> order(corpus.docs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(seed ^ 0x76a5c3000fuLL);
    rng.shuffle(order);
    const std::size_t n_val = std::max<std::size_t>(1, order.size() / 10);

    Corpus fit, val;
    fit.n_classes = val.n_classes = corpus.n_classes;
    for (std::size_t i = 0; i < order.size(); ++i) {
        Corpus& target = i < n_val ? val : fit;
        target.docs.push_back(corpus.docs[order[i]]);
        if (corpus.has_true_z()) target.true_z.push_back(corpus.true_z[order[i]]);
    }

    TrainConfig probe = base;
    probe.epochs = 1;
    probe.outer_iters = 1;
    probe.inner_iters = 1;
    probe.track_metrics = false;

    double best_lr = grid[0];
    double best_acc = -1.0;
    for (double lr : grid) {
        probe.learning_rate = lr;
        ModelParams params(dims);
        params.init(seed);
        train(params, fit, probe);
        const double acc = corpus_accuracy(params, val, probe.threads);
        std::cout << "lr probe " << lr << ": validation accuracy " << acc << "\n";
        if (acc > best_acc) {
            best_acc = acc;
            best_lr = lr;
        }
    }
    std::cout << "selected lr " << best_lr << "\n";
    return best_lr;
}

int run_train(const TrainOpts& o) {
    if (o.data.corpus.empty()) throw std::runtime_error("train: --corpus is required");
    Corpus corpus = load_corpus_opts(o.data);
    TrainConfig cfg = make_train_config(o);
    ModelDims dims = dims_for(corpus, o);
    if (o.lr <= 0.0) cfg.learning_rate = select_learning_rate(corpus, dims, cfg, o.seed);

    cfg.progress = [](const EpochStats& e) {
        std::cout << "epoch " << e.epoch << " [" << e.strategy << "] q=" << e.q_sum;
        if (!std::isnan(e.marginal_ll)) std::cout << " marginal_ll=" << e.marginal_ll;
        std::cout << " config_evals=" << e.config_evals;
        if (!std::isnan(e.recovery)) std::cout << " recovery=" << e.recovery;
        if (!std::isnan(e.accuracy)) std::cout << " accuracy=" << e.accuracy;
        std::cout << std::endl;
    };
    ModelParams params(dims);
    params.init(cfg.seed);
    if (!o.model_in.empty()) {
        ModelArchive warm = load_model(o.model_in);
        if (warm.params.dims.d_emb != dims.d_emb || warm.params.dims.d_h != dims.d_h ||
            warm.params.dims.n_classes != dims.n_classes)
            throw std::runtime_error("train: --model-in dimensions do not match");
        params = std::move(warm.params);
    }
    TrainHistory history = train(params, corpus, cfg);

    json meta{{"strategy", strategy_name(cfg.strategy, cfg.block_len)},
              {"seed", cfg.seed},
              {"epochs", cfg.epochs},
              {"outer_iters", cfg.outer_iters},
              {"inner_iters", cfg.inner_iters},
              {"learning_rate", cfg.learning_rate},
              {"momentum", cfg.momentum},
              {"batch_size", cfg.batch_size},
              {"total_config_evals", history.total_config_evals},
              {"corpus", o.data.corpus}};
    save_model(o.out, params, meta);

    if (!o.history.empty()) {
        std::ofstream hf(o.history, std::ios::binary);
        if (!hf) throw std::runtime_error("cannot write history file " + o.history);
        for (const auto& e : history.epochs) write_json_line(hf, history_row(e));
    }

    std::cout << "saved model to " << o.out << "\n";
    return 0;
}

// ------------------------------------------------------------------- eval

struct EvalOpts {
    CorpusOpts data;
    std::string model;
    std::string out;
    int threads = 1;
};

int run_eval(const EvalOpts& o) {
    if (o.model.empty() || o.data.corpus.empty())
        throw std::runtime_error("eval: --model and --corpus are required");
    ModelArchive archive = load_model(o.model);
    Corpus corpus = load_corpus_opts(o.data);
    if (corpus.docs.empty()) throw std::runtime_error("eval: corpus is empty");
    const int C = archive.params.dims.n_classes;
    for (const auto& doc : corpus.docs) {
        if (doc.sentences[0][0].size() != archive.params.dims.d_emb)
            throw std::runtime_error("eval: token dimension mismatch with the model");
        if (doc.label < 0 || doc.label >= C)
            throw std::runtime_error("eval: document label outside the model's classes");
    }

    std::vector<int> class_counts(C, 0), class_correct(C, 0);
    std::size_t correct = 0;
    for (const auto& doc : corpus.docs) {
        const int predicted = predict(archive.params, doc).label;
        ++class_counts[doc.label];
        if (predicted == doc.label) {
            ++correct;
            ++class_correct[doc.label];
        }
    }

    json metrics{{"doc_count", corpus.docs.size()},
                 {"accuracy", double(correct) / double(corpus.docs.size())},
                 {"class_counts", class_counts},
                 {"class_correct", class_correct}};
    if (corpus.has_true_z()) {
        auto rec = recovery_stats(archive.params, corpus);
        metrics["recovery"] = rec.overall;
        metrics["recovery_final"] = rec.sentence_final;
    }
    write_json_line(std::cout, metrics);
    if (!o.out.empty()) {
        std::ofstream out(o.out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + o.out);
        write_json_line(out, metrics);
    }
    return 0;
}

// ----------------------------------------------------------------- segment

struct SegmentOpts {
    CorpusOpts data;
    std::string model;
    std::string out;
    int max_docs = 0;   // 0: all
    int show = 5;       // rendered documents on stdout
};

int run_segment(const SegmentOpts& o) {
    if (o.model.empty() || o.data.corpus.empty())
        throw std::runtime_error("segment: --model and --corpus are required");
    ModelArchive archive = load_model(o.model);

    // token strings are available for text corpora only
    std::vector<std::vector<std::vector<std::string>>> token_lists;
    Corpus corpus;
    {
        std::ifstream probe(o.data.corpus);
        if (!probe) throw std::runtime_error("cannot read corpus " + o.data.corpus);
        std::string first;
        while (std::getline(probe, first) && first.empty()) {
        }
        json j = json::parse(first, nullptr, false);
        const bool text_corpus = !j.is_discarded() && j.contains("text");
        if (text_corpus) {
            if (o.data.embeddings.empty())
                throw std::runtime_error("segment: text corpus needs --embeddings");
            RawCorpus raw = read_raw_corpus(o.data.corpus);
            Vocabulary vocab =
                load_embeddings(o.data.embeddings, static_cast<std::size_t>(o.data.d_emb));
            corpus = encode_corpus(raw, vocab);
            for (const auto& r : raw.records)
                token_lists.push_back(split_sentences_tokenize(r.text));
        } else {
            corpus = read_vector_corpus(o.data.corpus);
        }
    }
    if (corpus.docs.empty()) throw std::runtime_error("segment: corpus is empty");

    std::ofstream report;
    if (!o.out.empty()) {
        report.open(o.out, std::ios::binary);
        if (!report) throw std::runtime_error("cannot write " + o.out);
    }

    PhraseLengthStats stats;
    const std::size_t limit = o.max_docs > 0
                                  ? std::min<std::size_t>(o.max_docs, corpus.docs.size())
                                  : corpus.docs.size();
    for (std::size_t d = 0; d < limit; ++d) {
        const Document& doc = corpus.docs[d];
        auto pred = predict(archive.params, doc);
        const auto* tokens = token_lists.empty() ? nullptr : &token_lists[d];
        const std::string rendered = render_segmented(doc, pred.z_hat, tokens);
        auto doc_stats = phrase_length_stats(doc, pred.z_hat);
        stats.merge(doc_stats);
        auto top = top_attention(pred.trace);

        if (static_cast<int>(d) < o.show)
            std::cout << "doc " << d << ": " << rendered << "\n";

        if (report.is_open()) {
            json segments = json::array();
            for (std::size_t i = 0; i < pred.trace.sentences.size(); ++i) {
                json sent{{"beta", pred.trace.sentences[i].beta},
                          {"segments", json::array()}};
                for (const auto& s : pred.trace.sentences[i].segments)
                    sent["segments"].push_back({{"begin", s.range.begin},
                                                {"end", s.range.end},
                                                {"alpha", s.alpha}});
                segments.push_back(std::move(sent));
            }
            json row{{"doc_id", d},
                     {"predicted", pred.label + 1},
                     {"rendered", rendered},
                     {"pi", pred.trace.pi},
                     {"gamma", pred.trace.gamma},
                     {"sentences", std::move(segments)},
                     {"top_attention",
                      {{"sentence", top.sentence},
                       {"segment_begin", top.range.begin},
                       {"segment_end", top.range.end},
                       {"token", top.token}}}};
            write_json_line(report, row);
        }
    }

    json hist = json::object();
    for (const auto& [len, count] : stats.histogram) hist[std::to_string(len)] = count;
    json summary{{"documents", limit},
                 {"phrases", stats.count},
                 {"mean_length", stats.mean()},
                 {"min_length", stats.min},
                 {"max_length", stats.max},
                 {"histogram", hist}};
    if (report.is_open()) write_json_line(report, json{{"summary", summary}});
    std::cout << "phrases: " << stats.count << ", mean length " << stats.mean()
              << ", min " << stats.min << ", max " << stats.max << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EM-trained hierarchical document classifier with latent phrase boundaries"};
    app.require_subcommand(1);

    SimgenOpts sim;
    TrainOpts tr;
    EvalOpts ev;
    SegmentOpts seg;
    std::string config_path;
    Registry rsim, rtrain, reval, rseg;

    CLI::App* csim =
        app.add_subcommand("simgen", "generate the synthetic indicator-recovery corpus");
    csim->add_option("--config", config_path, "JSON config file; flags win");
    rsim.bind(*csim, "seed", sim.seed, "data seed");
    rsim.bind(*csim, "teacher-seed", sim.teacher_seed, "teacher seed (default: seed + 1)");
    rsim.bind(*csim, "n-train", sim.n_train, "training documents");
    rsim.bind(*csim, "n-test", sim.n_test, "test documents");
    rsim.bind(*csim, "d-token", sim.d_token, "token vector dimension");
    rsim.bind(*csim, "teacher-dim", sim.teacher_dim, "teacher hidden dimension");
    rsim.bind(*csim, "cue-scale", sim.cue_scale, "boundary cue strength");
    rsim.bind(*csim, "out", sim.out, "output directory");

    CLI::App* ctrain = app.add_subcommand("train", "train a model");
    ctrain->add_option("--config", config_path, "JSON config file; flags win");
    rtrain.bind(*ctrain, "corpus", tr.data.corpus, "corpus file");
    rtrain.bind(*ctrain, "embeddings", tr.data.embeddings, "embedding table for text corpora");
    rtrain.bind(*ctrain, "d-emb", tr.data.d_emb, "embedding dimension (text corpora)");
    rtrain.bind(*ctrain, "strategy", tr.strategy, "exact | nonoverlap:<l> | local");
    rtrain.bind(*ctrain, "seed", tr.seed, "seed for init, batching, and sampling");
    rtrain.bind(*ctrain, "epochs", tr.epochs, "epochs (exact / nonoverlap)");
    rtrain.bind(*ctrain, "lr", tr.lr, "learning rate; omit to grid-select on a 10% split");
    rtrain.bind(*ctrain, "momentum", tr.momentum, "momentum");
    rtrain.bind(*ctrain, "batch", tr.batch, "mini-batch size");
    rtrain.bind(*ctrain, "m-step-passes", tr.m_step_passes, "ascent passes per M-step");
    rtrain.bind(*ctrain, "K", tr.k_outer, "outer bootstrap iterations (local)");
    rtrain.bind(*ctrain, "M", tr.m_inner, "inner bootstrap iterations (local)");
    rtrain.bind(*ctrain, "hidden-dim", tr.hidden_dim, "hidden/attention dimension");
    rtrain.bind(*ctrain, "classes", tr.classes, "class count (default: from corpus)");
    rtrain.bind(*ctrain, "max-exact-n", tr.max_exact_n, "exact-enumeration limit");
    rtrain.bind(*ctrain, "threads", tr.threads, "worker threads");
    rtrain.bind(*ctrain, "model-in", tr.model_in, "warm-start from an existing archive");
    rtrain.bind(*ctrain, "out", tr.out, "model archive path");
    rtrain.bind(*ctrain, "history", tr.history, "per-epoch history file (JSON lines)");
    rtrain.bind(*ctrain, "quiet-metrics", tr.quiet_metrics,
                "skip per-epoch recovery/accuracy");

    CLI::App* ceval = app.add_subcommand("eval", "evaluate a model on a corpus");
    ceval->add_option("--config", config_path, "JSON config file; flags win");
    reval.bind(*ceval, "model", ev.model, "model archive");
    reval.bind(*ceval, "corpus", ev.data.corpus, "corpus file");
    reval.bind(*ceval, "embeddings", ev.data.embeddings, "embedding table for text corpora");
    reval.bind(*ceval, "d-emb", ev.data.d_emb, "embedding dimension (text corpora)");
    reval.bind(*ceval, "threads", ev.threads, "worker threads");
    reval.bind(*ceval, "out", ev.out, "metrics output file");

    CLI::App* cseg =
        app.add_subcommand("segment", "dump imputed segmentations and attention");
    cseg->add_option("--config", config_path, "JSON config file; flags win");
    rseg.bind(*cseg, "model", seg.model, "model archive");
    rseg.bind(*cseg, "corpus", seg.data.corpus, "corpus file");
    rseg.bind(*cseg, "embeddings", seg.data.embeddings, "embedding table for text corpora");
    rseg.bind(*cseg, "d-emb", seg.data.d_emb, "embedding dimension (text corpora)");
    rseg.bind(*cseg, "max-docs", seg.max_docs, "limit processed documents (0 = all)");
    rseg.bind(*cseg, "show", seg.show, "rendered documents printed to stdout");
    rseg.bind(*cseg, "out", seg.out, "report file (JSON lines)");

    try {
        app.parse(argc, argv);
        if (!config_path.empty()) {
            json cfg = load_config(config_path);
            if (csim->parsed()) rsim.merge(cfg);
            if (ctrain->parsed()) rtrain.merge(cfg);
            if (ceval->parsed()) reval.merge(cfg);
            if (cseg->parsed()) rseg.merge(cfg);
        }
        if (csim->parsed()) return run_simgen(sim);
        if (ctrain->parsed()) return run_train(tr);
        if (ceval->parsed()) return run_eval(ev);
        if (cseg->parsed()) return run_segment(seg);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
