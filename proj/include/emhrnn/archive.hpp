// Model archives: one self-describing JSON file holding every parameter
// tensor with its shape, the model dimensions, a format version, and training
// metadata. Serialization is deterministic (sorted keys, shortest
// round-tripping float form), so save -> load -> save is byte-identical.
#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "emhrnn/model.hpp"

namespace emhrnn {

constexpr int kArchiveVersion = 1;
constexpr const char* kArchiveFormat = "emhrnn-model";

inline void save_model(const std::string& path, ModelParams& params,
                       const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json j;
    j["format"] = kArchiveFormat;
    j["version"] = kArchiveVersion;
    j["dims"] = {{"d_emb", params.dims.d_emb},
                 {"d_h", params.dims.d_h},
                 {"d_a", params.dims.d_a},
                 {"n_classes", params.dims.n_classes}};
    j["meta"] = meta;
    nlohmann::json tensors = nlohmann::json::object();
    for (auto& [name, p] : params.named()) {
        nlohmann::json shape = nlohmann::json::array();
        shape.push_back(p->shape().dim[0]);
        if (p->shape().rank == 2) shape.push_back(p->shape().dim[1]);
        tensors[name] = {{"shape", shape}, {"values", p->value.v}};
    }
    j["tensors"] = std::move(tensors);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_model: cannot write " + path);
    out << j.dump() << '\n';
}

struct ModelArchive {
    ModelParams params;
    nlohmann::json meta;
};

inline ModelArchive load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_model: cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("load_model: " + path + " is not JSON");
    if (j.value("format", "") != kArchiveFormat)
        throw std::runtime_error("load_model: " + path + " is not a model archive");
    if (j.value("version", -1) != kArchiveVersion)
        throw std::runtime_error("load_model: unsupported archive version " +
                                 j["version"].dump() + " in " + path);

    ModelArchive archive;
    const auto& dims = j.at("dims");
    archive.params.resize(ModelDims{dims.at("d_emb").get<std::size_t>(),
                                    dims.at("d_h").get<std::size_t>(),
                                    dims.at("d_a").get<std::size_t>(),
                                    dims.at("n_classes").get<int>()});
    archive.meta = j.value("meta", nlohmann::json::object());

    const auto& tensors = j.at("tensors");
    std::size_t seen = 0;
    for (auto& [name, p] : archive.params.named()) {
        if (!tensors.contains(name))
            throw std::runtime_error("load_model: tensor " + name + " missing in " + path);
        const auto& t = tensors.at(name);
        const auto& shape = t.at("shape");
        Shape want = p->shape();
        const bool shape_ok =
            (shape.size() == want.rank) && shape[0].get<std::size_t>() == want.dim[0] &&
            (want.rank == 1 || shape[1].get<std::size_t>() == want.dim[1]);
        if (!shape_ok)
            throw std::runtime_error("load_model: tensor " + name + " has shape " +
                                     shape.dump() + ", expected " + want.str());
        const auto& values = t.at("values");
        if (values.size() != p->size())
            throw std::runtime_error("load_model: tensor " + name + " has " +
                                     std::to_string(values.size()) + " values");
        for (std::size_t k = 0; k < p->size(); ++k) p->value.v[k] = values[k].get<double>();
        ++seen;
    }
    if (tensors.size() != seen)
        throw std::runtime_error("load_model: " + path + " carries unknown tensors");
    return archive;
}

}  // namespace emhrnn
