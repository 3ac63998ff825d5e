#include "mssm/diff/serialize.hpp"

#include <fstream>

#include <json.hpp>

namespace mssm::diff {

using nlohmann::json;

namespace {

void write_block(std::ofstream& bin, const Tensor& t, json& entries, const std::string& name,
                 std::int64_t& offset) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["count"] = t.numel();
    entries.push_back(e);
    bin.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
    offset += t.numel();
}

Tensor read_block(std::ifstream& bin, const json& e) {
    std::vector<std::int64_t> shape = e.at("shape").get<std::vector<std::int64_t>>();
    Tensor t(shape);
    bin.seekg(static_cast<std::streamoff>(e.at("offset").get<std::int64_t>() *
                                          static_cast<std::int64_t>(sizeof(double))));
    bin.read(reinterpret_cast<char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!bin) throw CheckpointError("checkpoint payload truncated at " + e.at("name").get<std::string>());
    return t;
}

}  // namespace

void save_params(ParamStore& store, const std::string& path_stem, const std::string& extra_json) {
    std::ofstream bin(path_stem + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw CheckpointError("cannot open " + path_stem + ".bin for writing");
    json manifest;
    manifest["format"] = "mssm-checkpoint-v1";
    manifest["dtype"] = "float64-le";
    json entries = json::array();
    std::int64_t offset = 0;
    for (Param* p : store.all()) {
        write_block(bin, p->value, entries, p->name, offset);
        if (p->adam_t > 0) {
            write_block(bin, p->adam_m, entries, p->name + "#adam_m", offset);
            write_block(bin, p->adam_v, entries, p->name + "#adam_v", offset);
            json e;
            e["name"] = p->name + "#adam_t";
            e["value"] = p->adam_t;
            entries.push_back(e);
        }
    }
    manifest["tensors"] = entries;
    if (!extra_json.empty()) manifest["extra"] = json::parse(extra_json);
    std::ofstream mf(path_stem + ".json", std::ios::trunc);
    if (!mf) throw CheckpointError("cannot open " + path_stem + ".json for writing");
    mf << manifest.dump(1) << "\n";
}

std::string load_params(ParamStore& store, const std::string& path_stem) {
    std::ifstream mf(path_stem + ".json");
    if (!mf) throw CheckpointError("cannot open manifest " + path_stem + ".json");
    json manifest = json::parse(mf);
    std::ifstream bin(path_stem + ".bin", std::ios::binary);
    if (!bin) throw CheckpointError("cannot open payload " + path_stem + ".bin");

    for (const auto& e : manifest.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const auto hash_pos = name.find('#');
        const std::string base = hash_pos == std::string::npos ? name : name.substr(0, hash_pos);
        Param* p = store.find(base);
        if (!p) throw CheckpointError("checkpoint names unknown parameter '" + base + "'");
        if (hash_pos == std::string::npos) {
            Tensor t = read_block(bin, e);
            if (!t.same_shape(p->value))
                throw CheckpointError("shape mismatch for '" + name + "': checkpoint " +
                                      Tensor::shape_str(t.shape()) + " vs model " +
                                      Tensor::shape_str(p->value.shape()));
            p->value = std::move(t);
        } else {
            const std::string kind = name.substr(hash_pos + 1);
            if (kind == "adam_m") p->adam_m = read_block(bin, e);
            else if (kind == "adam_v") p->adam_v = read_block(bin, e);
            else if (kind == "adam_t") p->adam_t = e.at("value").get<std::int64_t>();
            else throw CheckpointError("unknown auxiliary block '" + name + "'");
        }
        if (hash_pos != std::string::npos && p->adam_m.numel() > 0 &&
            !p->adam_m.same_shape(p->value))
            throw CheckpointError("optimizer state shape mismatch for '" + base + "'");
    }
    if (manifest.contains("extra")) return manifest["extra"].dump();
    return "";
}

}  // namespace mssm::diff
