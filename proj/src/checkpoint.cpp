#include "vmd/checkpoint.hpp"

#include "vmd/config.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace vmd {

namespace fs = std::filesystem;

namespace {

std::uint64_t mask_digest(const AttentionMasks& m) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto* v : {&m.encoder, &m.decoder}) {
        for (std::uint8_t b : *v) {
            h = (h ^ b) * 1099511628211ULL;
        }
    }
    return h;
}

nlohmann::json mask_meta(const BackboneConfig& c, const AttentionMasks& m) {
    return {{"seq_len", c.seq_len},
            {"block_len", c.block_len},
            {"num_blocks", c.num_blocks()},
            {"digest", std::to_string(mask_digest(m))}};
}

void put_le(std::vector<char>& out, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    if constexpr (std::endian::native == std::endian::big) {
        u = __builtin_bswap32(u);
    }
    char b[4];
    std::memcpy(b, &u, 4);
    out.insert(out.end(), b, b + 4);
}

float get_le(const char* p) {
    std::uint32_t u;
    std::memcpy(&u, p, 4);
    if constexpr (std::endian::native == std::endian::big) {
        u = __builtin_bswap32(u);
    }
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace

std::string save_checkpoint(const Backbone<float>& model, const std::string& dir, const std::string& tag,
                            const nlohmann::json& meta) {
    fs::create_directories(dir);
    const std::string blob_name = "ckpt_" + tag + ".bin";
    const fs::path manifest_path = fs::path(dir) / ("ckpt_" + tag + ".json");

    const auto& params = model.params();
    std::vector<char> blob;
    blob.reserve(params.numel() * 4);
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& v = params.var(i);
        entries.push_back({{"name", params.name(i)}, {"shape", v.shape()}, {"offset", blob.size()}, {"numel", v.size()}});
        for (float x : v.data()) {
            put_le(blob, x);
        }
    }
    nlohmann::json m{{"format", "vmd-checkpoint"},
                     {"version", 1},
                     {"dtype", "float32"},
                     {"byte_order", "little"},
                     {"blob", blob_name},
                     {"blob_bytes", blob.size()},
                     {"backbone", to_json(model.config())},
                     {"masks", mask_meta(model.config(), model.masks())},
                     {"params", entries},
                     {"meta", meta}};

    std::ofstream bin(fs::path(dir) / blob_name, std::ios::binary);
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!bin) {
        throw std::runtime_error("checkpoint: failed writing " + (fs::path(dir) / blob_name).string());
    }
    std::ofstream js(manifest_path);
    js << m.dump(2) << '\n';
    if (!js) {
        throw std::runtime_error("checkpoint: failed writing " + manifest_path.string());
    }
    return manifest_path.string();
}

nlohmann::json read_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open " + manifest_path);
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: " + manifest_path + " is not valid JSON: " + e.what());
    }
}

void load_checkpoint(Backbone<float>& model, const std::string& manifest_path) {
    const auto m = read_manifest(manifest_path);
    if (m.value("format", "") != "vmd-checkpoint" || m.value("version", 0) != 1) {
        throw std::runtime_error("checkpoint: " + manifest_path + " has an unknown format or version");
    }
    if (m.value("dtype", "") != "float32" || m.value("byte_order", "") != "little") {
        throw std::runtime_error("checkpoint: unsupported dtype/byte order in " + manifest_path);
    }
    const auto& cfg = model.config();
    const auto want = mask_meta(cfg, model.masks());
    const auto& have = m.at("masks");
    if (have != want) {
        throw std::runtime_error("checkpoint: attention-mask layout mismatch: checkpoint has seq_len=" +
                                 have.at("seq_len").dump() + " block_len=" + have.at("block_len").dump() +
                                 " num_blocks=" + have.at("num_blocks").dump() + ", model has seq_len=" +
                                 std::to_string(cfg.seq_len) + " block_len=" + std::to_string(cfg.block_len) +
                                 " num_blocks=" + std::to_string(cfg.num_blocks()));
    }

    auto& params = model.params();
    const auto& entries = m.at("params");
    if (entries.size() != params.size()) {
        throw std::runtime_error("checkpoint: " + std::to_string(entries.size()) + " parameters stored, model has " +
                                 std::to_string(params.size()));
    }
    std::size_t expected = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = entries[i];
        const std::string name = e.at("name").get<std::string>();
        if (name != params.name(i)) {
            throw std::runtime_error("checkpoint: parameter " + std::to_string(i) + " is '" + name +
                                     "', model expects '" + params.name(i) + "'");
        }
        const auto shape = e.at("shape").get<ad::Shape>();
        if (shape != params.var(i).shape()) {
            throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + ad::shape_str(shape) +
                                     ", model expects " + ad::shape_str(params.var(i).shape()));
        }
        if (e.at("offset").get<std::size_t>() != expected || e.at("numel").get<std::size_t>() != params.var(i).size()) {
            throw std::runtime_error("checkpoint: parameter '" + name + "' has an inconsistent offset or size");
        }
        expected += params.var(i).size() * 4;
    }
    if (m.at("blob_bytes").get<std::size_t>() != expected) {
        throw std::runtime_error("checkpoint: manifest blob_bytes disagrees with the parameter list");
    }

    const fs::path blob_path = fs::path(manifest_path).parent_path() / m.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) {
        throw std::runtime_error("checkpoint: cannot open blob " + blob_path.string());
    }
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (blob.size() != expected) {
        // name the first parameter that does not fit
        std::size_t offset = 0;
        std::string culprit = "?";
        for (std::size_t i = 0; i < params.size(); ++i) {
            offset += params.var(i).size() * 4;
            if (offset > blob.size()) {
                culprit = params.name(i);
                break;
            }
        }
        throw std::runtime_error("checkpoint: blob " + blob_path.string() + " has " + std::to_string(blob.size()) +
                                 " bytes, expected " + std::to_string(expected) +
                                 (blob.size() < expected ? " (truncated at parameter '" + culprit + "')" : ""));
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& data = params.var(i).mutable_value().data;
        for (auto& x : data) {
            x = get_le(blob.data() + offset);
            offset += 4;
        }
    }
}

Backbone<float> load_model(const std::string& manifest_path) {
    const auto m = read_manifest(manifest_path);
    Backbone<float> model(backbone_from_json(m.at("backbone")), 0);
    load_checkpoint(model, manifest_path);
    return model;
}

}  // namespace vmd
