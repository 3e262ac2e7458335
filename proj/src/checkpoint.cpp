#include "recon/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace recon {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'A', 'R', 'C', 'K', '0', '0', '0', '1'};

void require_little_endian() {
    uint16_t probe = 1;
    uint8_t first;
    std::memcpy(&first, &probe, 1);
    if (first != 1) throw std::runtime_error("checkpoint: only little-endian hosts are supported");
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

json config_json(const MapConfig& c) {
    return json{{"bounds_min", {c.bounds.min.x, c.bounds.min.y, c.bounds.min.z}},
                {"bounds_max", {c.bounds.max.x, c.bounds.max.y, c.bounds.max.z}},
                {"n_bins", c.n_bins},
                {"levels", c.levels},
                {"feats_per_level", c.feats_per_level},
                {"log2_table", c.log2_table},
                {"res_min", c.res_min},
                {"res_max", c.res_max},
                {"h_dim", c.h_dim},
                {"mlp_width", c.mlp_width},
                {"mlp_depth", c.mlp_depth},
                {"trunc", c.trunc},
                {"u_voxel", c.u_voxel},
                {"sigma_raw_init", c.sigma_raw_init},
                {"uncertainty_mode", c.uncertainty_mode == UncertaintyMode::Grid ? "grid" : "net"}};
}

MapConfig config_from_json(const json& j) {
    MapConfig c;
    auto bmin = j.at("bounds_min"), bmax = j.at("bounds_max");
    c.bounds.min = {bmin[0].get<double>(), bmin[1].get<double>(), bmin[2].get<double>()};
    c.bounds.max = {bmax[0].get<double>(), bmax[1].get<double>(), bmax[2].get<double>()};
    c.n_bins = j.at("n_bins").get<int>();
    c.levels = j.at("levels").get<int>();
    c.feats_per_level = j.at("feats_per_level").get<int>();
    c.log2_table = j.at("log2_table").get<int>();
    c.res_min = j.at("res_min").get<int>();
    c.res_max = j.at("res_max").get<int>();
    c.h_dim = j.at("h_dim").get<int>();
    c.mlp_width = j.at("mlp_width").get<int>();
    c.mlp_depth = j.at("mlp_depth").get<int>();
    c.trunc = j.at("trunc").get<double>();
    c.u_voxel = j.at("u_voxel").get<double>();
    c.sigma_raw_init = j.at("sigma_raw_init").get<double>();
    c.uncertainty_mode = j.at("uncertainty_mode").get<std::string>() == "net"
                             ? UncertaintyMode::Net
                             : UncertaintyMode::Grid;
    return c;
}

struct ArrayDesc {
    std::string name;
    std::string dtype;  // f32 | u8
    uint64_t count;
};

std::vector<ArrayDesc> expected_arrays(const ParamLayout& layout) {
    std::vector<ArrayDesc> arrays;
    for (size_t l = 0; l + 1 < layout.grid_level_offset.size(); ++l)
        arrays.push_back({"grid.level" + std::to_string(l), "f32",
                          layout.grid_level_offset[l + 1] - layout.grid_level_offset[l]});
    arrays.push_back({"decoder.geometry", "f32", layout.geo.param_count()});
    arrays.push_back({"decoder.color", "f32", layout.color.param_count()});
    if (layout.has_unet) arrays.push_back({"decoder.uncertainty", "f32", layout.unet.param_count()});
    arrays.push_back({"usigma.raw", "f32", layout.ugrid.count()});
    arrays.push_back({"adam.m", "f32", layout.total});
    arrays.push_back({"adam.v", "f32", layout.total});
    arrays.push_back({"mask.observed", "u8", layout.ugrid.count()});
    arrays.push_back({"mask.unreachable", "u8", layout.ugrid.count()});
    return arrays;
}

}  // namespace

void save_checkpoint(const MapModel& map, const OptimState& optim, const std::string& path) {
    require_little_endian();
    json manifest;
    manifest["format_version"] = 1;
    manifest["byte_order"] = "little";
    manifest["config"] = config_json(map.cfg);
    manifest["config_hash"] = fnv1a(manifest["config"].dump());
    manifest["adam"] = {{"beta1", optim.cfg.beta1},       {"beta2", optim.cfg.beta2},
                        {"eps", optim.cfg.eps},           {"lr_grid", optim.cfg.lr_grid},
                        {"lr_decoder", optim.cfg.lr_decoder}, {"lr_sigma_raw", optim.cfg.lr_sigma_raw}};
    manifest["step"] = optim.step;
    json arr = json::array();
    for (const auto& a : expected_arrays(map.layout))
        arr.push_back({{"name", a.name}, {"dtype", a.dtype}, {"count", a.count}});
    manifest["arrays"] = arr;
    std::string header = manifest.dump();

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    uint64_t hlen = header.size();
    bool ok = std::fwrite(kMagic, 1, 8, f) == 8 && std::fwrite(&hlen, 8, 1, f) == 1 &&
              std::fwrite(header.data(), 1, hlen, f) == hlen;
    ok = ok && std::fwrite(map.params.data(), sizeof(float), map.params.size(), f) ==
                   map.params.size();
    ok = ok && std::fwrite(optim.m.data(), sizeof(float), optim.m.size(), f) == optim.m.size();
    ok = ok && std::fwrite(optim.v.data(), sizeof(float), optim.v.size(), f) == optim.v.size();
    ok = ok && std::fwrite(map.observed.data(), 1, map.observed.size(), f) == map.observed.size();
    ok = ok && std::fwrite(map.unreachable.data(), 1, map.unreachable.size(), f) ==
                   map.unreachable.size();
    if (std::fclose(f) != 0) ok = false;
    if (!ok) throw std::runtime_error("save_checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    require_little_endian();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    uint64_t hlen = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
    if (hlen > (1ull << 24)) throw std::runtime_error("load_checkpoint: corrupt header length");
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("load_checkpoint: truncated manifest in " + path);

    json manifest = json::parse(header);
    if (manifest.at("format_version").get<int>() != 1)
        throw std::runtime_error("load_checkpoint: unsupported format version");
    if (manifest.at("byte_order").get<std::string>() != "little")
        throw std::runtime_error("load_checkpoint: unsupported byte order");

    MapConfig cfg = config_from_json(manifest.at("config"));
    uint64_t expect_hash = fnv1a(config_json(cfg).dump());
    if (manifest.contains("config_hash") && manifest["config_hash"].get<uint64_t>() != expect_hash)
        throw std::runtime_error("load_checkpoint: config hash mismatch");

    Checkpoint ck;
    ck.map.cfg = cfg;
    ck.map.layout = make_layout(cfg);

    auto expected = expected_arrays(ck.map.layout);
    const json& arr = manifest.at("arrays");
    if (arr.size() != expected.size())
        throw std::runtime_error("load_checkpoint: array list length mismatch");
    uint64_t float_count = 0, byte_count = 0;
    for (size_t i = 0; i < expected.size(); ++i) {
        const auto& want = expected[i];
        std::string name = arr[i].at("name").get<std::string>();
        uint64_t count = arr[i].at("count").get<uint64_t>();
        std::string dtype = arr[i].at("dtype").get<std::string>();
        if (name != want.name || dtype != want.dtype)
            throw std::runtime_error("load_checkpoint: unexpected array '" + name + "'");
        if (count != want.count)
            throw std::runtime_error("load_checkpoint: dimension mismatch for array '" + name +
                                     "' (got " + std::to_string(count) + ", expected " +
                                     std::to_string(want.count) + ")");
        (dtype == "f32" ? float_count : byte_count) += count;
    }

    // Read everything before committing any state: no partial models.
    std::vector<float> floats(float_count);
    std::vector<uint8_t> bytes(byte_count);
    in.read(reinterpret_cast<char*>(floats.data()),
            static_cast<std::streamsize>(float_count * sizeof(float)));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(byte_count));
    if (!in || in.gcount() != static_cast<std::streamsize>(byte_count))
        throw std::runtime_error("load_checkpoint: truncated data in " + path);
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("load_checkpoint: trailing bytes in " + path);

    size_t total = ck.map.layout.total;
    ck.map.params.assign(floats.begin(), floats.begin() + total);
    ck.optim.cfg.beta1 = manifest.at("adam").at("beta1").get<double>();
    ck.optim.cfg.beta2 = manifest.at("adam").at("beta2").get<double>();
    ck.optim.cfg.eps = manifest.at("adam").at("eps").get<double>();
    ck.optim.cfg.lr_grid = manifest.at("adam").at("lr_grid").get<double>();
    ck.optim.cfg.lr_decoder = manifest.at("adam").at("lr_decoder").get<double>();
    ck.optim.cfg.lr_sigma_raw = manifest.at("adam").at("lr_sigma_raw").get<double>();
    ck.optim.step = manifest.at("step").get<int64_t>();
    ck.optim.m.assign(floats.begin() + total, floats.begin() + 2 * total);
    ck.optim.v.assign(floats.begin() + 2 * total, floats.begin() + 3 * total);
    size_t nu = ck.map.layout.ugrid.count();
    ck.map.observed.assign(bytes.begin(), bytes.begin() + nu);
    ck.map.unreachable.assign(bytes.begin() + nu, bytes.end());
    return ck;
}

}  // namespace recon
