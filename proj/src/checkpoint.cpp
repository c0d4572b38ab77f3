#include "gssplat/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace gssplat {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'G', 'S', 'N', 'N'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw data_error(std::string("checkpoint truncated reading ") + what);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& store) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open for writing: " + path);
    f.write(kMagic, 4);
    put<uint32_t>(f, kVersion);
    put<uint32_t>(f, static_cast<uint32_t>(store.items.size()));
    for (const auto& [name, t] : store.items) {
        put<uint32_t>(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), name.size());
        put<uint32_t>(f, static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) put<uint32_t>(f, static_cast<uint32_t>(d));
        f.write(reinterpret_cast<const char*>(t.data().data()), t.data().size() * sizeof(float));
    }
    if (!f) throw data_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, ParamStore<float>& store) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open for reading: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw data_error("bad checkpoint magic (not a GSNN file)");
    uint32_t version = get<uint32_t>(f, "version");
    if (version != kVersion) throw data_error("unsupported checkpoint version " + std::to_string(version));
    uint32_t count = get<uint32_t>(f, "count");
    size_t filled = 0;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len = get<uint32_t>(f, "name length");
        std::string name(len, '\0');
        f.read(name.data(), len);
        if (!f) throw data_error("checkpoint truncated reading name");
        uint32_t ndim = get<uint32_t>(f, "ndim");
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(get<uint32_t>(f, "dim"));
        std::vector<float> data(shape_numel(shape));
        f.read(reinterpret_cast<char*>(data.data()), data.size() * sizeof(float));
        if (!f) throw data_error("checkpoint truncated reading tensor " + name);
        Tensor* dst = store.find(name);
        if (!dst) throw data_error("checkpoint tensor not in model: " + name);
        if (dst->shape() != shape) throw data_error("checkpoint shape mismatch for " + name);
        dst->data() = std::move(data);
        ++filled;
    }
    if (filled != store.items.size())
        throw data_error("checkpoint is missing " + std::to_string(store.items.size() - filled) +
                         " model tensors");
}

void save_sidecar(const std::string& path, const SidecarConfig& cfg) {
    json j;
    j["net"] = {{"shared_blocks", cfg.net.shared_blocks},
                {"attention_layers", cfg.net.attention_layers},
                {"encoder_channels", cfg.net.encoder_channels},
                {"decoder_channels", cfg.net.decoder_channels},
                {"num_classes", cfg.net.num_classes},
                {"color_strides", cfg.net.color_strides},
                {"semantic_strides", cfg.net.semantic_strides},
                {"init_seed", cfg.net.init_seed}};
    j["unit_interval_scale"] = cfg.unit_interval_scale;
    j["log_scale_bias"] = cfg.log_scale_bias;
    j["straight_through_mask"] = cfg.straight_through_mask;
    std::ofstream f(path);
    if (!f) throw data_error("cannot open for writing: " + path);
    f << j.dump(2) << "\n";
}

SidecarConfig load_sidecar(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open for reading: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw data_error("sidecar parse error: " + std::string(e.what()));
    }
    SidecarConfig cfg;
    try {
        const auto& n = j.at("net");
        cfg.net.shared_blocks = n.at("shared_blocks").get<int>();
        cfg.net.attention_layers = n.at("attention_layers").get<int>();
        cfg.net.encoder_channels = n.at("encoder_channels").get<int>();
        cfg.net.decoder_channels = n.at("decoder_channels").get<int>();
        cfg.net.num_classes = n.at("num_classes").get<int>();
        cfg.net.color_strides = n.at("color_strides").get<std::vector<int>>();
        cfg.net.semantic_strides = n.at("semantic_strides").get<std::vector<int>>();
        cfg.net.init_seed = n.at("init_seed").get<uint64_t>();
        cfg.unit_interval_scale = j.at("unit_interval_scale").get<double>();
        cfg.log_scale_bias = j.at("log_scale_bias").get<double>();
        cfg.straight_through_mask = j.at("straight_through_mask").get<bool>();
    } catch (const json::exception& e) {
        throw data_error("sidecar missing field: " + std::string(e.what()));
    }
    cfg.net.validate();
    return cfg;
}

}  // namespace gssplat
