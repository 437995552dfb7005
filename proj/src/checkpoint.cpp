#include "atomtok/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace atomtok {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'K', 'C'};
constexpr uint32_t kVersion = 1;

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

template <typename T>
void put(std::string& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const size_t off = buf.size();
    buf.resize(off + sizeof(T));
    std::memcpy(buf.data() + off, &v, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw std::runtime_error("container: truncated file");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static const auto table = make_crc_table();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void write_container(const std::string& path, const Container& c) {
    std::string buf;
    buf.append(kMagic, 4);
    put<uint32_t>(buf, kVersion);
    const std::string meta = c.meta.dump();
    put<uint64_t>(buf, meta.size());
    buf.append(meta);
    put<uint32_t>(buf, static_cast<uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        put<uint16_t>(buf, static_cast<uint16_t>(name.size()));
        buf.append(name);
        put<uint8_t>(buf, static_cast<uint8_t>(t.ndim()));
        for (int64_t d : t.shape) put<uint32_t>(buf, static_cast<uint32_t>(d));
        const size_t off = buf.size();
        buf.resize(off + t.numel() * sizeof(float));
        std::memcpy(buf.data() + off, t.ptr(), t.numel() * sizeof(float));
    }
    put<uint32_t>(buf, crc32(reinterpret_cast<const uint8_t*>(buf.data()), buf.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("container: cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("container: write failed for " + path);
}

Container read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("container: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw std::runtime_error("container: truncated file " + path);

    const size_t body = buf.size() - sizeof(uint32_t);
    size_t off = body;
    const uint32_t stored = take<uint32_t>(buf, off);
    const uint32_t computed = crc32(reinterpret_cast<const uint8_t*>(buf.data()), body);
    if (stored != computed) throw std::runtime_error("container: checksum mismatch in " + path);

    off = 0;
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw std::runtime_error("container: bad magic in " + path);
    off = 4;
    const uint32_t version = take<uint32_t>(buf, off);
    if (version != kVersion)
        throw std::runtime_error("container: unsupported version " + std::to_string(version));
    const uint64_t meta_len = take<uint64_t>(buf, off);
    if (off + meta_len > body) throw std::runtime_error("container: truncated metadata");
    Container c;
    c.meta = json::parse(buf.substr(off, meta_len));
    off += meta_len;
    const uint32_t n_tensors = take<uint32_t>(buf, off);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        const uint16_t name_len = take<uint16_t>(buf, off);
        if (off + name_len > body) throw std::runtime_error("container: truncated tensor name");
        std::string name = buf.substr(off, name_len);
        off += name_len;
        const uint8_t ndim = take<uint8_t>(buf, off);
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = take<uint32_t>(buf, off);
        const int64_t numel = TensorF::numel_of(shape);
        if (off + numel * sizeof(float) > body) throw std::runtime_error("container: truncated tensor data");
        std::vector<float> data(static_cast<size_t>(numel));
        std::memcpy(data.data(), buf.data() + off, numel * sizeof(float));
        off += numel * sizeof(float);
        c.tensors.emplace_back(std::move(name), TensorF::from(std::move(shape), std::move(data)));
    }
    return c;
}

json config_to_json(const TokenizerConfig& cfg) {
    return json{{"n_encoder_layers", cfg.n_encoder_layers},
                {"n_decoder_layers", cfg.n_decoder_layers},
                {"d_model", cfg.d_model},
                {"d_state", cfg.d_state},
                {"conv_width", cfg.conv_width},
                {"expand", cfg.expand},
                {"fsq_levels", cfg.fsq_levels},
                {"compression", cfg.compression},
                {"bidirectional", cfg.bidirectional},
                {"output_init_scale", cfg.output_init_scale},
                {"input_init_scale", cfg.input_init_scale},
                {"seed", cfg.seed}};
}

TokenizerConfig config_from_json(const json& j) {
    TokenizerConfig cfg;
    cfg.n_encoder_layers = j.value("n_encoder_layers", cfg.n_encoder_layers);
    cfg.n_decoder_layers = j.value("n_decoder_layers", cfg.n_decoder_layers);
    cfg.d_model = j.value("d_model", cfg.d_model);
    cfg.d_state = j.value("d_state", cfg.d_state);
    cfg.conv_width = j.value("conv_width", cfg.conv_width);
    cfg.expand = j.value("expand", cfg.expand);
    cfg.fsq_levels = j.value("fsq_levels", cfg.fsq_levels);
    cfg.compression = j.value("compression", cfg.compression);
    cfg.bidirectional = j.value("bidirectional", cfg.bidirectional);
    cfg.output_init_scale = j.value("output_init_scale", cfg.output_init_scale);
    cfg.input_init_scale = j.value("input_init_scale", cfg.input_init_scale);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

void save_model(const std::string& path, TokenizerModel<float>& model, const json& extra_meta) {
    Container c;
    c.meta = json{{"kind", "tokenizer"}, {"config", config_to_json(model.cfg)}};
    for (auto& [k, v] : extra_meta.items()) c.meta[k] = v;
    for (auto& [name, t] : model.named_parameters()) c.tensors.emplace_back(name, t->clone_data());
    write_container(path, c);
}

TokenizerModel<float> load_model(const std::string& path, json* extra_meta) {
    Container c = read_container(path);
    if (c.meta.value("kind", "") != "tokenizer")
        throw std::runtime_error("checkpoint: " + path + " is not a tokenizer checkpoint");
    TokenizerModel<float> model = TokenizerModel<float>::init(config_from_json(c.meta.at("config")));
    for (auto& [name, t] : model.named_parameters()) {
        const TensorF* src = c.find(name);
        if (!src) throw std::runtime_error("checkpoint: missing tensor " + name + " in " + path);
        if (src->shape != t->shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name + " in " + path);
        *t->data = *src->data;
    }
    if (extra_meta) *extra_meta = c.meta;
    return model;
}

}  // namespace atomtok
