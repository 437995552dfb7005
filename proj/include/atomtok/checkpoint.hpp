#pragma once

// Self-describing binary containers for model checkpoints and codebooks:
// magic + format version + JSON metadata block + named float32 tensors +
// CRC32 of the payload. Little-endian throughout.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "atomtok/model.hpp"
#include "atomtok/tensor.hpp"

namespace atomtok {

using json = nlohmann::ordered_json;

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

struct Container {
    json meta;
    std::vector<std::pair<std::string, TensorF>> tensors;

    const TensorF* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

json config_to_json(const TokenizerConfig& cfg);
TokenizerConfig config_from_json(const json& j);

void save_model(const std::string& path, TokenizerModel<float>& model, const json& extra_meta = json::object());
TokenizerModel<float> load_model(const std::string& path, json* extra_meta = nullptr);

}  // namespace atomtok
