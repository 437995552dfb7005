#pragma once

// Token files: one structure per record. Binary format is "ATK1" magic,
// quantizer geometry (levels vector), then per record the original atom
// count, token count, and ids as unsigned 16-bit little-endian. A plain-text
// alternative carries the same content; both decode identically.

#include <string>
#include <vector>

#include "atomtok/quantizer.hpp"

namespace atomtok {

struct TokenRecord {
    uint32_t n_atoms = 0;  // original atom count (needed when compression > 1)
    std::vector<uint32_t> ids;
};

struct TokenFile {
    FsqSpec spec;
    std::vector<TokenRecord> records;
};

void write_token_file_binary(const std::string& path, const TokenFile& tf);
void write_token_file_text(const std::string& path, const TokenFile& tf);

// Sniffs binary magic vs text header.
TokenFile read_token_file(const std::string& path);

}  // namespace atomtok
