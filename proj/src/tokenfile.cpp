#include "atomtok/tokenfile.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace atomtok {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'K', '1'};
constexpr const char* kTextHeader = "atomtok-tokens 1";

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& f) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("token file: truncated");
    return v;
}

void check_ids(const TokenFile& tf) {
    const int64_t size = tf.spec.codebook_size();
    if (size > 65536) throw std::invalid_argument("token file: codebook too large for 16-bit ids");
    for (const auto& r : tf.records)
        for (uint32_t id : r.ids)
            if (static_cast<int64_t>(id) >= size)
                throw std::invalid_argument("token file: id " + std::to_string(id) + " outside codebook");
}

}  // namespace

void write_token_file_binary(const std::string& path, const TokenFile& tf) {
    check_ids(tf);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("token file: cannot write " + path);
    f.write(kMagic, 4);
    put<uint32_t>(f, static_cast<uint32_t>(tf.spec.dims()));
    for (int l : tf.spec.levels) put<uint16_t>(f, static_cast<uint16_t>(l));
    put<uint32_t>(f, static_cast<uint32_t>(tf.records.size()));
    for (const auto& r : tf.records) {
        put<uint32_t>(f, r.n_atoms);
        put<uint32_t>(f, static_cast<uint32_t>(r.ids.size()));
        for (uint32_t id : r.ids) put<uint16_t>(f, static_cast<uint16_t>(id));
    }
    if (!f) throw std::runtime_error("token file: write failed for " + path);
}

void write_token_file_text(const std::string& path, const TokenFile& tf) {
    check_ids(tf);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("token file: cannot write " + path);
    f << kTextHeader << "\n";
    f << "levels";
    for (int l : tf.spec.levels) f << " " << l;
    f << "\nrecords " << tf.records.size() << "\n";
    for (const auto& r : tf.records) {
        f << "record " << r.n_atoms << " " << r.ids.size() << "\n";
        for (size_t i = 0; i < r.ids.size(); ++i) f << (i ? " " : "") << r.ids[i];
        f << "\n";
    }
}

namespace {

TokenFile read_binary(std::ifstream& f, const std::string& path) {
    TokenFile tf;
    const uint32_t dims = take<uint32_t>(f);
    if (dims == 0 || dims > 64) throw std::runtime_error("token file: bad dimension count in " + path);
    std::vector<int> levels(dims);
    for (auto& l : levels) l = take<uint16_t>(f);
    tf.spec = FsqSpec(levels);
    const uint32_t n_rec = take<uint32_t>(f);
    tf.records.resize(n_rec);
    for (auto& r : tf.records) {
        r.n_atoms = take<uint32_t>(f);
        const uint32_t n_tok = take<uint32_t>(f);
        r.ids.resize(n_tok);
        for (auto& id : r.ids) id = take<uint16_t>(f);
    }
    return tf;
}

TokenFile read_text(std::ifstream& f, const std::string& path) {
    std::string line;
    std::getline(f, line);  // header already verified
    TokenFile tf;
    std::getline(f, line);
    {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word != "levels") throw std::runtime_error("token file: missing levels line in " + path);
        std::vector<int> levels;
        int l;
        while (ls >> l) levels.push_back(l);
        tf.spec = FsqSpec(levels);
    }
    std::getline(f, line);
    size_t n_rec = 0;
    {
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word >> n_rec) || word != "records")
            throw std::runtime_error("token file: missing records line in " + path);
    }
    for (size_t i = 0; i < n_rec; ++i) {
        std::getline(f, line);
        std::istringstream ls(line);
        std::string word;
        TokenRecord r;
        size_t n_tok = 0;
        if (!(ls >> word >> r.n_atoms >> n_tok) || word != "record")
            throw std::runtime_error("token file: malformed record header in " + path);
        r.ids.reserve(n_tok);
        while (r.ids.size() < n_tok) {
            uint32_t id;
            if (!(f >> id)) throw std::runtime_error("token file: truncated ids in " + path);
            r.ids.push_back(id);
        }
        std::getline(f, line);  // consume end of the id line
        tf.records.push_back(std::move(r));
    }
    return tf;
}

}  // namespace

TokenFile read_token_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("token file: cannot open " + path);
    char magic[4] = {};
    f.read(magic, 4);
    if (f && std::memcmp(magic, kMagic, 4) == 0) {
        TokenFile tf = read_binary(f, path);
        check_ids(tf);
        return tf;
    }
    f.clear();
    f.seekg(0);
    std::string first;
    std::getline(f, first);
    if (first.rfind(kTextHeader, 0) != 0)
        throw std::runtime_error("token file: unrecognized format in " + path);
    f.seekg(0);
    TokenFile tf = read_text(f, path);
    check_ids(tf);
    return tf;
}

}  // namespace atomtok
