#include "csra/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "csra/error.hpp"

namespace csra {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'S', 'R', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

}  // namespace

const Mat* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, m] : blocks)
        if (n == name) return &m;
    return nullptr;
}

const Mat& Checkpoint::at(const std::string& name) const {
    if (const Mat* m = find(name)) return *m;
    throw DataError("checkpoint has no block '" + name + "'");
}

void Checkpoint::add(const std::string& prefix, const ad::ParameterSet& params) {
    for (const auto& p : params) blocks.emplace_back(prefix + p->name, p->value);
}

void Checkpoint::restore(const std::string& prefix, ad::ParameterSet& params) const {
    for (auto& p : params) {
        const Mat& m = at(prefix + p->name);
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
            throw DataError("checkpoint block '" + prefix + p->name + "' has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", expected " + std::to_string(p->value.rows()) + "x" +
                            std::to_string(p->value.cols()));
        p->value = m;
    }
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
    for (const auto& b : blocks)
        if (b.first.compare(0, prefix.size(), prefix) == 0) return true;
    return false;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint " + path.string());
        out.write(kMagic, sizeof(kMagic));
        put<std::uint32_t>(out, kVersion);
        const std::string text = header.dump();
        put<std::uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
        for (const auto& [name, m] : blocks) {
            put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
            put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
        }
        for (const auto& b : blocks)
            out.write(reinterpret_cast<const char*>(b.second.data()),
                      static_cast<std::streamsize>(b.second.size() * sizeof(double)));
        if (!out) throw DataError("write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw DataError(path.string() + " is not a checkpoint");
    if (get<std::uint32_t>(in, "version") != kVersion) throw DataError("unsupported checkpoint version");
    const auto header_len = get<std::uint64_t>(in, "header length");
    if (header_len > (1ull << 32)) throw DataError("checkpoint header length is implausible");
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw DataError("checkpoint truncated in header");
    Checkpoint c;
    try {
        c.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    const auto count = get<std::uint32_t>(in, "block count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(in, "name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rows = get<std::uint32_t>(in, "rows");
        const auto cols = get<std::uint32_t>(in, "cols");
        c.blocks.emplace_back(std::move(name), Mat(rows, cols));
    }
    for (auto& b : c.blocks) {
        in.read(reinterpret_cast<char*>(b.second.data()), static_cast<std::streamsize>(b.second.size() * sizeof(double)));
        if (!in) throw DataError("checkpoint truncated in block '" + b.first + "'");
    }
    return c;
}

}  // namespace csra
