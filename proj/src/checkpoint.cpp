// SPDX-License-Identifier: Apache-2.0
#include "moct/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "moct/errors.hpp"
#include "moct/rng.hpp"

namespace moct {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'C', 'T'};

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

// The float payload is little-endian on disk; we memcpy it, so require an
// LE host.
static_assert(std::endian::native == std::endian::little);

void put_f32_array(std::string& out, std::span<const float> data) {
    static_assert(sizeof(float) == 4);
    const size_t old = out.size();
    out.resize(old + data.size() * 4);
    std::memcpy(out.data() + old, data.data(), data.size() * 4);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size()) throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)]);
        pos += 4;
        return v;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    bool at_end() const { return pos == buf.size(); }
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const ModelConfig& config) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    const std::string header = config.to_json().dump();
    put_u32(out, static_cast<uint32_t>(header.size()));
    out += header;
    for (const auto& [name, e] : params) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        out.push_back(e.frozen ? '\x01' : '\x00');
        const auto& shape = e.tensor.shape();
        put_u32(out, static_cast<uint32_t>(shape.size()));
        for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
        put_f32_array(out, e.tensor.data());
    }

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw CheckpointError("short write to checkpoint '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    Reader r{buf};
    if (r.bytes(4, "magic") != std::string(kMagic, 4))
        throw CheckpointError("'" + path.string() + "' is not a checkpoint (bad magic)");
    const uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t header_len = r.u32("header length");
    const std::string header = r.bytes(header_len, "header");

    Checkpoint ck;
    try {
        ck.config = ModelConfig::from_json(Json::parse(header));
    } catch (const Json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }

    std::string prev_name;
    while (!r.at_end()) {
        const uint32_t name_len = r.u32("name length");
        const std::string name = r.bytes(name_len, "name");
        if (!prev_name.empty() && !(prev_name < name))
            throw CheckpointError("checkpoint parameters out of lexicographic order at '" + name + "'");
        prev_name = name;
        const bool frozen = r.u8("frozen flag") != 0;
        const uint32_t rank = r.u32("rank");
        Shape shape(rank);
        int64_t n = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            shape[i] = static_cast<int>(r.u32("dim"));
            n *= shape[i];
        }
        r.need(static_cast<size_t>(n) * 4, "tensor data");
        std::vector<float> data(static_cast<size_t>(n));
        std::memcpy(data.data(), buf.data() + r.pos, static_cast<size_t>(n) * 4);
        r.pos += static_cast<size_t>(n) * 4;
        ck.params.add(name, Tensor::from(std::move(shape), std::move(data)), frozen);
    }
    return ck;
}

std::string file_content_hash(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    const uint64_t h = fnv1a64(buf.data(), buf.size());
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return std::string(hex);
}

}  // namespace moct
