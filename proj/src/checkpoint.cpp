#include "csense/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "csense/common.hpp"

namespace csense::nn {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'N', 'C'};

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, ckpt.format_version);
    put_u32(out, static_cast<uint32_t>(ckpt.config_json.size()));
    out.append(ckpt.config_json);
    for (const auto& [name, tensor] : ckpt.tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<uint32_t>(tensor.rank()));
        for (int64_t e : tensor.shape) put_u64(out, static_cast<uint64_t>(e));
        const size_t nbytes = tensor.data.size() * sizeof(float);
        const size_t off = out.size();
        out.resize(off + nbytes);
        std::memcpy(out.data() + off, tensor.data.data(), nbytes);
    }

    // write-temp-then-rename so a crash never leaves a half-written file
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    if (r.bytes(4) != std::string(kMagic, 4)) throw IoError(path.string() + ": bad magic");
    Checkpoint ckpt;
    ckpt.format_version = r.u32();
    const uint32_t cfg_len = r.u32();
    ckpt.config_json = r.bytes(cfg_len);
    while (r.pos < buf.size()) {
        const uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        const uint32_t rank = r.u32();
        std::vector<int64_t> shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(r.u64());
        Tensor t(shape);
        const size_t nbytes = t.data.size() * sizeof(float);
        r.need(nbytes);
        std::memcpy(t.data.data(), buf.data() + r.pos, nbytes);
        r.pos += nbytes;
        if (!ckpt.tensors.emplace(std::move(name), std::move(t)).second)
            throw IoError(path.string() + ": duplicate tensor name");
    }
    return ckpt;
}

}  // namespace csense::nn
