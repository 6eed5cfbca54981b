#include "wsed/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "wsed/error.hpp"

namespace wsed {

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& name) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("truncated checkpoint: " + name);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_entry(std::ofstream& out, const std::string& name, const Tensor& t) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, ModelParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    std::uint32_t count = 1; // init_seed
    params.for_each_state([&](const std::string&, Tensor&) { ++count; });

    out.write("WSCK", 4);
    write_u32(out, 1);
    write_u32(out, count);
    params.for_each_state([&](const std::string& name, Tensor& t) { write_entry(out, name, t); });
    Tensor seed = Tensor::scalar(static_cast<double>(params.init_seed));
    write_entry(out, "init_seed", seed);
    if (!out) throw DataError("short write to checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "WSCK", 4) != 0)
        throw FormatError("bad magic in checkpoint: " + path.string());
    const std::uint32_t version = read_u32(in, path.string());
    if (version != 1)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " +
                          path.string());
    const std::uint32_t count = read_u32(in, path.string());

    ModelParams params = init_params(config, 0);
    std::map<std::string, Tensor*> slots;
    params.for_each_state([&](const std::string& name, Tensor& t) { slots[name] = &t; });

    std::map<std::string, bool> filled;
    for (auto& [name, slot] : slots) {
        (void)slot;
        filled[name] = false;
    }
    bool seed_seen = false;

    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = read_u32(in, path.string());
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw FormatError("truncated checkpoint: " + path.string());
        const std::uint32_t rank = read_u32(in, path.string());
        std::vector<Index> shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i)
            shape[i] = static_cast<Index>(read_u32(in, path.string()));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw FormatError("truncated checkpoint: " + path.string());

        if (name == "init_seed") {
            params.init_seed = static_cast<std::uint64_t>(t.scalar_value());
            seed_seen = true;
            continue;
        }
        auto it = slots.find(name);
        if (it == slots.end())
            throw FormatError("checkpoint entry '" + name + "' does not match the model config: " +
                              path.string());
        if (!it->second->same_shape(t))
            throw FormatError("checkpoint entry '" + name + "' has shape " + t.shape_str() +
                              ", model expects " + it->second->shape_str() + ": " + path.string());
        *it->second = std::move(t);
        filled[name] = true;
    }
    for (const auto& [name, ok] : filled) {
        if (!ok) throw FormatError("checkpoint is missing entry '" + name + "': " + path.string());
    }
    if (!seed_seen) throw FormatError("checkpoint is missing entry 'init_seed': " + path.string());
    return params;
}

} // namespace wsed
