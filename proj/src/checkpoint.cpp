#include "cable/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cable/errors.hpp"

namespace cable {

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    os.write(b, 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    os.write(b, 8);
}

uint32_t read_u32(std::istream& is) {
    char b[4];
    if (!is.read(b, 4)) throw IoError("checkpoint: truncated file");
    uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}

uint64_t read_u64(std::istream& is) {
    char b[8];
    if (!is.read(b, 8)) throw IoError("checkpoint: truncated file");
    uint64_t v;
    std::memcpy(&v, b, 8);
    return v;
}

void write_floats(std::ostream& os, const std::vector<float>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> read_floats(std::istream& is, uint64_t n) {
    std::vector<float> v(n);
    if (!is.read(reinterpret_cast<char*>(v.data()),
                 static_cast<std::streamsize>(n * sizeof(float))))
        throw IoError("checkpoint: truncated parameter block");
    return v;
}

constexpr char kMagic[8] = {'C', 'B', 'L', 'C', 'K', 'P', 'T', '1'};

}  // namespace

std::vector<float> flatten_params(Gpt<float>& model) {
    std::vector<float> flat;
    flat.reserve(static_cast<size_t>(model.param_count()));
    for (auto& p : model.params())
        flat.insert(flat.end(), p.tensor.values().begin(),
                    p.tensor.values().end());
    return flat;
}

void load_params(Gpt<float>& model, const std::vector<float>& flat) {
    if (static_cast<int64_t>(flat.size()) != model.param_count())
        throw IoError("checkpoint: parameter count mismatch (" +
                      std::to_string(flat.size()) + " in file, " +
                      std::to_string(model.param_count()) + " in model)");
    size_t off = 0;
    for (auto& p : model.params()) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off) +
                      p.tensor.numel(),
                  p.tensor.values().begin());
        off += static_cast<size_t>(p.tensor.numel());
    }
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot write " + path);
    os.write(kMagic, 8);
    write_u32(os, static_cast<uint32_t>(data.config_json.size()));
    os.write(data.config_json.data(),
             static_cast<std::streamsize>(data.config_json.size()));
    write_u64(os, data.params.size());
    write_floats(os, data.params);
    os.put(data.has_optimizer ? '\1' : '\0');
    if (data.has_optimizer) {
        if (data.opt_m.size() != data.params.size() ||
            data.opt_v.size() != data.params.size())
            throw ArgumentError("checkpoint: optimizer state size mismatch");
        write_u64(os, data.opt_t);
        write_u64(os, data.opt_m.size());
        write_floats(os, data.opt_m);
        write_floats(os, data.opt_v);
    }
    write_u32(os, static_cast<uint32_t>(data.rng_state.size()));
    os.write(data.rng_state.data(),
             static_cast<std::streamsize>(data.rng_state.size()));
    write_u64(os, data.step);
    if (!os) throw IoError("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw CheckpointMissingError("checkpoint not found: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    CheckpointData data;
    uint32_t clen = read_u32(is);
    data.config_json.resize(clen);
    if (clen && !is.read(data.config_json.data(), clen))
        throw IoError("checkpoint: truncated config");
    uint64_t n = read_u64(is);
    data.params = read_floats(is, n);
    int flag = is.get();
    if (flag == EOF) throw IoError("checkpoint: truncated file");
    data.has_optimizer = flag != 0;
    if (data.has_optimizer) {
        data.opt_t = read_u64(is);
        uint64_t on = read_u64(is);
        if (on != n) throw IoError("checkpoint: optimizer size mismatch");
        data.opt_m = read_floats(is, on);
        data.opt_v = read_floats(is, on);
    }
    uint32_t rlen = read_u32(is);
    data.rng_state.resize(rlen);
    if (rlen && !is.read(data.rng_state.data(), rlen))
        throw IoError("checkpoint: truncated RNG state");
    data.step = read_u64(is);
    return data;
}

}  // namespace cable
