#include "facefill/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace facefill {

namespace {

constexpr char kMagic[4] = {'F', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

void write_name(std::ostream& os, const std::string& name) {
    write_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::string read_name(std::istream& is) {
    const auto len = read_le<uint32_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    return s;
}

}  // namespace

void Archive::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write " + path);
    os.write(kMagic, 4);
    write_le<uint32_t>(os, kVersion);
    write_le<uint64_t>(os, tensors.size() + texts.size());
    for (const auto& [name, t] : tensors) {
        os.put(0);
        write_name(os, name);
        write_le<uint32_t>(os, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) write_le<uint32_t>(os, static_cast<uint32_t>(t.dim(i)));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(real)));
    }
    for (const auto& [name, s] : texts) {
        os.put(1);
        write_name(os, name);
        write_le<uint64_t>(os, s.size());
        os.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    if (!os) throw CheckpointError("short write on " + path);
}

Archive Archive::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("bad magic in " + path);
    const auto version = read_le<uint32_t>(is);
    if (version != kVersion) throw CheckpointError("unsupported archive version in " + path);
    const auto count = read_le<uint64_t>(is);
    Archive a;
    for (uint64_t i = 0; i < count; ++i) {
        const int kind = is.get();
        const std::string name = read_name(is);
        if (kind == 0) {
            const auto rank = read_le<uint32_t>(is);
            if (rank > 8) throw CheckpointError("implausible tensor rank in " + path);
            Shape shape(rank);
            for (auto& d : shape) d = static_cast<int>(read_le<uint32_t>(is));
            Tensor t(shape);
            is.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(t.size() * sizeof(real)));
            a.tensors.emplace(name, std::move(t));
        } else if (kind == 1) {
            const auto len = read_le<uint64_t>(is);
            std::string s(len, '\0');
            is.read(s.data(), static_cast<std::streamsize>(len));
            a.texts.emplace(name, std::move(s));
        } else {
            throw CheckpointError("corrupt entry kind in " + path);
        }
        if (!is) throw CheckpointError("truncated archive " + path);
    }
    return a;
}

const Tensor& Archive::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("missing tensor " + name);
    return it->second;
}

void Archive::put_scalar(const std::string& name, real v) {
    Tensor t(Shape{1});
    t[0] = v;
    tensors[name] = std::move(t);
}

real Archive::get_scalar(const std::string& name) const {
    const Tensor& t = get(name);
    if (t.size() != 1) throw CheckpointError(name + " is not a scalar");
    return t[0];
}

void Archive::put_params(const std::string& prefix, const ParamStore& params) {
    for (const auto& [name, v] : params) tensors[prefix + name] = v.value();
}

void Archive::load_params(const std::string& prefix, ParamStore& params) const {
    for (auto& [name, v] : params) {
        const auto it = tensors.find(prefix + name);
        if (it == tensors.end()) throw CheckpointError("missing parameter " + prefix + name);
        if (!(it->second.shape() == v.value().shape()))
            throw CheckpointError("shape mismatch for " + prefix + name + ": " +
                                  shape_str(it->second.shape()) + " vs " +
                                  shape_str(v.value().shape()));
        v.value() = it->second;
    }
}

}  // namespace facefill
