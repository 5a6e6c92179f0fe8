#include "dpnmt/params.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dpnmt/error.hpp"
#include "dpnmt/rng.hpp"

namespace dpnmt {

Tensor& ParameterSet::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw ShapeError("missing parameter '" + name + "'");
    }
    return it->second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw ShapeError("missing parameter '" + name + "'");
    }
    return it->second;
}

std::vector<std::string> ParameterSet::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) {
        out.push_back(name);
    }
    return out;
}

std::size_t ParameterSet::value_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) {
        n += t.size();
    }
    return n;
}

ParameterSet ParameterSet::subset(const std::string& prefix) const {
    return filter([&](const std::string& name) { return name.rfind(prefix, 0) == 0; });
}

ParameterSet ParameterSet::filter(const std::function<bool(const std::string&)>& keep) const {
    ParameterSet out;
    for (const auto& [name, t] : tensors_) {
        if (keep(name)) {
            out.set(name, t);
        }
    }
    return out;
}

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double range, Rng& rng) {
    Tensor t = Tensor::zeros(rows, cols);
    for (double& x : t.data) {
        x = rng.uniform(-range, range);
    }
    return t;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'D', 'P', 'N', 'M', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const char* p, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <class T>
void put(std::string& out, T value) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
  public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ParameterSet& params) {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, params.size());
    for (const auto& [name, t] : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) {
            put<std::uint64_t>(out, d);
        }
        for (double x : t.data) {
            put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
        }
    }
    put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
    return out;
}

ParameterSet deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw DataError("not a checkpoint: bad magic");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.get<std::uint64_t>();
    ParameterSet params;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = r.str(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.get<std::uint64_t>());
        }
        std::vector<double> values(shape_size(shape));
        for (double& x : values) {
            x = std::bit_cast<double>(r.get<std::uint64_t>());
        }
        params.set(name, Tensor(shape, std::move(values)));
    }
    const std::size_t body = r.pos();
    const auto checksum = r.get<std::uint64_t>();
    if (checksum != fnv1a(bytes.data(), body)) {
        throw DataError("checkpoint checksum mismatch");
    }
    if (r.pos() != bytes.size()) {
        throw DataError("trailing bytes after checkpoint");
    }
    return params;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write checkpoint " + path.string());
    }
    const std::string bytes = serialize_checkpoint(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace dpnmt
