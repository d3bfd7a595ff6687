// SPDX-License-Identifier: Apache-2.0

#include "petlab/params.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "petlab/errors.h"

namespace petlab {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

ParamStore::ParamStore(const ParamStore& other) {
    entries_.reserve(other.entries_.size());
    for (const auto& e : other.entries_) entries_.push_back({e.name, e.tensor.clone(), e.frozen});
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this != &other) {
        ParamStore copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Tensor& ParamStore::add(std::string name, Tensor tensor, bool frozen) {
    if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
    tensor.set_requires_grad(!frozen);
    entries_.push_back({std::move(name), std::move(tensor), frozen});
    return entries_.back().tensor;
}

std::size_t ParamStore::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return i;
    }
    return entries_.size();
}

bool ParamStore::contains(std::string_view name) const { return index_of(name) < entries_.size(); }

Tensor& ParamStore::at(std::string_view name) {
    const std::size_t i = index_of(name);
    if (i == entries_.size()) throw IndexError("unknown parameter: " + std::string(name));
    return entries_[i].tensor;
}

const Tensor& ParamStore::at(std::string_view name) const {
    const std::size_t i = index_of(name);
    if (i == entries_.size()) throw IndexError("unknown parameter: " + std::string(name));
    return entries_[i].tensor;
}

bool ParamStore::frozen(std::string_view name) const {
    const std::size_t i = index_of(name);
    if (i == entries_.size()) throw IndexError("unknown parameter: " + std::string(name));
    return entries_[i].frozen;
}

void ParamStore::set_frozen(std::string_view name, bool frozen) {
    const std::size_t i = index_of(name);
    if (i == entries_.size()) throw IndexError("unknown parameter: " + std::string(name));
    entries_[i].frozen = frozen;
    entries_[i].tensor.set_requires_grad(!frozen);
}

void ParamStore::set_all_frozen(bool frozen) {
    for (auto& e : entries_) {
        e.frozen = frozen;
        e.tensor.set_requires_grad(!frozen);
    }
}

std::size_t ParamStore::element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
}

std::size_t ParamStore::trainable_element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        if (!e.frozen) n += e.tensor.size();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

std::vector<double> ParamStore::snapshot() const {
    std::vector<double> out;
    out.reserve(element_count());
    for (const auto& e : entries_) {
        auto v = e.tensor.values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'E', 'T', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw InputError("checkpoint truncated");
    }

    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& metadata, const ParamStore& params) {
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kVersion);
    const std::string meta = metadata.dump();
    put_le<std::uint64_t>(out, meta.size());
    out += meta;
    put_le<std::uint64_t>(out, params.size());
    for (const auto& e : params.entries()) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        out.push_back(e.frozen ? 1 : 0);
        const auto& shape = e.tensor.shape();
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
        for (std::size_t d : shape) put_le<std::uint64_t>(out, d);
        for (double v : e.tensor.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    write_text_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Reader in(read_text_file(path));
    if (in.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw InputError("not a checkpoint file: " + path.string());
    }
    if (in.get<std::uint32_t>() != kVersion) throw InputError("unsupported checkpoint version");
    Checkpoint ck;
    const auto meta_len = in.get<std::uint64_t>();
    try {
        ck.metadata = nlohmann::json::parse(in.bytes(meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("checkpoint metadata: ") + e.what());
    }
    const auto count = in.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = in.bytes(in.get<std::uint32_t>());
        const bool frozen = in.get<std::uint8_t>() != 0;
        const auto rank = in.get<std::uint32_t>();
        if (rank == 0 || rank > 2) throw InputError("checkpoint entry with unsupported rank");
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = in.get<std::uint64_t>();
            n *= d;
        }
        std::vector<double> values(n);
        for (auto& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>());
        ck.params.add(std::move(name), Tensor::from_values(std::move(shape), std::move(values)), frozen);
    }
    if (!in.done()) throw InputError("trailing bytes in checkpoint");
    return ck;
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

std::string config_hash(const nlohmann::json& config) { return fnv1a_hex(config.dump()); }

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write " + path.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw InputError("write failed: " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw InputError("cannot move file into place: " + path.string());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace petlab
