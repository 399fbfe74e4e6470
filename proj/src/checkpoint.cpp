#include "maskaug/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace maskaug {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'U', 'G', 'C', 'K', 'P', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void expect_magic() {
        need(sizeof(kMagic));
        if (std::memcmp(bytes_.data() + pos_, kMagic, sizeof(kMagic)) != 0)
            throw std::runtime_error("not a maskaug checkpoint (bad magic)");
        pos_ += sizeof(kMagic);
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("truncated checkpoint");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::int64_t CheckpointData::get_int(const std::string& key) const {
    auto it = ints.find(key);
    if (it == ints.end()) throw std::runtime_error("checkpoint missing field: " + key);
    return it->second;
}

double CheckpointData::get_real(const std::string& key) const {
    auto it = reals.find(key);
    if (it == reals.end()) throw std::runtime_error("checkpoint missing field: " + key);
    return it->second;
}

std::string serialize_checkpoint(const CheckpointData& data) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_str(out, data.kind);

    put_u32(out, static_cast<std::uint32_t>(data.ints.size()));
    for (const auto& [k, v] : data.ints) {
        put_str(out, k);
        put_u64(out, static_cast<std::uint64_t>(v));
    }
    put_u32(out, static_cast<std::uint32_t>(data.reals.size()));
    for (const auto& [k, v] : data.reals) {
        put_str(out, k);
        put_f64(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(data.vocab_tokens.size()));
    for (const auto& t : data.vocab_tokens) put_str(out, t);

    put_u32(out, static_cast<std::uint32_t>(data.tensors.size()));
    for (const auto& [name, mat] : data.tensors) {
        put_str(out, name);
        put_u32(out, static_cast<std::uint32_t>(mat.rows()));
        put_u32(out, static_cast<std::uint32_t>(mat.cols()));
        for (Eigen::Index i = 0; i < mat.rows(); ++i)
            for (Eigen::Index j = 0; j < mat.cols(); ++j) put_f64(out, mat(i, j));
    }
    return out;
}

CheckpointData deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    r.expect_magic();
    CheckpointData data;
    data.kind = r.str();

    for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) {
        std::string k = r.str();
        data.ints[k] = static_cast<std::int64_t>(r.u64());
    }
    for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) {
        std::string k = r.str();
        data.reals[k] = r.f64();
    }
    for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) data.vocab_tokens.push_back(r.str());

    for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) {
        std::string name = r.str();
        std::uint32_t rows = r.u32(), cols = r.u32();
        nn::Mat mat(rows, cols);
        for (std::uint32_t a = 0; a < rows; ++a)
            for (std::uint32_t b = 0; b < cols; ++b) mat(a, b) = r.f64();
        data.tensors.emplace_back(std::move(name), std::move(mat));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint");
    return data;
}

void save_checkpoint_file(const CheckpointData& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    std::string bytes = serialize_checkpoint(data);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("error writing checkpoint: " + path);
}

CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

std::string checkpoint_hash(const CheckpointData& data) {
    std::string bytes = serialize_checkpoint(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

void restore_tensors(const CheckpointData& data, nn::ParameterStore& params) {
    if (data.tensors.size() != params.size())
        throw std::runtime_error("checkpoint holds " + std::to_string(data.tensors.size()) +
                                 " tensors, model expects " + std::to_string(params.size()));
    for (const auto& [name, mat] : data.tensors) {
        if (!params.contains(name)) throw std::runtime_error("unexpected tensor in checkpoint: " + name);
        nn::Tensor& t = params.get(name);
        if (t.value.rows() != mat.rows() || t.value.cols() != mat.cols())
            throw std::runtime_error("shape mismatch for tensor " + name + ": checkpoint " +
                                     std::to_string(mat.rows()) + "x" + std::to_string(mat.cols()) +
                                     ", model " + std::to_string(t.value.rows()) + "x" +
                                     std::to_string(t.value.cols()));
        t.value = mat;
    }
}

void append_tensors(CheckpointData& data, const nn::ParameterStore& params, const std::string& prefix) {
    for (const nn::Tensor* t : params.all()) data.tensors.emplace_back(prefix + t->name, t->value);
}

}  // namespace maskaug
