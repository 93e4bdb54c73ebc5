#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "vllfl/errors.hpp"
#include "vllfl/matrix.hpp"
#include "vllfl/prompt_generator.hpp"

namespace vllfl {

// VLPG checkpoint / wire format. Little-endian throughout:
//   magic "VLPG" | version u32 | tensor count u32
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32 each,
//               row-major float32 payload
// Parameters are computed in f64 but always cross process/file boundaries
// as f32; every byte count in the federation comes from this encoding.

constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;  // product(dims) entries, row-major

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::uint8_t* p;
    std::size_t remaining;

    void need(std::size_t n) const {
        if (remaining < n) throw format_error("checkpoint: truncated payload");
    }
    std::uint8_t u8() {
        need(1);
        --remaining;
        return *p++;
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        remaining -= 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        remaining -= 4;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_tensors(const std::vector<NamedTensor>& tensors) {
    std::vector<std::uint8_t> out;
    out.push_back('V');
    out.push_back('L');
    out.push_back('P');
    out.push_back('G');
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        detail::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) detail::put_u32(out, d);
        for (float v : t.values) detail::put_f32(out, v);
    }
    return out;
}

inline std::vector<NamedTensor> deserialize_tensors(const std::vector<std::uint8_t>& bytes) {
    detail::Reader r{bytes.data(), bytes.size()};
    r.need(4);
    if (std::memcmp(r.p, "VLPG", 4) != 0) throw format_error("checkpoint: bad magic");
    r.p += 4;
    r.remaining -= 4;
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw format_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint16_t name_len = r.u16();
        r.need(name_len);
        t.name.assign(reinterpret_cast<const char*>(r.p), name_len);
        r.p += name_len;
        r.remaining -= name_len;
        const std::uint8_t rank = r.u8();
        std::size_t n = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            t.dims.push_back(r.u32());
            n *= t.dims.back();
        }
        t.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) t.values[k] = r.f32();
        tensors.push_back(std::move(t));
    }
    if (r.remaining != 0) throw format_error("checkpoint: trailing bytes");
    return tensors;
}

namespace detail {

inline NamedTensor tensor_2d(std::string name, const Matrix& m) {
    NamedTensor t;
    t.name = std::move(name);
    t.dims = {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)};
    t.values.reserve(m.data.size());
    for (double v : m.data) t.values.push_back(static_cast<float>(v));
    return t;
}

inline NamedTensor tensor_1d(std::string name, const std::vector<double>& v) {
    NamedTensor t;
    t.name = std::move(name);
    t.dims = {static_cast<std::uint32_t>(v.size())};
    t.values.reserve(v.size());
    for (double x : v) t.values.push_back(static_cast<float>(x));
    return t;
}

inline Matrix to_matrix(const NamedTensor& t) {
    if (t.dims.size() != 2) throw format_error("checkpoint: tensor '" + t.name + "' is not rank 2");
    Matrix m(t.dims[0], t.dims[1]);
    for (std::size_t i = 0; i < t.values.size(); ++i) m.data[i] = t.values[i];
    if (!m.all_finite()) throw format_error("checkpoint: non-finite entries in '" + t.name + "'");
    return m;
}

inline std::vector<double> to_vector(const NamedTensor& t) {
    if (t.dims.size() != 1) throw format_error("checkpoint: tensor '" + t.name + "' is not rank 1");
    std::vector<double> v(t.values.begin(), t.values.end());
    for (double x : v) {
        if (!std::isfinite(x)) throw format_error("checkpoint: non-finite entries in '" + t.name + "'");
    }
    return v;
}

inline const NamedTensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
    for (const auto& t : ts) {
        if (t.name == name) return t;
    }
    throw format_error("checkpoint: missing tensor '" + name + "'");
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_params(const PromptGeneratorParams& p) {
    std::vector<NamedTensor> ts;
    ts.push_back(detail::tensor_2d("q", p.q));
    ts.push_back(detail::tensor_2d("w_k", p.w_k));
    ts.push_back(detail::tensor_2d("w_v", p.w_v));
    ts.push_back(detail::tensor_2d("w1", p.w1));
    ts.push_back(detail::tensor_1d("b1", p.b1));
    ts.push_back(detail::tensor_2d("w2", p.w2));
    ts.push_back(detail::tensor_1d("b2", p.b2));
    return serialize_tensors(ts);
}

inline PromptGeneratorParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
    const auto ts = deserialize_tensors(bytes);
    PromptGeneratorParams p;
    p.q = detail::to_matrix(detail::find_tensor(ts, "q"));
    p.w_k = detail::to_matrix(detail::find_tensor(ts, "w_k"));
    p.w_v = detail::to_matrix(detail::find_tensor(ts, "w_v"));
    p.w1 = detail::to_matrix(detail::find_tensor(ts, "w1"));
    p.b1 = detail::to_vector(detail::find_tensor(ts, "b1"));
    p.w2 = detail::to_matrix(detail::find_tensor(ts, "w2"));
    p.b2 = detail::to_vector(detail::find_tensor(ts, "b2"));
    p.m = p.q.rows;
    p.d = p.q.cols;
    p.d_h = p.w1.cols;
    if (p.w_k.rows != p.d || p.w_k.cols != p.d || p.w_v.rows != p.d || p.w_v.cols != p.d ||
        p.w1.rows != p.d || p.b1.size() != p.d_h || p.w2.rows != p.d_h || p.w2.cols != p.d ||
        p.b2.size() != p.d) {
        throw format_error("checkpoint: inconsistent parameter tensor shapes");
    }
    return p;
}

// Round a parameter set through the 32-bit wire encoding in place.
// After one pass the values are f32-representable, so a second pass is
// byte-identical.
inline void quantize_to_wire(PromptGeneratorParams& p) {
    auto q = [](std::vector<double>& v) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    };
    q(p.q.data);
    q(p.w_k.data);
    q(p.w_v.data);
    q(p.w1.data);
    q(p.b1);
    q(p.w2.data);
    q(p.b2);
}

// Static prompt-matrix checkpoints (the non-generated baseline) share the
// same container with a single tensor named "prompts".
inline std::vector<std::uint8_t> serialize_prompt_matrix(const Matrix& prompts) {
    std::vector<NamedTensor> ts;
    ts.push_back(detail::tensor_2d("prompts", prompts));
    return serialize_tensors(ts);
}

inline Matrix deserialize_prompt_matrix(const std::vector<std::uint8_t>& bytes) {
    const auto ts = deserialize_tensors(bytes);
    return detail::to_matrix(detail::find_tensor(ts, "prompts"));
}

inline bool checkpoint_holds_generator(const std::vector<std::uint8_t>& bytes) {
    const auto ts = deserialize_tensors(bytes);
    for (const auto& t : ts) {
        if (t.name == "q") return true;
    }
    return false;
}

}  // namespace vllfl
