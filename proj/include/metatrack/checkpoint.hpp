#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include "metatrack/config.hpp"
#include "metatrack/model.hpp"
#include "metatrack/optimizer.hpp"

namespace metatrack {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// Everything a tracking run needs from offline training: the model init,
// the raw initial rates, and the rate-predictor weights.
struct ModelParameters {
    ModelShape shape;
    int64_t hidden = 20;
    Tensor reduce_cf, corr, reduce_reg, reg;  // model init (theta)
    Tensor lambda0_raw;                       // [param_count], rate = sigmoid(raw)
    Tensor wx1, wh1, b1, wx2, wh2, b2, proj_w, proj_b;
};

inline ModelParameters init_parameters(const Config& cfg, Rng& rng) {
    ModelShape shape;
    shape.feat_channels = cfg.feat_channels;
    shape.reduced_channels = cfg.reduced_channels;
    shape.base_size = cfg.base_size;
    TrackingModel m = make_model(shape, rng);
    OptimizerParams w = make_optimizer(cfg.hidden, rng, cfg.head_bias);
    ModelParameters p;
    p.shape = shape;
    p.hidden = cfg.hidden;
    p.reduce_cf = m.reduce_cf.value();
    p.corr = m.corr.value();
    p.reduce_reg = m.reduce_reg.value();
    p.reg = m.reg.value();
    p.lambda0_raw = Tensor::full({shape.param_count()}, cfg.lambda0_init);
    p.wx1 = w.wx1.value();
    p.wh1 = w.wh1.value();
    p.b1 = w.b1.value();
    p.wx2 = w.wx2.value();
    p.wh2 = w.wh2.value();
    p.b2 = w.b2.value();
    p.proj_w = w.proj_w.value();
    p.proj_b = w.proj_b.value();
    return p;
}

namespace detail {

inline uint64_t shape_fingerprint(const ModelShape& s, int64_t hidden) {
    // FNV-1a over the four shape-determining integers
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](int64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= static_cast<uint64_t>(v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    mix(s.feat_channels);
    mix(s.reduced_channels);
    mix(s.base_size);
    mix(hidden);
    return h;
}

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    return v;
}

inline void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    put<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint32_t>(out, static_cast<uint32_t>(t.rank()));
    for (int64_t d = 0; d < t.rank(); ++d) put<uint64_t>(out, static_cast<uint64_t>(t.dim(d)));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * t.size()));
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParameters& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write("MTCK", 4);
    detail::put<uint32_t>(out, 1u);  // version
    detail::put<uint64_t>(out, detail::shape_fingerprint(p.shape, p.hidden));
    detail::put<uint32_t>(out, static_cast<uint32_t>(p.shape.feat_channels));
    detail::put<uint32_t>(out, static_cast<uint32_t>(p.shape.reduced_channels));
    detail::put<uint32_t>(out, static_cast<uint32_t>(p.shape.base_size));
    detail::put<uint32_t>(out, static_cast<uint32_t>(p.hidden));
    const std::pair<const char*, const Tensor*> entries[] = {
        {"reduce_cf", &p.reduce_cf}, {"corr", &p.corr},
        {"reduce_reg", &p.reduce_reg}, {"reg", &p.reg},
        {"lambda0_raw", &p.lambda0_raw},
        {"wx1", &p.wx1}, {"wh1", &p.wh1}, {"b1", &p.b1},
        {"wx2", &p.wx2}, {"wh2", &p.wh2}, {"b2", &p.b2},
        {"proj_w", &p.proj_w}, {"proj_b", &p.proj_b},
    };
    detail::put<uint32_t>(out, static_cast<uint32_t>(std::size(entries)));
    for (const auto& [name, tensor] : entries) detail::put_tensor(out, name, *tensor);
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline ModelParameters load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MTCK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint32_t version = detail::take<uint32_t>(in, path);
    if (version != 1)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " in " + path);
    const uint64_t fp = detail::take<uint64_t>(in, path);
    ModelParameters p;
    p.shape.feat_channels = detail::take<uint32_t>(in, path);
    p.shape.reduced_channels = detail::take<uint32_t>(in, path);
    p.shape.base_size = detail::take<uint32_t>(in, path);
    p.hidden = detail::take<uint32_t>(in, path);
    if (fp != detail::shape_fingerprint(p.shape, p.hidden))
        throw std::runtime_error("checkpoint: shape fingerprint mismatch in " + path);

    std::map<std::string, Tensor> banks;
    const uint32_t count = detail::take<uint32_t>(in, path);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = detail::take<uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t rank = detail::take<uint32_t>(in, path);
        std::vector<int64_t> dims(rank);
        for (uint32_t d = 0; d < rank; ++d)
            dims[d] = static_cast<int64_t>(detail::take<uint64_t>(in, path));
        Tensor t(dims);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * t.size()));
        if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
        banks.emplace(std::move(name), std::move(t));
    }
    auto grab = [&banks, &path](const char* name) {
        auto it = banks.find(name);
        if (it == banks.end())
            throw std::runtime_error("checkpoint: missing tensor '" + std::string(name) +
                                     "' in " + path);
        return std::move(it->second);
    };
    p.reduce_cf = grab("reduce_cf");
    p.corr = grab("corr");
    p.reduce_reg = grab("reduce_reg");
    p.reg = grab("reg");
    p.lambda0_raw = grab("lambda0_raw");
    p.wx1 = grab("wx1");
    p.wh1 = grab("wh1");
    p.b1 = grab("b1");
    p.wx2 = grab("wx2");
    p.wh2 = grab("wh2");
    p.b2 = grab("b2");
    p.proj_w = grab("proj_w");
    p.proj_b = grab("proj_b");

    const int64_t n = p.shape.param_count();
    if (p.lambda0_raw.size() != n)
        throw std::runtime_error("checkpoint: rate vector size mismatch in " + path);
    return p;
}

// Throws when a checkpoint cannot serve the given config.
inline void require_compatible(const ModelParameters& p, const Config& cfg) {
    auto bad = [](const std::string& what) {
        throw std::runtime_error("checkpoint: " + what + " does not match the config");
    };
    if (p.shape.feat_channels != cfg.feat_channels) bad("feat_channels");
    if (p.shape.reduced_channels != cfg.reduced_channels) bad("reduced_channels");
    if (p.shape.base_size != cfg.base_size) bad("base_size");
    if (p.hidden != cfg.hidden) bad("hidden");
}

// Leaf graph nodes for a training or tracking session.
struct RuntimeParameters {
    TrackingModel theta;
    Var lambda0_raw;
    OptimizerParams omega;
};

inline RuntimeParameters to_runtime(const ModelParameters& p) {
    RuntimeParameters r;
    r.theta.shape = p.shape;
    r.theta.reduce_cf = make_leaf(p.reduce_cf);
    r.theta.corr = make_leaf(p.corr);
    r.theta.reduce_reg = make_leaf(p.reduce_reg);
    r.theta.reg = make_leaf(p.reg);
    r.lambda0_raw = make_leaf(p.lambda0_raw);
    r.omega.hidden = p.hidden;
    r.omega.wx1 = make_leaf(p.wx1);
    r.omega.wh1 = make_leaf(p.wh1);
    r.omega.b1 = make_leaf(p.b1);
    r.omega.wx2 = make_leaf(p.wx2);
    r.omega.wh2 = make_leaf(p.wh2);
    r.omega.b2 = make_leaf(p.b2);
    r.omega.proj_w = make_leaf(p.proj_w);
    r.omega.proj_b = make_leaf(p.proj_b);
    return r;
}

inline ModelParameters from_runtime(const RuntimeParameters& r) {
    ModelParameters p;
    p.shape = r.theta.shape;
    p.hidden = r.omega.hidden;
    p.reduce_cf = r.theta.reduce_cf.value();
    p.corr = r.theta.corr.value();
    p.reduce_reg = r.theta.reduce_reg.value();
    p.reg = r.theta.reg.value();
    p.lambda0_raw = r.lambda0_raw.value();
    p.wx1 = r.omega.wx1.value();
    p.wh1 = r.omega.wh1.value();
    p.b1 = r.omega.b1.value();
    p.wx2 = r.omega.wx2.value();
    p.wh2 = r.omega.wh2.value();
    p.b2 = r.omega.b2.value();
    p.proj_w = r.omega.proj_w.value();
    p.proj_b = r.omega.proj_b.value();
    return p;
}

} // namespace metatrack
