#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "selfloc/autodiff.hpp"
#include "selfloc/error.hpp"
#include "selfloc/gating.hpp"
#include "selfloc/nn_ops.hpp"
#include "selfloc/sparse_core.hpp"
#include "selfloc/tensor.hpp"

namespace selfloc {

using Descriptor = std::vector<double>;

inline char axis_char(Axis a) { return "xyz"[static_cast<int>(a)]; }

inline Axis parse_axis(char c) {
    switch (c) {
        case 'x': case 'X': return Axis::X;
        case 'y': case 'Y': return Axis::Y;
        case 'z': case 'Z': return Axis::Z;
        default: fail(Errc::InvalidArgument, std::string("unknown axis '") + c + "'");
    }
}

struct SacbConfig {
    std::array<Axis, 3> axis_order{Axis::X, Axis::Y, Axis::Z};
    std::optional<Axis> extra_axis = Axis::X;
    std::int32_t extra_dilation = 1;
    int taps = 3;
    std::size_t channels = 1;
    NormMode norm = NormMode::Affine;
};

struct ModelConfig {
    int k0 = 5;
    std::size_t c0 = 32;
    int down_depth = 4;
    int up_depth = 2;
    std::vector<std::size_t> channels{32, 64, 64, 256};
    std::size_t d2 = 256;
    int taps = 3;
    std::array<Axis, 3> axis_order{Axis::X, Axis::Y, Axis::Z};
    std::optional<Axis> extra_axis = Axis::X;
    std::int32_t extra_dilation = 2;
    /// 1-based index of the SACB whose extra layer is dilated; 0 = none.
    int dilation_depth = 1;
    SffbConfig sffb{};
    double gem_p = 3.0;
    double gem_eps = 1e-6;
    double voxel_size = 0.01;
    NormMode norm = NormMode::Affine;

    /// Scaled-down model for desk runs.
    static ModelConfig desk() {
        ModelConfig c;
        c.c0 = 16;
        c.channels = {16, 32, 32, 32};
        c.d2 = 32;
        c.voxel_size = 0.04;
        return c;
    }

    std::size_t d1() const { return channels.back(); }

    void validate() const {
        require(k0 >= 1, Errc::InvalidArgument, "k0 must be >= 1");
        require(c0 >= 1 && d2 >= 1, Errc::InvalidArgument, "channel widths must be >= 1");
        require(up_depth >= 1 && up_depth < down_depth, Errc::InvalidArgument, "need 1 <= up_depth < down_depth");
        require(channels.size() == static_cast<std::size_t>(down_depth), Errc::InvalidArgument,
                "channel plan length must equal down_depth");
        for (auto c : channels) require(c >= 1, Errc::InvalidArgument, "channel widths must be >= 1");
        require(taps >= 1 && taps % 2 == 1, Errc::InvalidArgument, "taps must be odd");
        require(extra_dilation >= 1, Errc::InvalidArgument, "extra_dilation must be >= 1");
        require(dilation_depth >= 0 && dilation_depth <= down_depth, Errc::InvalidArgument,
                "dilation_depth out of range");
        require(gem_p >= 1.0 && gem_eps > 0.0, Errc::InvalidArgument, "GeM needs p >= 1 and eps > 0");
        require(voxel_size > 0.0, Errc::InvalidArgument, "voxel_size must be positive");
    }

    /// Configuration of the SACB at encoder level `level` (0-based).
    SacbConfig sacb(int level) const {
        SacbConfig s;
        s.axis_order = axis_order;
        s.extra_axis = extra_axis;
        s.extra_dilation = (dilation_depth == level + 1) ? extra_dilation : 1;
        s.taps = taps;
        s.channels = channels.at(static_cast<std::size_t>(level));
        s.norm = norm;
        return s;
    }

    /// Encoder levels whose SACB output is kept for a decoder skip.
    bool records_skip(int d) const { return down_depth - up_depth - 1 <= d && d < down_depth - 1; }

    bool operator==(const ModelConfig&) const = default;
};

// --- config file: `key = value` lines -------------------------------------

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Reads `key = value` lines; blank lines and `#` comments are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in, const std::string& what) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(Errc::ParseError, what + " line " + std::to_string(line_no) + ": expected 'key = value'");
        kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
}

inline std::string to_string(const ModelConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "k0 = " << c.k0 << "\n";
    os << "c0 = " << c.c0 << "\n";
    os << "down_depth = " << c.down_depth << "\n";
    os << "up_depth = " << c.up_depth << "\n";
    os << "channels = ";
    for (std::size_t i = 0; i < c.channels.size(); ++i) os << (i ? "," : "") << c.channels[i];
    os << "\n";
    os << "d2 = " << c.d2 << "\n";
    os << "taps = " << c.taps << "\n";
    os << "axis_order = " << axis_char(c.axis_order[0]) << axis_char(c.axis_order[1]) << axis_char(c.axis_order[2])
       << "\n";
    os << "extra_axis = " << (c.extra_axis ? std::string(1, axis_char(*c.extra_axis)) : std::string("none")) << "\n";
    os << "extra_dilation = " << c.extra_dilation << "\n";
    os << "dilation_depth = " << c.dilation_depth << "\n";
    os << "sffb_order = " << c.sffb.str() << "\n";
    os << "gem_p = " << c.gem_p << "\n";
    os << "gem_eps = " << c.gem_eps << "\n";
    os << "voxel_size = " << c.voxel_size << "\n";
    os << "norm = " << (c.norm == NormMode::Stats ? "stats" : "affine") << "\n";
    return os.str();
}

/// Parses a config file. A `preset = desk|default` line, if present, sets the
/// baseline that the remaining keys override.
inline ModelConfig parse_config(std::istream& in) {
    const auto kv = parse_key_values(in, "config");
    ModelConfig c;
    for (const auto& [key, value] : kv)
        if (key == "preset") {
            if (value == "desk") c = ModelConfig::desk();
            else if (value != "default") fail(Errc::ParseError, "unknown preset '" + value + "'");
        }
    auto to_int = [](const std::string& k, const std::string& v) {
        std::size_t pos = 0;
        int r = 0;
        try {
            r = std::stoi(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != v.size() || v.empty()) fail(Errc::ParseError, "bad integer for '" + k + "': " + v);
        return r;
    };
    auto to_double = [](const std::string& k, const std::string& v) {
        std::size_t pos = 0;
        double r = 0;
        try {
            r = std::stod(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != v.size() || v.empty()) fail(Errc::ParseError, "bad number for '" + k + "': " + v);
        return r;
    };
    auto to_size = [&](const std::string& k, const std::string& v) {
        int r = to_int(k, v);
        if (r < 1) fail(Errc::ParseError, "'" + k + "' must be >= 1");
        return static_cast<std::size_t>(r);
    };
    for (const auto& [key, value] : kv) {
        if (key == "preset") continue;
        else if (key == "k0") c.k0 = to_int(key, value);
        else if (key == "c0") c.c0 = to_size(key, value);
        else if (key == "down_depth") c.down_depth = to_int(key, value);
        else if (key == "up_depth") c.up_depth = to_int(key, value);
        else if (key == "channels") {
            c.channels.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) c.channels.push_back(to_size(key, trim(item)));
        } else if (key == "d2") c.d2 = to_size(key, value);
        else if (key == "taps") c.taps = to_int(key, value);
        else if (key == "axis_order") {
            if (value.size() != 3) fail(Errc::ParseError, "axis_order needs three axes");
            for (int i = 0; i < 3; ++i) c.axis_order[i] = parse_axis(value[i]);
        } else if (key == "extra_axis") {
            if (value == "none") c.extra_axis.reset();
            else if (value.size() == 1) c.extra_axis = parse_axis(value[0]);
            else fail(Errc::ParseError, "bad extra_axis '" + value + "'");
        } else if (key == "extra_dilation") c.extra_dilation = to_int(key, value);
        else if (key == "dilation_depth") c.dilation_depth = to_int(key, value);
        else if (key == "sffb_order") c.sffb = SffbConfig::parse(value);
        else if (key == "gem_p") c.gem_p = to_double(key, value);
        else if (key == "gem_eps") c.gem_eps = to_double(key, value);
        else if (key == "voxel_size") c.voxel_size = to_double(key, value);
        else if (key == "norm") {
            if (value == "stats") c.norm = NormMode::Stats;
            else if (value == "affine") c.norm = NormMode::Affine;
            else fail(Errc::ParseError, "bad norm '" + value + "'");
        }
        else fail(Errc::ParseError, "unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

// --- weight naming ----------------------------------------------------------

namespace names {
inline std::string enc(int d) { return "enc" + std::to_string(d); }
inline std::string dec(int u) { return "dec" + std::to_string(u); }
inline std::string sub(const std::string& sacb, int s) { return sacb + ".sub" + std::to_string(s); }
inline std::string axis_layer(const std::string& sub, int a) { return sub + ".ax" + std::to_string(a); }
}  // namespace names

/// Every tensor a configuration needs, with its shape. Conv kernels are
/// [taps_x, taps_y, taps_z, d_in, d_out]; 1-D taps are [taps, d_in, d_out].
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> weight_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    auto norm = [&](const std::string& p, std::size_t c) {
        out.push_back({p + ".scale", {c}});
        out.push_back({p + ".shift", {c}});
    };
    const auto k0 = static_cast<std::size_t>(cfg.k0);
    const auto taps = static_cast<std::size_t>(cfg.taps);
    out.push_back({"init.conv", {k0, k0, k0, 1, cfg.c0}});
    norm("init.norm", cfg.c0);
    std::size_t prev = cfg.c0;
    for (int d = 0; d < cfg.down_depth; ++d) {
        const std::size_t c = cfg.channels[d];
        const auto e = names::enc(d);
        out.push_back({e + ".down.conv", {2, 2, 2, prev, c}});
        norm(e + ".down.norm", c);
        for (int s = 0; s < 2; ++s) {
            const auto sb = names::sub(e + ".sacb", s);
            for (int a = 0; a < 3; ++a) {
                out.push_back({names::axis_layer(sb, a) + ".taps", {taps, c, c}});
                norm(names::axis_layer(sb, a) + ".norm", c);
            }
            if (cfg.extra_axis) {
                out.push_back({sb + ".extra.taps", {taps, c, c}});
                norm(sb + ".extra.norm", c);
            }
        }
        prev = c;
    }
    auto sffb = [&](const std::string& p) {
        const std::size_t c = cfg.d2;
        for (auto kind : cfg.sffb.order) {
            if (kind == GateKind::Channel) {
                out.push_back({p + ".channel.w", {c, c}});
                out.push_back({p + ".channel.b", {c}});
            } else {
                out.push_back({p + ".point.w1", {c, c}});
                out.push_back({p + ".point.b1", {c}});
                out.push_back({p + ".point.w2", {c, 1}});
                out.push_back({p + ".point.b2", {1}});
            }
        }
    };
    std::size_t width = cfg.d1();
    for (int u = 0; u < cfg.up_depth; ++u) {
        const auto dc = names::dec(u);
        const int skip_level = cfg.down_depth - 2 - u;
        out.push_back({dc + ".up.conv", {2, 2, 2, width, cfg.d2}});
        sffb(dc + ".sffb_up");
        out.push_back({dc + ".align.w", {cfg.channels[skip_level], cfg.d2}});
        sffb(dc + ".sffb_skip");
        width = cfg.d2;
    }
    out.push_back({"gem.p", {1}});
    return out;
}

/// Learned tensors of a model plus the configuration they were built for.
struct ModelWeights {
    TensorStore tensors;

    void check_complete(const ModelConfig& cfg) const {
        for (const auto& [name, shape] : weight_shapes(cfg)) {
            if (!tensors.contains(name)) fail(Errc::IncompleteWeights, "missing tensor '" + name + "'");
            if (tensors.at(name).shape != shape) fail(Errc::IncompleteWeights, "shape mismatch for '" + name + "'");
        }
    }
    bool operator==(const ModelWeights&) const = default;
};

/// Seeded initialization: He-normal conv weights, identity norms, gate
/// weights N(0, 0.01) with zero biases, GeM p from the config.
inline ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    ModelWeights w;
    std::mt19937_64 rng(seed);
    for (const auto& [name, shape] : weight_shapes(cfg)) {
        Tensor& t = w.tensors.add(name, shape);
        auto ends_with = [&](std::string_view suf) {
            return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
        };
        if (ends_with(".scale")) {
            std::fill(t.values.begin(), t.values.end(), 1.0);
        } else if (ends_with(".shift") || ends_with(".b") || ends_with(".b1") || ends_with(".b2")) {
            // zeros
        } else if (name == "gem.p") {
            t.values[0] = cfg.gem_p;
        } else if (name.find(".channel.") != std::string::npos || name.find(".point.") != std::string::npos) {
            std::normal_distribution<double> nd(0.0, 0.01);
            for (auto& v : t.values) v = nd(rng);
        } else {
            // fan-in = every dimension but the output one
            std::size_t fan_in = 1;
            for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
            std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            for (auto& v : t.values) v = nd(rng);
        }
    }
    return w;
}

// --- weight container -------------------------------------------------------
//
// "SFLW" | u32 version | u32 manifest length | manifest (UTF-8 lines
// "<name> f64 <d0>x<d1>x...") | little-endian payloads in manifest order.

inline constexpr std::uint32_t kWeightFormatVersion = 1;

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) fail(Errc::BadSize, "truncated weight container header");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}
inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline double get_f64(const unsigned char* b) {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}
inline float get_f32(const unsigned char* b) {
    std::uint32_t u = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                      std::uint32_t(b[3]) << 24;
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}
}  // namespace detail

inline void write_weights(std::ostream& os, const ModelWeights& w) {
    std::ostringstream manifest;
    for (const auto& [name, t] : w.tensors) {
        manifest << name << " f64 ";
        for (std::size_t i = 0; i < t.shape.size(); ++i) manifest << (i ? "x" : "") << t.shape[i];
        manifest << "\n";
    }
    const std::string m = manifest.str();
    os.write("SFLW", 4);
    detail::put_u32(os, kWeightFormatVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(m.size()));
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    for (const auto& [_, t] : w.tensors)
        for (double v : t.values) detail::put_f64(os, v);
}

inline ModelWeights read_weights(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SFLW", 4) != 0) fail(Errc::ParseError, "not an SFLW container");
    const auto version = detail::get_u32(is);
    if (version != kWeightFormatVersion)
        fail(Errc::ParseError, "unsupported weight container version " + std::to_string(version));
    const auto len = detail::get_u32(is);
    std::string m(len, '\0');
    if (!is.read(m.data(), len)) fail(Errc::BadSize, "truncated manifest");
    ModelWeights w;
    std::istringstream ms(m);
    std::string line;
    std::vector<std::tuple<std::string, bool, std::vector<std::size_t>>> entries;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, type, dims;
        if (!(ls >> name >> type >> dims)) fail(Errc::ParseError, "bad manifest line '" + line + "'");
        if (type != "f64" && type != "f32") fail(Errc::ParseError, "unsupported element type '" + type + "'");
        std::vector<std::size_t> shape;
        std::stringstream ds(dims);
        std::string d;
        while (std::getline(ds, d, 'x')) {
            try {
                shape.push_back(static_cast<std::size_t>(std::stoull(d)));
            } catch (const std::exception&) {
                fail(Errc::ParseError, "bad shape in manifest line '" + line + "'");
            }
        }
        entries.emplace_back(name, type == "f64", shape);
    }
    for (const auto& [name, is64, shape] : entries) {
        Tensor t(shape);
        const std::size_t width = is64 ? 8 : 4;
        std::vector<unsigned char> buf(t.size() * width);
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            fail(Errc::BadSize, "truncated payload for '" + name + "'");
        for (std::size_t i = 0; i < t.size(); ++i)
            t.values[i] = is64 ? detail::get_f64(&buf[i * 8]) : detail::get_f32(&buf[i * 4]);
        w.tensors.set(name, std::move(t));
    }
    return w;
}

// --- forward plan -------------------------------------------------------------

using MapPtr = std::shared_ptr<const KernelMap>;

/// Weight-independent coordinate structures for one cloud: the voxelized
/// input, the support at every encoder level, and every kernel map the
/// forward pass consumes.
struct ForwardPlan {
    SparseTensor<double> input;
    std::vector<CoordSetPtr> levels;  // levels[l] has stride 2^l
    MapPtr init_map;
    std::vector<MapPtr> down_maps;  // down_maps[d]: levels[d] -> levels[d+1]
    std::vector<MapPtr> up_maps;    // up_maps[u]: decoder step u, coarse -> fine
    std::map<std::tuple<int, Axis, std::int32_t>, MapPtr> axis_maps;

    const KernelMap& axis_map(int level, Axis axis, std::int32_t dilation) const {
        return *axis_maps.at({level, axis, dilation});
    }
    MapPtr axis_map_ptr(int level, Axis axis, std::int32_t dilation) const {
        return axis_maps.at({level, axis, dilation});
    }
};

/// Adds the same-support axis maps an SACB with `sc` needs at `level`.
inline void add_axis_maps(ForwardPlan& plan, int level, const SacbConfig& sc) {
    const auto& support = *plan.levels.at(static_cast<std::size_t>(level));
    auto ensure = [&](Axis a, std::int32_t dil) {
        auto key = std::make_tuple(level, a, dil);
        if (plan.axis_maps.count(key)) return;
        const auto offs = axis_offsets(a, sc.taps);
        plan.axis_maps[key] = std::make_shared<const KernelMap>(build_kernel_map(support, support, offs, dil));
    };
    for (Axis a : sc.axis_order) ensure(a, 1);
    if (sc.extra_axis) ensure(*sc.extra_axis, sc.extra_dilation);
}

inline ForwardPlan make_plan(const PointCloud& cloud, const ModelConfig& cfg) {
    cfg.validate();
    ForwardPlan plan;
    plan.input = voxelize(cloud, cfg.voxel_size);
    plan.levels.push_back(plan.input.support);
    const auto init_offsets = cubic_offsets(cfg.k0);
    plan.init_map = std::make_shared<const KernelMap>(
        build_kernel_map(*plan.input.support, *plan.input.support, init_offsets, 1));
    const auto down_offsets = cubic_offsets(2);
    SupportRecord record;
    record.record(plan.input.support);
    for (int d = 0; d < cfg.down_depth; ++d) {
        const auto& fine = plan.levels.back();
        auto coarse = downsample_coords(*fine);
        if (coarse->empty()) fail(Errc::SupportCollapse, "level " + std::to_string(d + 1) + " has no coordinates");
        plan.down_maps.push_back(
            std::make_shared<const KernelMap>(build_kernel_map(*fine, *coarse, down_offsets, 1)));
        record.record(coarse);
        plan.levels.push_back(std::move(coarse));
        add_axis_maps(plan, d + 1, cfg.sacb(d));
    }
    for (int u = 0; u < cfg.up_depth; ++u) {
        const int coarse_level = cfg.down_depth - u;
        const auto fine = upsample_coords(*plan.levels[coarse_level], record);
        plan.up_maps.push_back(std::make_shared<const KernelMap>(
            transpose(build_kernel_map(*fine, *plan.levels[coarse_level], down_offsets, 1))));
    }
    return plan;
}

// --- taped forward ------------------------------------------------------------

struct AttentionDump {
    std::string name;  // e.g. "dec1.sffb_skip"
    CoordSetPtr support;
    std::vector<double> point;    // per row; empty if no point gate
    std::vector<double> channel;  // per channel; empty if no channel gate
};

struct ForwardTrace {
    std::vector<std::pair<std::int32_t, std::size_t>> supports;  // (stride, coordinate count) per level
    std::vector<AttentionDump> attention;
};

/// Two residual sub-blocks of axis convolutions on `level`'s support.
inline NodeId taped_sacb(Tape& t, NodeId x, const ForwardPlan& plan, int level, const std::string& prefix,
                         const SacbConfig& sc) {
    for (int s = 0; s < 2; ++s) {
        const auto sb = names::sub(prefix, s);
        NodeId h = x;
        for (int a = 0; a < 3; ++a) {
            const auto layer = names::axis_layer(sb, a);
            h = ad::conv(t, h, plan.axis_map_ptr(level, sc.axis_order[a], 1), layer + ".taps", sc.channels);
            h = ad::norm_act(t, h, layer + ".norm", Activation::Relu, sc.norm);
        }
        if (sc.extra_axis) {
            h = ad::conv(t, h, plan.axis_map_ptr(level, *sc.extra_axis, sc.extra_dilation), sb + ".extra.taps",
                         sc.channels);
            h = ad::norm_act(t, h, sb + ".extra.norm", Activation::Relu, sc.norm);
        }
        x = ad::relu(t, ad::add(t, h, x));
    }
    return x;
}

inline NodeId taped_sffb(Tape& t, NodeId x, const std::string& prefix, const SffbConfig& cfg, AttentionDump* dump) {
    for (auto kind : cfg.order) {
        if (kind == GateKind::Channel)
            x = ad::channel_gate(t, x, prefix + ".channel", dump ? &dump->channel : nullptr);
        else
            x = ad::point_gate(t, x, prefix + ".point", dump ? &dump->point : nullptr);
    }
    return x;
}

/// Full encoder-decoder pass on a tape whose parameter store holds the
/// weights. Returns the 1 x d2 descriptor node.
inline NodeId taped_forward(Tape& t, const ForwardPlan& plan, const ModelConfig& cfg, ForwardTrace* trace = nullptr) {
    NodeId x = t.input(plan.input.features);
    x = ad::conv(t, x, plan.init_map, "init.conv", cfg.c0);
    x = ad::norm_act(t, x, "init.norm", Activation::Relu, cfg.norm);
    std::vector<std::pair<NodeId, int>> skips;  // (node, level)
    for (int d = 0; d < cfg.down_depth; ++d) {
        const auto e = names::enc(d);
        x = ad::conv(t, x, plan.down_maps[d], e + ".down.conv", cfg.channels[d]);
        x = ad::norm_act(t, x, e + ".down.norm", Activation::Relu, cfg.norm);
        x = taped_sacb(t, x, plan, d + 1, e + ".sacb", cfg.sacb(d));
        if (cfg.records_skip(d)) skips.emplace_back(x, d + 1);
    }
    int level = cfg.down_depth;
    for (int u = 0; u < cfg.up_depth; ++u) {
        const auto dc = names::dec(u);
        const auto& [skip, skip_level] = skips[skips.size() - 1 - static_cast<std::size_t>(u)];
        require(skip_level == level - 1, Errc::MissingSkip, "decoder skip does not match upsampled level");
        AttentionDump up_dump{dc + ".sffb_up", plan.levels[level - 1], {}, {}};
        AttentionDump skip_dump{dc + ".sffb_skip", plan.levels[level - 1], {}, {}};
        x = ad::conv(t, x, plan.up_maps[u], dc + ".up.conv", cfg.d2);
        x = taped_sffb(t, x, dc + ".sffb_up", cfg.sffb, trace ? &up_dump : nullptr);
        NodeId y = ad::linear(t, skip, dc + ".align.w", cfg.d2);
        y = taped_sffb(t, y, dc + ".sffb_skip", cfg.sffb, trace ? &skip_dump : nullptr);
        x = ad::add(t, x, y);
        --level;
        if (trace) {
            trace->attention.push_back(std::move(up_dump));
            trace->attention.push_back(std::move(skip_dump));
        }
    }
    if (trace) {
        trace->supports.clear();
        for (const auto& l : plan.levels) trace->supports.emplace_back(l->stride(), l->size());
    }
    return ad::gem(t, x, "gem.p", cfg.gem_eps);
}

inline Descriptor forward(const ForwardPlan& plan, const ModelWeights& weights, const ModelConfig& cfg,
                          ForwardTrace* trace = nullptr) {
    Tape t(&weights.tensors, /*record=*/false);
    const NodeId g = taped_forward(t, plan, cfg, trace);
    return t.value(g).data();
}

/// Point cloud to global descriptor.
inline Descriptor forward(const PointCloud& cloud, const ModelWeights& weights, const ModelConfig& cfg,
                          ForwardTrace* trace = nullptr) {
    weights.check_complete(cfg);
    return forward(make_plan(cloud, cfg), weights, cfg, trace);
}

/// Folds warmup statistics into the affine norms: every norm input is
/// standardized per cloud over `plans`, the per-channel mean and variance are
/// pooled across clouds, and scale/shift are set so the pooled input maps to
/// zero mean, unit variance. Layers are visited in a single pass, so each
/// layer's statistics are those seen under per-cloud standardization upstream.
inline void calibrate_norms(ModelWeights& weights, const ModelConfig& cfg, const std::vector<const ForwardPlan*>& plans) {
    require(!plans.empty(), Errc::InsufficientData, "norm calibration needs at least one cloud");
    ModelConfig stats_cfg = cfg;
    stats_cfg.norm = NormMode::Stats;
    struct Pooled {
        std::vector<double> sum_mean, sum_sq;  // sums of per-cloud mean and E[x^2]
        std::size_t clouds = 0;
    };
    std::map<std::string, Pooled> pooled;
    for (const ForwardPlan* plan : plans) {
        Tape t(&weights.tensors, false);
        t.norm_observer = [&](const std::string& prefix, const std::vector<double>& mean,
                              const std::vector<double>& inv_std) {
            auto& p = pooled[prefix];
            if (p.sum_mean.empty()) p.sum_mean.assign(mean.size(), 0.0), p.sum_sq.assign(mean.size(), 0.0);
            for (std::size_t c = 0; c < mean.size(); ++c) {
                const double var = 1.0 / (inv_std[c] * inv_std[c]) - kNormEps;
                p.sum_mean[c] += mean[c];
                p.sum_sq[c] += var + mean[c] * mean[c];
            }
            ++p.clouds;
        };
        taped_forward(t, *plan, stats_cfg);
    }
    for (const auto& [prefix, p] : pooled) {
        auto& scale = weights.tensors.at(prefix + ".scale").values;
        auto& shift = weights.tensors.at(prefix + ".shift").values;
        const double inv_n = 1.0 / static_cast<double>(p.clouds);
        for (std::size_t c = 0; c < scale.size(); ++c) {
            const double mean = p.sum_mean[c] * inv_n;
            const double var = std::max(0.0, p.sum_sq[c] * inv_n - mean * mean);
            const double k = 1.0 / std::sqrt(var + kNormEps);
            scale[c] = k;
            shift[c] = -mean * k;
        }
    }
}

// --- standalone block ops -----------------------------------------------------

/// K0^3 convolution to C0 channels on the input support, then norm + ReLU.
/// `weights` must hold init.conv / init.norm.*.
inline SparseTensor<double> initial_convolution(const SparseTensor<double>& x, const TensorStore& weights,
                                                const ModelConfig& cfg) {
    require(x.stride() == 1, Errc::StrideMismatch, "initial convolution runs at stride 1");
    require(x.channels() == 1, Errc::ChannelMismatch, "initial convolution expects one input channel");
    const auto offs = cubic_offsets(cfg.k0);
    auto map = std::make_shared<const KernelMap>(build_kernel_map(*x.support, *x.support, offs, 1));
    Tape t(&weights, false);
    NodeId n = t.input(x.features);
    n = ad::conv(t, n, map, "init.conv", cfg.c0);
    n = ad::norm_act(t, n, "init.norm", Activation::Relu, cfg.norm);
    return {x.support, t.value(n)};
}

/// One SACB on `x`'s support. `prefix` selects the block's tensors in `weights`.
inline SparseTensor<double> sacb(const SparseTensor<double>& x, const TensorStore& weights, const std::string& prefix,
                                 const SacbConfig& sc) {
    require(x.channels() == sc.channels, Errc::ChannelMismatch, "SACB channel mismatch");
    ForwardPlan plan;
    plan.levels.push_back(x.support);
    add_axis_maps(plan, 0, sc);
    Tape t(&weights, false);
    NodeId n = taped_sacb(t, t.input(x.features), plan, 0, prefix, sc);
    return {x.support, t.value(n)};
}

// --- parameter accounting -------------------------------------------------------

struct LayerCount {
    std::string name;
    std::size_t params = 0;
    std::size_t dense_equivalent = 0;  // same layer with each x/y/z triple replaced by one d^3 kernel
};

struct ParameterReport {
    std::vector<LayerCount> layers;
    std::size_t total = 0;
    std::size_t dense_total = 0;

    double reduction() const {
        return dense_total == 0 ? 0.0 : 1.0 - static_cast<double>(total) / static_cast<double>(dense_total);
    }
};

/// Parameter counts from the configuration alone (independent of any
/// ModelWeights instance).
inline ParameterReport parameter_count(const ModelConfig& cfg) {
    cfg.validate();
    ParameterReport r;
    auto add = [&](std::string name, std::size_t p, std::size_t dense) {
        r.layers.push_back({std::move(name), p, dense});
        r.total += p;
        r.dense_total += dense;
    };
    const std::size_t k0 = cfg.k0, d = cfg.taps;
    add("init.conv", k0 * k0 * k0 * cfg.c0, k0 * k0 * k0 * cfg.c0);
    add("init.norm", 2 * cfg.c0, 2 * cfg.c0);
    std::size_t prev = cfg.c0;
    for (int lv = 0; lv < cfg.down_depth; ++lv) {
        const std::size_t c = cfg.channels[lv];
        const auto e = names::enc(lv);
        add(e + ".down.conv", 8 * prev * c, 8 * prev * c);
        add(e + ".down.norm", 2 * c, 2 * c);
        for (int s = 0; s < 2; ++s) {
            const auto sb = names::sub(e + ".sacb", s);
            add(sb + ".core", 3 * d * c * c, d * d * d * c * c);
            add(sb + ".core.norm", 3 * 2 * c, 3 * 2 * c);
            if (cfg.extra_axis) {
                add(sb + ".extra", d * c * c, d * c * c);
                add(sb + ".extra.norm", 2 * c, 2 * c);
            }
        }
        prev = c;
    }
    std::size_t gates = 0;
    for (auto kind : cfg.sffb.order)
        gates += kind == GateKind::Channel ? cfg.d2 * cfg.d2 + cfg.d2 : cfg.d2 * cfg.d2 + 2 * cfg.d2 + 1;
    std::size_t width = cfg.d1();
    for (int u = 0; u < cfg.up_depth; ++u) {
        const auto dc = names::dec(u);
        add(dc + ".up.conv", 8 * width * cfg.d2, 8 * width * cfg.d2);
        add(dc + ".sffb_up", gates, gates);
        add(dc + ".align", cfg.channels[cfg.down_depth - 2 - u] * cfg.d2, cfg.channels[cfg.down_depth - 2 - u] * cfg.d2);
        add(dc + ".sffb_skip", gates, gates);
        width = cfg.d2;
    }
    add("gem.p", 1, 1);
    return r;
}

}  // namespace selfloc
