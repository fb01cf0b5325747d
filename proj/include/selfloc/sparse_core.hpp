#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "selfloc/error.hpp"
#include "selfloc/tensor.hpp"

namespace selfloc {

struct Point3 {
    double x = 0, y = 0, z = 0;
    bool operator==(const Point3&) const = default;
};

/// Raw submap points in normalized units.
struct PointCloud {
    std::vector<Point3> points;

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }
    bool operator==(const PointCloud&) const = default;
};

struct VoxelCoord {
    std::int32_t batch = 0;
    std::int32_t i = 0, j = 0, k = 0;

    auto operator<=>(const VoxelCoord&) const = default;
};

struct Offset {
    std::int32_t di = 0, dj = 0, dk = 0;
    auto operator<=>(const Offset&) const = default;
};

struct VoxelCoordHash {
    std::size_t operator()(const VoxelCoord& c) const noexcept {
        std::uint64_t h = static_cast<std::uint32_t>(c.batch);
        h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(c.i);
        h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(c.j);
        h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(c.k);
        return static_cast<std::size_t>(h ^ (h >> 29));
    }
};

/// Floor division toward negative infinity (b > 0).
constexpr std::int32_t floor_div(std::int32_t a, std::int32_t b) {
    std::int32_t q = a / b;
    return (a % b != 0 && a < 0) ? q - 1 : q;
}

/// An immutable set of voxel coordinates at one stride, with O(1) lookup.
/// Row order is the insertion order handed to the constructor.
class CoordSet {
public:
    CoordSet(std::vector<VoxelCoord> coords, std::int32_t stride) : coords_(std::move(coords)), stride_(stride) {
        require(stride_ >= 1 && (stride_ & (stride_ - 1)) == 0, Errc::InvalidArgument,
                "stride must be a positive power of two");
        index_.reserve(coords_.size() * 2);
        for (std::size_t n = 0; n < coords_.size(); ++n) {
            const auto& c = coords_[n];
            require(c.i % stride_ == 0 && c.j % stride_ == 0 && c.k % stride_ == 0, Errc::StrideMismatch,
                    "coordinate not divisible by stride");
            auto [_, inserted] = index_.emplace(c, static_cast<std::int32_t>(n));
            require(inserted, Errc::InvalidArgument, "duplicate coordinate in CoordSet");
        }
    }

    /// Sorts lexicographically and removes duplicates before building.
    static std::shared_ptr<const CoordSet> from_unsorted(std::vector<VoxelCoord> coords, std::int32_t stride) {
        std::sort(coords.begin(), coords.end());
        coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        return std::make_shared<const CoordSet>(std::move(coords), stride);
    }

    std::size_t size() const noexcept { return coords_.size(); }
    bool empty() const noexcept { return coords_.empty(); }
    std::int32_t stride() const noexcept { return stride_; }
    const std::vector<VoxelCoord>& coords() const noexcept { return coords_; }
    const VoxelCoord& operator[](std::size_t n) const { return coords_[n]; }

    /// Row index of `c`, or -1.
    std::int32_t find(const VoxelCoord& c) const {
        auto it = index_.find(c);
        return it == index_.end() ? -1 : it->second;
    }

    bool operator==(const CoordSet& o) const { return stride_ == o.stride_ && coords_ == o.coords_; }

private:
    std::vector<VoxelCoord> coords_;
    std::int32_t stride_;
    std::unordered_map<VoxelCoord, std::int32_t, VoxelCoordHash> index_;
};

using CoordSetPtr = std::shared_ptr<const CoordSet>;

/// Features on an occupied voxel support. Row n of `features` belongs to
/// coordinate n of `support`.
template <typename T>
struct SparseTensor {
    CoordSetPtr support;
    Matrix<T> features;

    SparseTensor() = default;
    SparseTensor(CoordSetPtr s, Matrix<T> f) : support(std::move(s)), features(std::move(f)) {
        require(support != nullptr, Errc::InvalidArgument, "null support");
        require(features.rows() == support->size(), Errc::LengthMismatch,
                "feature rows must equal coordinate count");
    }

    std::size_t rows() const noexcept { return features.rows(); }
    std::size_t channels() const noexcept { return features.cols(); }
    std::int32_t stride() const noexcept { return support->stride(); }
};

struct KernelPair {
    std::int32_t in = 0;
    std::int32_t out = 0;
    bool operator==(const KernelPair&) const = default;
};

/// Gather/scatter plan of a sparse convolution: for each offset, the
/// (input_row, output_row) pairs it connects, ordered by output row.
struct KernelMap {
    std::vector<Offset> offsets;
    std::vector<std::vector<KernelPair>> pairs;
    std::size_t n_in = 0;
    std::size_t n_out = 0;

    std::size_t pair_count() const {
        std::size_t n = 0;
        for (const auto& p : pairs) n += p.size();
        return n;
    }
};

inline VoxelCoord quantize_point(const Point3& p, double cell, std::int32_t batch) {
    auto q = [cell](double v) {
        double f = std::floor(v / cell);
        require(std::abs(f) < 1e9, Errc::OutOfRange, "coordinate too large for voxel grid");
        return static_cast<std::int32_t>(f);
    };
    return {batch, q(p.x), q(p.y), q(p.z)};
}

/// Quantizes a cloud to a stride-1 support with a constant single-channel
/// occupancy feature. Rows are in ascending (batch, i, j, k) order.
inline SparseTensor<double> voxelize(const PointCloud& cloud, double cell, std::int32_t batch = 0) {
    require(cell > 0 && std::isfinite(cell), Errc::InvalidArgument, "cell must be positive");
    require(!cloud.empty(), Errc::EmptyCloud, "point cloud has no points");
    std::vector<VoxelCoord> coords;
    coords.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        require(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z), Errc::NonFinite,
                "non-finite point coordinate");
        coords.push_back(quantize_point(p, cell, batch));
    }
    auto support = CoordSet::from_unsorted(std::move(coords), 1);
    Matrix<double> features(support->size(), 1, 1.0);
    return {std::move(support), std::move(features)};
}

/// Offsets of a cubic kernel with `d` taps per axis. Odd `d` is centered on
/// zero; even `d` spans [0, d).
inline std::vector<Offset> cubic_offsets(int d) {
    require(d >= 1, Errc::InvalidArgument, "kernel size must be >= 1");
    const int lo = (d % 2 == 1) ? -(d - 1) / 2 : 0;
    std::vector<Offset> out;
    out.reserve(static_cast<std::size_t>(d) * d * d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c) out.push_back({lo + a, lo + b, lo + c});
    return out;
}

enum class Axis { X = 0, Y = 1, Z = 2 };

/// Centered offsets of a 1-D kernel with `d` taps along `axis`.
inline std::vector<Offset> axis_offsets(Axis axis, int d) {
    require(d >= 1 && d % 2 == 1, Errc::InvalidArgument, "axis kernels need an odd tap count");
    std::vector<Offset> out;
    for (int t = -(d - 1) / 2; t <= (d - 1) / 2; ++t) {
        Offset o;
        if (axis == Axis::X) o.di = t;
        if (axis == Axis::Y) o.dj = t;
        if (axis == Axis::Z) o.dk = t;
        out.push_back(o);
    }
    return out;
}

/// Pair (n_in, n_out) exists for offset o iff
/// coord(n_out) + dilation * stride_in * o == coord(n_in).
inline KernelMap build_kernel_map(const CoordSet& input, const CoordSet& output, std::span<const Offset> offsets,
                                  std::int32_t dilation = 1) {
    require(dilation >= 1, Errc::InvalidArgument, "dilation must be >= 1");
    require(output.stride() % input.stride() == 0, Errc::StrideMismatch,
            "output stride must be a multiple of the input stride");
    KernelMap map;
    map.offsets.assign(offsets.begin(), offsets.end());
    map.pairs.resize(offsets.size());
    map.n_in = input.size();
    map.n_out = output.size();
    const std::int32_t step = dilation * input.stride();
    for (std::size_t o = 0; o < offsets.size(); ++o) {
        const auto& off = offsets[o];
        auto& list = map.pairs[o];
        for (std::size_t m = 0; m < output.size(); ++m) {
            const auto& c = output[m];
            VoxelCoord target{c.batch, c.i + step * off.di, c.j + step * off.dj, c.k + step * off.dk};
            std::int32_t n = input.find(target);
            if (n >= 0) list.push_back({n, static_cast<std::int32_t>(m)});
        }
    }
    return map;
}

/// Swaps the roles of input and output rows, re-sorting each offset's pairs
/// by the new output row.
inline KernelMap transpose(const KernelMap& map) {
    KernelMap t;
    t.offsets = map.offsets;
    t.n_in = map.n_out;
    t.n_out = map.n_in;
    t.pairs.resize(map.pairs.size());
    for (std::size_t o = 0; o < map.pairs.size(); ++o) {
        auto& list = t.pairs[o];
        list.reserve(map.pairs[o].size());
        for (const auto& p : map.pairs[o]) list.push_back({p.out, p.in});
        std::stable_sort(list.begin(), list.end(), [](const KernelPair& a, const KernelPair& b) {
            return a.out < b.out;
        });
    }
    return t;
}

/// Floor-quantizes every coordinate to multiples of twice the input stride.
inline CoordSetPtr downsample_coords(const CoordSet& input) {
    const std::int32_t s = input.stride() * 2;
    std::vector<VoxelCoord> coords;
    coords.reserve(input.size());
    for (const auto& c : input.coords())
        coords.push_back({c.batch, floor_div(c.i, s) * s, floor_div(c.j, s) * s, floor_div(c.k, s) * s});
    return CoordSet::from_unsorted(std::move(coords), s);
}

/// Encoder supports recorded by stride, so the decoder can restore them.
class SupportRecord {
public:
    void record(CoordSetPtr set) { by_stride_[set->stride()] = std::move(set); }
    bool has(std::int32_t stride) const { return by_stride_.count(stride) != 0; }
    const CoordSetPtr& at(std::int32_t stride) const {
        auto it = by_stride_.find(stride);
        if (it == by_stride_.end())
            fail(Errc::MissingSkip, "no recorded support at stride " + std::to_string(stride));
        return it->second;
    }

private:
    std::map<std::int32_t, CoordSetPtr> by_stride_;
};

/// Returns the recorded encoder support at half the stride of `low`.
inline CoordSetPtr upsample_coords(const CoordSet& low, const SupportRecord& record) {
    require(low.stride() >= 2, Errc::MissingSkip, "cannot upsample a stride-1 support");
    return record.at(low.stride() / 2);
}

}  // namespace selfloc
