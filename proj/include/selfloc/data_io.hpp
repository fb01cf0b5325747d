#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "selfloc/error.hpp"
#include "selfloc/sparse_core.hpp"

namespace selfloc {

namespace fs = std::filesystem;

inline constexpr std::size_t kSubmapPoints = 4096;
inline constexpr std::size_t kBinBytes = kSubmapPoints * 3 * 8;

// --- benchmark .bin submaps -------------------------------------------------

/// 4096 points, point-major, little-endian float64, every value in [-1, 1].
inline PointCloud parse_bin(const std::vector<unsigned char>& bytes) {
    if (bytes.size() != kBinBytes)
        fail(Errc::BadSize, "expected " + std::to_string(kBinBytes) + " bytes, got " + std::to_string(bytes.size()));
    PointCloud cloud;
    cloud.points.resize(kSubmapPoints);
    for (std::size_t i = 0; i < kSubmapPoints * 3; ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) u |= std::uint64_t(bytes[i * 8 + b]) << (8 * b);
        double v;
        std::memcpy(&v, &u, 8);
        if (!std::isfinite(v)) fail(Errc::NonFinite, "non-finite value at index " + std::to_string(i));
        if (v < -1.0 || v > 1.0) fail(Errc::OutOfRange, "value outside [-1, 1] at index " + std::to_string(i));
        auto& p = cloud.points[i / 3];
        (i % 3 == 0 ? p.x : i % 3 == 1 ? p.y : p.z) = v;
    }
    return cloud;
}

inline std::vector<unsigned char> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::Io, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline PointCloud load_bin(const fs::path& path) { return parse_bin(read_file_bytes(path)); }

inline std::vector<unsigned char> serialize_bin(const PointCloud& cloud) {
    require(cloud.size() == kSubmapPoints, Errc::BadSize, "submaps hold exactly 4096 points");
    std::vector<unsigned char> out(kBinBytes);
    std::size_t i = 0;
    for (const auto& p : cloud.points)
        for (double v : {p.x, p.y, p.z}) {
            std::uint64_t u;
            std::memcpy(&u, &v, 8);
            for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<unsigned char>(u >> (8 * b));
            ++i;
        }
    return out;
}

/// Writes to a temporary sibling and renames, so readers never see a partial file.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(Errc::Io, "cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(Errc::Io, "write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

inline void write_bin(const fs::path& path, const PointCloud& cloud) {
    const auto bytes = serialize_bin(cloud);
    write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

// --- catalogs ---------------------------------------------------------------

struct CatalogRow {
    std::string id;
    std::string file;
    double easting = 0;
    double northing = 0;
    bool operator==(const CatalogRow&) const = default;
};

struct Catalog {
    std::vector<CatalogRow> rows;
    fs::path base_dir;  // relative file paths resolve against this

    fs::path resolve(const CatalogRow& r) const {
        fs::path p(r.file);
        return p.is_absolute() ? p : base_dir / p;
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

/// CSV with header `id,file,easting,northing`.
inline Catalog parse_catalog(std::istream& in, const fs::path& base_dir = {}, bool check_files = false) {
    Catalog cat;
    cat.base_dir = base_dir;
    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) fail(Errc::ParseError, "line 1: empty catalog");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,file,easting,northing")
        fail(Errc::ParseError, "line 1: expected header 'id,file,easting,northing'");
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4)
            fail(Errc::ParseError, "line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                       std::to_string(f.size()));
        CatalogRow r{f[0], f[1], 0, 0};
        for (int k = 0; k < 2; ++k) {
            const auto& s = f[2 + k];
            std::size_t pos = 0;
            double v = 0;
            try {
                v = std::stod(s, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (s.empty() || pos != s.size() || !std::isfinite(v))
                fail(Errc::ParseError, "line " + std::to_string(line_no) + ": bad number '" + s + "'");
            (k == 0 ? r.easting : r.northing) = v;
        }
        if (r.id.empty()) fail(Errc::ParseError, "line " + std::to_string(line_no) + ": empty id");
        if (!seen.insert(r.id).second) fail(Errc::DuplicateId, "duplicate id '" + r.id + "'");
        cat.rows.push_back(std::move(r));
        if (check_files && !fs::exists(cat.resolve(cat.rows.back())))
            fail(Errc::Io, "line " + std::to_string(line_no) + ": missing file '" + cat.rows.back().file + "'");
    }
    return cat;
}

inline Catalog load_catalog(const fs::path& path, bool check_files = true) {
    std::ifstream in(path);
    if (!in) fail(Errc::Io, "cannot open '" + path.string() + "'");
    return parse_catalog(in, path.parent_path(), check_files);
}

inline std::string format_catalog(const Catalog& cat) {
    std::string out = "id,file,easting,northing\n";
    char buf[64];
    for (const auto& r : cat.rows) {
        out += r.id + "," + r.file + ",";
        std::snprintf(buf, sizeof buf, "%.17g", r.easting);
        out += buf;
        out += ",";
        std::snprintf(buf, sizeof buf, "%.17g", r.northing);
        out += buf;
        out += "\n";
    }
    return out;
}

// --- synthetic urban scenes ---------------------------------------------------

/// Counter-based stream: independent generator per (seed, stream, index), so
/// any submap can be produced without generating the others.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    };
    return std::mt19937_64(mix(mix(mix(seed) ^ stream) ^ index));
}

/// Vertical rectangle. normal == Y: spans x in [lo, hi] at y = plane.
/// normal == X: spans y in [lo, hi] at x = plane.
struct WallRect {
    Axis normal = Axis::Y;
    double lo = 0, hi = 0, plane = 0, height = 0;
};

struct Pole {
    double x = 0, y = 0, height = 0;
};

/// Two walls meeting along a vertical edge.
struct CornerPair {
    WallRect facade;  // normal Y
    WallRect side;    // normal X
};

struct Pose {
    double x = 0, y = 0;
};

struct SyntheticWorld {
    std::uint64_t seed = 0;
    std::size_t n_places = 0;
    double spacing = 30.0;                 // meters between places along the track
    double half_extent = 25.0;             // submap window half-size, meters
    double jitter = 2.0;                   // max revisit pose offset, meters
    double noise = 0.005;                  // point noise, normalized units
    std::size_t points_per_submap = kSubmapPoints;
    double origin_easting = 620000.0;
    double origin_northing = 5735000.0;
    std::vector<Pose> track;               // first-pass poses, local meters
    std::vector<Pose> revisit;             // second-pass poses
    std::vector<WallRect> walls;
    std::vector<Pole> poles;
    std::vector<CornerPair> corners;
};

struct Submap {
    std::string id;
    std::size_t place = 0;
    int pass = 0;
    PointCloud cloud;
    double easting = 0, northing = 0;
};

struct GeneratedWorld {
    SyntheticWorld world;
    std::vector<Submap> submaps;  // place-major: (place 0, pass 0), (place 0, pass 1), ...
    Catalog catalog;
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Scene elements along a straight track on the x axis.
inline void populate_scene(SyntheticWorld& w) {
    auto rng = stream_rng(w.seed, 1, 0);
    const double x_begin = -w.half_extent - 20.0;
    const double x_end = static_cast<double>(w.n_places - 1) * w.spacing + w.half_extent + 20.0;
    for (int side : {-1, 1}) {
        double x = x_begin + uniform(rng, 0.0, 10.0);
        while (x < x_end) {
            const double len = uniform(rng, 6.0, 30.0);
            const double y = side * uniform(rng, 8.0, 16.0);
            const double h = uniform(rng, 4.0, 20.0);
            WallRect facade{Axis::Y, x, x + len, y, h};
            if (uniform(rng, 0.0, 1.0) < 0.35) {
                const double depth = uniform(rng, 4.0, 12.0);
                const double edge = uniform(rng, 0.0, 1.0) < 0.5 ? x : x + len;
                WallRect sidewall{Axis::X, std::min(y, y + side * depth), std::max(y, y + side * depth), edge, h};
                w.corners.push_back({facade, sidewall});
            } else {
                w.walls.push_back(facade);
            }
            x += len + uniform(rng, 2.0, 14.0);
        }
        double px = x_begin + uniform(rng, 0.0, 8.0);
        while (px < x_end) {
            w.poles.push_back({px, side * uniform(rng, 4.5, 6.5), uniform(rng, 4.0, 9.0)});
            px += uniform(rng, 6.0, 25.0);
        }
    }
}

struct Piece {
    // kind 0: wall rectangle, 1: pole segment
    int kind = 0;
    WallRect rect;
    Pole pole;
    double area = 0;
};

constexpr double kPoleArea = 0.5;  // effective sampling width of a pole, meters

inline std::vector<Piece> visible_pieces(const SyntheticWorld& w, const Pose& pose) {
    std::vector<Piece> out;
    const double r = w.half_extent;
    auto clip_rect = [&](WallRect rc) {
        const double lo_w = rc.normal == Axis::Y ? pose.x - r : pose.y - r;
        const double hi_w = rc.normal == Axis::Y ? pose.x + r : pose.y + r;
        const double plane_c = rc.normal == Axis::Y ? pose.y : pose.x;
        if (std::abs(rc.plane - plane_c) > r) return;
        rc.lo = std::max(rc.lo, lo_w);
        rc.hi = std::min(rc.hi, hi_w);
        if (rc.hi - rc.lo <= 0.05) return;
        out.push_back({0, rc, {}, (rc.hi - rc.lo) * rc.height});
    };
    for (const auto& wr : w.walls) clip_rect(wr);
    for (const auto& c : w.corners) {
        clip_rect(c.facade);
        clip_rect(c.side);
    }
    for (const auto& p : w.poles)
        if (std::abs(p.x - pose.x) <= r && std::abs(p.y - pose.y) <= r) out.push_back({1, {}, p, p.height * kPoleArea});
    return out;
}

}  // namespace detail

/// Samples surface points around `pose` (area-proportional), centers them,
/// scales into [-1, 1], and adds Gaussian noise in normalized units.
inline PointCloud sample_submap(const SyntheticWorld& w, const Pose& pose, std::mt19937_64& rng) {
    const auto pieces = detail::visible_pieces(w, pose);
    require(!pieces.empty(), Errc::InsufficientData, "no scene elements near pose");
    std::vector<double> cdf;
    double total = 0;
    for (const auto& p : pieces) cdf.push_back(total += p.area);
    std::vector<Point3> pts;
    pts.reserve(w.points_per_submap);
    for (std::size_t n = 0; n < w.points_per_submap; ++n) {
        const double u = detail::uniform(rng, 0.0, total);
        std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        k = std::min(k, pieces.size() - 1);
        const auto& pc = pieces[k];
        Point3 p;
        if (pc.kind == 0) {
            const double t = detail::uniform(rng, pc.rect.lo, pc.rect.hi);
            p.z = detail::uniform(rng, 0.0, pc.rect.height);
            if (pc.rect.normal == Axis::Y) {
                p.x = t;
                p.y = pc.rect.plane;
            } else {
                p.x = pc.rect.plane;
                p.y = t;
            }
        } else {
            p.x = pc.pole.x;
            p.y = pc.pole.y;
            p.z = detail::uniform(rng, 0.0, pc.pole.height);
        }
        pts.push_back(p);
    }
    Point3 mean;
    for (const auto& p : pts) {
        mean.x += p.x;
        mean.y += p.y;
        mean.z += p.z;
    }
    const double inv = 1.0 / static_cast<double>(pts.size());
    mean = {mean.x * inv, mean.y * inv, mean.z * inv};
    double max_abs = 0;
    for (auto& p : pts) {
        p = {p.x - mean.x, p.y - mean.y, p.z - mean.z};
        max_abs = std::max({max_abs, std::abs(p.x), std::abs(p.y), std::abs(p.z)});
    }
    const double scale = 1.0 / std::max(w.half_extent, max_abs);
    std::normal_distribution<double> noise(0.0, w.noise);
    auto clamp = [](double v) { return std::clamp(v, -1.0, 1.0); };
    PointCloud cloud;
    cloud.points.reserve(pts.size());
    for (const auto& p : pts)
        cloud.points.push_back(
            {clamp(p.x * scale + noise(rng)), clamp(p.y * scale + noise(rng)), clamp(p.z * scale + noise(rng))});
    return cloud;
}

inline std::string submap_id(std::size_t place, int pass) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%04zu_r%d", place, pass);
    return buf;
}

/// Builds the scene and track for `seed` without materializing submaps.
inline SyntheticWorld make_world(std::uint64_t seed, std::size_t n_places, double spacing = 30.0) {
    require(n_places >= 4, Errc::InvalidArgument, "a world needs at least 4 places");
    require(spacing > 0, Errc::InvalidArgument, "spacing must be positive");
    SyntheticWorld w;
    w.seed = seed;
    w.n_places = n_places;
    w.spacing = spacing;
    for (std::size_t i = 0; i < n_places; ++i) {
        w.track.push_back({static_cast<double>(i) * spacing, 0.0});
        auto rng = stream_rng(seed, 2, i);
        const double r = w.jitter * std::sqrt(detail::uniform(rng, 0.0, 1.0));
        const double a = detail::uniform(rng, 0.0, 2.0 * M_PI);
        w.revisit.push_back({w.track[i].x + r * std::cos(a), w.track[i].y + r * std::sin(a)});
    }
    detail::populate_scene(w);
    return w;
}

inline Submap materialize_submap(const SyntheticWorld& w, std::size_t place, int pass) {
    const Pose& pose = pass == 0 ? w.track.at(place) : w.revisit.at(place);
    auto rng = stream_rng(w.seed, 3 + static_cast<std::uint64_t>(pass), place);
    Submap s;
    s.id = submap_id(place, pass);
    s.place = place;
    s.pass = pass;
    s.cloud = sample_submap(w, pose, rng);
    s.easting = w.origin_easting + pose.x;
    s.northing = w.origin_northing + pose.y;
    return s;
}

/// Two passes over every place: pass 0 (the mapping run) and pass 1 (a
/// revisit with independent noise and pose jitter).
inline GeneratedWorld generate_world(std::uint64_t seed, std::size_t n_places, double spacing = 30.0) {
    GeneratedWorld g;
    g.world = make_world(seed, n_places, spacing);
    for (std::size_t i = 0; i < n_places; ++i)
        for (int pass = 0; pass < 2; ++pass) {
            auto s = materialize_submap(g.world, i, pass);
            g.catalog.rows.push_back({s.id, "submaps/" + s.id + ".bin", s.easting, s.northing});
            g.submaps.push_back(std::move(s));
        }
    return g;
}

inline std::string world_manifest(const SyntheticWorld& w) {
    std::ostringstream os;
    os.precision(17);
    os << "seed = " << w.seed << "\n"
       << "n_places = " << w.n_places << "\n"
       << "spacing = " << w.spacing << "\n"
       << "half_extent = " << w.half_extent << "\n"
       << "jitter = " << w.jitter << "\n"
       << "noise = " << w.noise << "\n"
       << "points_per_submap = " << w.points_per_submap << "\n"
       << "walls = " << w.walls.size() << "\n"
       << "poles = " << w.poles.size() << "\n"
       << "corners = " << w.corners.size() << "\n";
    return os.str();
}

/// Writes submaps/<id>.bin, database.csv (pass 0), queries.csv (pass 1),
/// catalog.csv (both passes) and world.txt under `dir`.
inline void write_world(const GeneratedWorld& g, const fs::path& dir) {
    fs::create_directories(dir / "submaps");
    Catalog db, queries;
    for (std::size_t i = 0; i < g.submaps.size(); ++i) {
        const auto& s = g.submaps[i];
        write_bin(dir / g.catalog.rows[i].file, s.cloud);
        (s.pass == 0 ? db : queries).rows.push_back(g.catalog.rows[i]);
    }
    write_file_atomic(dir / "database.csv", format_catalog(db));
    write_file_atomic(dir / "queries.csv", format_catalog(queries));
    write_file_atomic(dir / "catalog.csv", format_catalog(g.catalog));
    write_file_atomic(dir / "world.txt", world_manifest(g.world));
}

}  // namespace selfloc
