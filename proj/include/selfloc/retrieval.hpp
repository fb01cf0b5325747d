#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "selfloc/error.hpp"

namespace selfloc {

struct DbEntry {
    std::string id;
    double easting = 0;
    double northing = 0;
    std::vector<double> descriptor;
    std::string run;  // optional acquisition-run tag; empty if unknown

    bool operator==(const DbEntry&) const = default;
};

struct QueryHit {
    std::string id;
    double distance = 0;
    std::size_t index = 0;  // position in DescriptorDB::entries()
};

/// Exact Euclidean descriptor search over an in-memory set of entries.
class DescriptorDB {
public:
    void add(DbEntry e) {
        require(!e.id.empty(), Errc::InvalidArgument, "empty id");
        require(!ids_.count(e.id), Errc::DuplicateId, "duplicate id '" + e.id + "'");
        require(!e.descriptor.empty(), Errc::LengthMismatch, "empty descriptor");
        for (double v : e.descriptor) require(std::isfinite(v), Errc::NonFinite, "non-finite descriptor value");
        if (!entries_.empty())
            require(e.descriptor.size() == entries_.front().descriptor.size(), Errc::LengthMismatch,
                    "descriptor length differs from the database");
        ids_.insert(e.id);
        entries_.push_back(std::move(e));
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<DbEntry>& entries() const noexcept { return entries_; }

    /// The k nearest entries by Euclidean distance, ascending; ties by id.
    std::vector<QueryHit> query(std::span<const double> q, std::size_t k) const {
        require(!entries_.empty(), Errc::EmptyDb, "query on an empty database");
        require(k >= 1, Errc::InvalidArgument, "k must be >= 1");
        require(q.size() == entries_.front().descriptor.size(), Errc::LengthMismatch, "query descriptor length");
        std::vector<QueryHit> hits;
        hits.reserve(entries_.size());
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& d = entries_[i].descriptor;
            double s = 0;
            for (std::size_t c = 0; c < q.size(); ++c) s += (q[c] - d[c]) * (q[c] - d[c]);
            hits.push_back({entries_[i].id, std::sqrt(s), i});
        }
        auto less = [](const QueryHit& a, const QueryHit& b) {
            return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
        };
        k = std::min(k, hits.size());
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), less);
        hits.resize(k);
        return hits;
    }

private:
    std::vector<DbEntry> entries_;
    std::unordered_set<std::string> ids_;
};

// --- JSON Lines persistence -------------------------------------------------

inline std::string format_double17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// One record: {"id": ..., "easting": ..., "northing": ..., "descriptor": [...]}
/// with 17 significant digits; "run" is appended only when set.
inline std::string format_db_record(const DbEntry& e) {
    std::string s = "{\"id\": " + nlohmann::json(e.id).dump();
    s += ", \"easting\": " + format_double17(e.easting);
    s += ", \"northing\": " + format_double17(e.northing);
    s += ", \"descriptor\": [";
    for (std::size_t i = 0; i < e.descriptor.size(); ++i) {
        if (i) s += ", ";
        s += format_double17(e.descriptor[i]);
    }
    s += "]";
    if (!e.run.empty()) s += ", \"run\": " + nlohmann::json(e.run).dump();
    s += "}\n";
    return s;
}

inline std::string format_db(const DescriptorDB& db) {
    std::string out;
    for (const auto& e : db.entries()) out += format_db_record(e);
    return out;
}

inline DbEntry parse_db_record(const std::string& line, int line_no) {
    try {
        const auto j = nlohmann::json::parse(line);
        DbEntry e;
        e.id = j.at("id").get<std::string>();
        e.easting = j.contains("easting") ? j.at("easting").get<double>() : 0.0;
        e.northing = j.contains("northing") ? j.at("northing").get<double>() : 0.0;
        e.descriptor = j.at("descriptor").get<std::vector<double>>();
        if (j.contains("run")) e.run = j.at("run").get<std::string>();
        return e;
    } catch (const nlohmann::json::exception& ex) {
        fail(Errc::ParseError, "line " + std::to_string(line_no) + ": " + ex.what());
    }
}

inline DescriptorDB parse_db(std::istream& in) {
    DescriptorDB db;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        db.add(parse_db_record(line, line_no));
    }
    return db;
}

inline DescriptorDB load_db(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::Io, "cannot open '" + path + "'");
    return parse_db(in);
}

// --- localization protocol ----------------------------------------------------

struct EvalQuery {
    std::string id;
    std::vector<double> descriptor;
    double easting = 0;
    double northing = 0;
    std::string run;
};

struct QueryOutcome {
    std::string id;
    bool evaluated = false;       // false when no database entry lies within the radius
    std::string top1_id;
    double top1_descriptor_distance = 0;
    double top1_geo_distance = 0;  // meters
    bool hit_at_1 = false;
    bool hit_at_1pct = false;
};

struct EvalReport {
    double ar_at_1 = 0;     // percent, rounded to 0.01
    double ar_at_1pct = 0;  // percent, rounded to 0.01
    std::size_t query_count = 0;
    std::size_t excluded = 0;
    std::size_t k_1pct = 1;
    std::vector<QueryOutcome> per_query;
};

struct EvalOptions {
    double radius = 25.0;
    bool exclude_same_run = false;
};

inline double geo_distance(double e1, double n1, double e2, double n2) { return std::hypot(e1 - e2, n1 - n2); }

/// Number of candidates for recall@1%: ceil(|db| / 100).
inline std::size_t one_percent_k(std::size_t db_size) { return std::max<std::size_t>(1, (db_size + 99) / 100); }

inline double round_percent(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

inline EvalReport evaluate(const std::vector<EvalQuery>& queries, const DescriptorDB& db,
                           const EvalOptions& opt = {}) {
    require(!db.empty(), Errc::EmptyDb, "evaluation against an empty database");
    EvalReport rep;
    rep.k_1pct = one_percent_k(db.size());
    std::size_t hits1 = 0, hits_pct = 0;
    for (const auto& q : queries) {
        QueryOutcome out;
        out.id = q.id;
        auto candidate = [&](const DbEntry& e) { return !(opt.exclude_same_run && !q.run.empty() && e.run == q.run); };
        bool has_positive = false;
        for (const auto& e : db.entries())
            if (candidate(e) && geo_distance(q.easting, q.northing, e.easting, e.northing) <= opt.radius) {
                has_positive = true;
                break;
            }
        if (!has_positive) {
            ++rep.excluded;
            rep.per_query.push_back(std::move(out));
            continue;
        }
        out.evaluated = true;
        // rank every candidate so same-run exclusion cannot shrink the top-k
        auto ranked = db.query(q.descriptor, db.size());
        std::erase_if(ranked, [&](const QueryHit& h) { return !candidate(db.entries()[h.index]); });
        for (std::size_t r = 0; r < ranked.size() && r < rep.k_1pct; ++r) {
            const auto& e = db.entries()[ranked[r].index];
            const double gd = geo_distance(q.easting, q.northing, e.easting, e.northing);
            if (r == 0) {
                out.top1_id = e.id;
                out.top1_descriptor_distance = ranked[r].distance;
                out.top1_geo_distance = gd;
                out.hit_at_1 = gd <= opt.radius;
            }
            if (gd <= opt.radius) out.hit_at_1pct = true;
        }
        hits1 += out.hit_at_1;
        hits_pct += out.hit_at_1pct;
        ++rep.query_count;
        rep.per_query.push_back(std::move(out));
    }
    if (rep.query_count > 0) {
        rep.ar_at_1 = round_percent(static_cast<double>(hits1) / static_cast<double>(rep.query_count));
        rep.ar_at_1pct = round_percent(static_cast<double>(hits_pct) / static_cast<double>(rep.query_count));
    }
    return rep;
}

/// `ar_at_1,ar_at_1pct,queries,excluded,k_1pct` header plus one row.
inline std::string format_report_csv(const EvalReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "ar_at_1,ar_at_1pct,queries,excluded,k_1pct\n%.2f,%.2f,%zu,%zu,%zu\n", r.ar_at_1,
                  r.ar_at_1pct, r.query_count, r.excluded, r.k_1pct);
    return buf;
}

// --- training pair mining -----------------------------------------------------

struct GeoTag {
    std::string id;
    double easting = 0;
    double northing = 0;
};

struct PairSets {
    // unordered pairs stored as (i, j) with i < j, in ascending order
    std::vector<std::pair<std::size_t, std::size_t>> positives;
    std::vector<std::pair<std::size_t, std::size_t>> negatives;
};

/// Positives closer than `pos_m`, negatives farther than `neg_m`; pairs in
/// between belong to neither set.
inline PairSets mine_pairs(const std::vector<GeoTag>& catalog, double pos_m = 10.0, double neg_m = 50.0) {
    require(pos_m > 0 && neg_m >= pos_m, Errc::InvalidArgument, "need 0 < pos <= neg thresholds");
    PairSets s;
    for (std::size_t i = 0; i < catalog.size(); ++i)
        for (std::size_t j = i + 1; j < catalog.size(); ++j) {
            const double d =
                geo_distance(catalog[i].easting, catalog[i].northing, catalog[j].easting, catalog[j].northing);
            if (d < pos_m) s.positives.emplace_back(i, j);
            else if (d > neg_m) s.negatives.emplace_back(i, j);
        }
    return s;
}

}  // namespace selfloc
