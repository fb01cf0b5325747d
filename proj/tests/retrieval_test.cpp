#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"

using namespace selfloc;
using testutil::error_of;

namespace {

DbEntry entry(const std::string& id, std::vector<double> d, double e = 0, double n = 0) {
    return {id, e, n, std::move(d), ""};
}

}  // namespace

TEST(Db, AddAndDuplicate) {
    DescriptorDB db;
    db.add(entry("a", {1, 2}));
    EXPECT_EQ(db.size(), 1u);
    EXPECT_EQ(error_of([&] { db.add(entry("a", {3, 4})); }), Errc::DuplicateId);
    EXPECT_EQ(error_of([&] { db.add(entry("b", {3})); }), Errc::LengthMismatch);
    EXPECT_EQ(error_of([&] { db.add(entry("c", {NAN, 0})); }), Errc::NonFinite);
    EXPECT_EQ(db.size(), 1u);
}

TEST(Db, ThousandEntryRoundTrip) {
    testutil::TempDir dir("db");
    std::mt19937_64 rng(1);
    DescriptorDB db;
    for (int i = 0; i < 1000; ++i) {
        DbEntry e = entry("s" + std::to_string(i), selftest::rand_vec(rng, 8, -1e3, 1e3),
                          620000 + selftest::urand(rng, 0, 5000), 5735000 + selftest::urand(rng, 0, 5000));
        if (i % 3 == 0) e.run = "run" + std::to_string(i % 2);
        db.add(std::move(e));
    }
    const auto text = format_db(db);
    testutil::spit(dir / "db.jsonl", text);
    const auto back = load_db((dir / "db.jsonl").string());
    EXPECT_EQ(back.entries(), db.entries());
    EXPECT_EQ(format_db(back), text);
}

TEST(Db, ParseErrors) {
    std::istringstream bad("{\"id\": \"a\", \"easting\": 1}\n");
    EXPECT_EQ(error_of([&] { parse_db(bad); }), Errc::ParseError);
    std::istringstream junk("not json\n");
    EXPECT_EQ(error_of([&] { parse_db(junk); }), Errc::ParseError);
    EXPECT_EQ(error_of([] { load_db("/nonexistent/db.jsonl"); }), Errc::Io);
}

TEST(Query, SelfMatchAndPythagoras) {
    DescriptorDB db;
    db.add(entry("a", {0, 0}));
    db.add(entry("b", {3, 4}));
    const auto hits = db.query(std::vector<double>{0, 0}, 2);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].id, "a");
    EXPECT_EQ(hits[0].distance, 0.0);
    EXPECT_EQ(hits[1].id, "b");
    EXPECT_EQ(hits[1].distance, 5.0);
    EXPECT_EQ(db.query(std::vector<double>{3, 4}, 1)[0].id, "b");
    EXPECT_EQ(db.query(std::vector<double>{0, 0}, 10).size(), 2u);
}

TEST(Query, TiesInIdOrder) {
    DescriptorDB db;
    for (const char* id : {"m", "c", "x", "a"}) db.add(entry(id, {1, 1}));
    const auto hits = db.query(std::vector<double>{0, 0}, 4);
    std::vector<std::string> ids;
    for (const auto& h : hits) ids.push_back(h.id);
    EXPECT_EQ(ids, (std::vector<std::string>{"a", "c", "m", "x"}));
}

TEST(Query, Errors) {
    DescriptorDB db;
    EXPECT_EQ(error_of([&] { db.query(std::vector<double>{0}, 1); }), Errc::EmptyDb);
    db.add(entry("a", {0, 0}));
    EXPECT_EQ(error_of([&] { db.query(std::vector<double>{0, 0}, 0); }), Errc::InvalidArgument);
    EXPECT_EQ(error_of([&] { db.query(std::vector<double>{0}, 1); }), Errc::LengthMismatch);
}

TEST(Query, MatchesBruteForceAndIsStableUnderInsertion) {
    std::mt19937_64 rng(2);
    DescriptorDB db;
    std::vector<std::vector<double>> d;
    for (int i = 0; i < 60; ++i) {
        d.push_back(selftest::rand_vec(rng, 3));
        db.add(entry("e" + std::to_string(i), d.back()));
    }
    const auto q = selftest::rand_vec(rng, 3);
    std::vector<std::pair<double, std::string>> want;
    for (int i = 0; i < 60; ++i) {
        double s = 0;
        for (int c = 0; c < 3; ++c) s += (q[c] - d[i][c]) * (q[c] - d[i][c]);
        want.emplace_back(std::sqrt(s), "e" + std::to_string(i));
    }
    std::sort(want.begin(), want.end());
    const auto hits = db.query(q, 60);
    for (std::size_t i = 0; i < 60; ++i) {
        EXPECT_EQ(hits[i].id, want[i].second);
        EXPECT_EQ(hits[i].distance, want[i].first);
    }
    db.add(entry("zz", selftest::rand_vec(rng, 3)));
    std::vector<std::string> before, after;
    for (const auto& h : hits) before.push_back(h.id);
    for (const auto& h : db.query(q, 61))
        if (h.id != "zz") after.push_back(h.id);
    EXPECT_EQ(before, after);
}

TEST(Evaluate, ColocatedQuery) {
    DescriptorDB db;
    db.add(entry("a", {1, 2}, 100, 200));
    const auto r = evaluate({{"q", {1, 2}, 100, 200, ""}}, db);
    EXPECT_EQ(r.ar_at_1, 100.0);
    EXPECT_EQ(r.ar_at_1pct, 100.0);
    EXPECT_EQ(r.query_count, 1u);
}

TEST(Evaluate, HandScenario) {
    // Line of entries at 0/30/60/90 m; q10 retrieves the 0 m entry (10 m: hit),
    // q45 retrieves it too (45 m: miss), q62 retrieves the 60 m entry (hit),
    // q300 has no entry within 25 m (excluded).
    const auto s = selftest::hand_scenario();
    const auto r = evaluate(s.queries, s.db);
    EXPECT_EQ(r.query_count, 3u);
    EXPECT_EQ(r.excluded, 1u);
    EXPECT_EQ(r.k_1pct, 1u);
    EXPECT_EQ(r.ar_at_1, 66.67);
    EXPECT_EQ(r.ar_at_1pct, 66.67);
    ASSERT_EQ(r.per_query.size(), 4u);
    EXPECT_TRUE(r.per_query[0].hit_at_1);
    EXPECT_EQ(r.per_query[0].top1_geo_distance, 10.0);
    EXPECT_FALSE(r.per_query[1].hit_at_1);
    EXPECT_EQ(r.per_query[1].top1_geo_distance, 45.0);
    EXPECT_TRUE(r.per_query[2].hit_at_1);
    EXPECT_EQ(r.per_query[2].top1_id, "db60");
    EXPECT_FALSE(r.per_query[3].evaluated);
}

TEST(Evaluate, OnePercentK) {
    EXPECT_EQ(one_percent_k(200), 2u);
    EXPECT_EQ(one_percent_k(1), 1u);
    EXPECT_EQ(one_percent_k(100), 1u);
    EXPECT_EQ(one_percent_k(101), 2u);
}

TEST(Evaluate, OnePercentUsesSecondCandidate) {
    // 200 entries; the true match ranks second in descriptor space.
    DescriptorDB db;
    for (int i = 0; i < 200; ++i) db.add(entry("d" + std::to_string(1000 + i), {static_cast<double>(i) + 1.0}, 1000.0 * i, 0));
    const auto r = evaluate({{"q", {1.4}, 1000.0, 0, ""}}, db);
    EXPECT_EQ(r.k_1pct, 2u);
    EXPECT_EQ(r.ar_at_1, 0.0);
    EXPECT_EQ(r.ar_at_1pct, 100.0);
}

TEST(Evaluate, RecallOrderingAndInsertionInvariance) {
    std::mt19937_64 rng(3);
    std::vector<DbEntry> entries;
    for (int i = 0; i < 150; ++i)
        entries.push_back(entry("d" + std::to_string(i), selftest::rand_vec(rng, 4), selftest::urand(rng, 0, 600),
                                selftest::urand(rng, 0, 600)));
    std::vector<EvalQuery> qs;
    for (int i = 0; i < 80; ++i)
        qs.push_back({"q" + std::to_string(i), selftest::rand_vec(rng, 4), selftest::urand(rng, 0, 600),
                      selftest::urand(rng, 0, 600), ""});
    DescriptorDB a, b;
    for (const auto& e : entries) a.add(e);
    std::shuffle(entries.begin(), entries.end(), rng);
    for (const auto& e : entries) b.add(e);
    const auto ra = evaluate(qs, a), rb = evaluate(qs, b);
    EXPECT_LE(ra.ar_at_1, ra.ar_at_1pct);
    EXPECT_EQ(ra.ar_at_1, rb.ar_at_1);
    EXPECT_EQ(ra.ar_at_1pct, rb.ar_at_1pct);
    EXPECT_EQ(ra.excluded, rb.excluded);
    EXPECT_GE(ra.ar_at_1, 0.0);
    EXPECT_LE(ra.ar_at_1pct, 100.0);
}

TEST(Evaluate, ExcludeSameRun) {
    DescriptorDB db;
    DbEntry same = entry("same", {0, 0}, 0, 0);
    same.run = "r1";
    DbEntry other = entry("other", {5, 0}, 5, 0);
    other.run = "r2";
    db.add(same);
    db.add(other);
    const std::vector<EvalQuery> qs{{"q", {0, 0}, 0, 0, "r1"}};
    EXPECT_EQ(evaluate(qs, db).per_query[0].top1_id, "same");
    EvalOptions opt;
    opt.exclude_same_run = true;
    const auto r = evaluate(qs, db, opt);
    EXPECT_EQ(r.per_query[0].top1_id, "other");
    EXPECT_EQ(r.ar_at_1, 100.0);
    EXPECT_EQ(error_of([] { evaluate({}, DescriptorDB{}); }), Errc::EmptyDb);
}

TEST(Mine, Examples) {
    const auto five = mine_pairs({{"a", 0, 0}, {"b", 3, 4}});
    EXPECT_EQ(five.positives.size(), 1u);
    EXPECT_TRUE(five.negatives.empty());
    const auto thirty = mine_pairs({{"a", 0, 0}, {"b", 30, 0}});
    EXPECT_TRUE(thirty.positives.empty());
    EXPECT_TRUE(thirty.negatives.empty());
    const auto far = mine_pairs({{"a", 0, 0}, {"b", 0, 50.5}});
    EXPECT_EQ(far.negatives.size(), 1u);
    const auto edge = mine_pairs({{"a", 0, 0}, {"b", 10, 0}, {"c", 60, 0}});
    EXPECT_TRUE(edge.positives.empty());
    EXPECT_EQ(edge.negatives, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}}));
}

TEST(Mine, BruteForceOracle) {
    std::mt19937_64 rng(4);
    std::vector<GeoTag> cat;
    for (int i = 0; i < 50; ++i) cat.push_back({"c" + std::to_string(i), selftest::urand(rng, 0, 120), selftest::urand(rng, 0, 40)});
    const auto got = mine_pairs(cat);
    const auto want = selftest::brute_force_pairs(cat);
    EXPECT_EQ(got.positives, want.positives);
    EXPECT_EQ(got.negatives, want.negatives);
    EXPECT_FALSE(got.positives.empty());
    EXPECT_FALSE(got.negatives.empty());
}
