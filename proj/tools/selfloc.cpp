#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "selfloc/selfloc.hpp"

using namespace selfloc;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kMissingInput = 2, kDataInvalid = 3, kCheckFailed = 4 };

/// Thrown for "missing input" conditions that are not library errors.
struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int exit_code_for(Errc e) {
    switch (e) {
        case Errc::Io: return kMissingInput;
        case Errc::InvalidArgument: return kUsage;
        default: return kDataInvalid;
    }
}

// --- run manifest -------------------------------------------------------------

struct Manifest {
    std::string command;
    std::string config;
    std::string weights;
    std::uint64_t seed = 0;
    std::vector<std::string> outputs;
    std::size_t threads = 1;
    std::string path;  // where to write; empty derives from outputs
};

void write_manifest(const Manifest& m, double seconds) {
    json j;
    j["command"] = m.command;
    j["config"] = m.config;
    j["weights"] = m.weights;
    j["seed"] = m.seed;
    j["engine_version"] = kEngineVersion;
    j["wall_time_s"] = seconds;
    j["threads"] = m.threads;
    j["outputs"] = m.outputs;
    std::string path = m.path;
    if (path.empty()) path = m.outputs.empty() ? "selfloc-" + m.command + ".manifest.json" : m.outputs.front() + ".manifest.json";
    write_file_atomic(path, j.dump(2) + "\n");
}

// --- shared option groups -----------------------------------------------------

struct ModelOpts {
    std::string config;
    std::string preset = "full";

    void attach(CLI::App* c) {
        c->add_option("--config", config, "model config file (key = value)");
        c->add_option("--preset", preset, "built-in model when no --config is given")
            ->check(CLI::IsMember({"full", "desk"}));
    }
    ModelConfig load() const {
        if (!config.empty()) {
            std::ifstream in(config);
            if (!in) fail(Errc::Io, "cannot open config '" + config + "'");
            return parse_config(in);
        }
        return preset == "desk" ? ModelConfig::desk() : ModelConfig{};
    }
    std::string label() const { return config.empty() ? "preset:" + preset : config; }
};

ModelWeights load_weights_file(const std::string& path, const ModelConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::Io, "cannot open weights '" + path + "'");
    auto w = read_weights(in);
    w.check_complete(cfg);
    return w;
}

void save_weights_file(const std::string& path, const ModelWeights& w) {
    std::ostringstream os;
    write_weights(os, w);
    write_file_atomic(path, os.str());
}

// --- descriptor files ---------------------------------------------------------

struct DescRecord {
    std::string id;
    Descriptor descriptor;
};

std::string format_desc_record(const DescRecord& r) {
    std::string s = "{\"id\": " + json(r.id).dump() + ", \"descriptor\": [";
    for (std::size_t i = 0; i < r.descriptor.size(); ++i) {
        if (i) s += ", ";
        s += format_double17(r.descriptor[i]);
    }
    return s + "]}\n";
}

std::vector<DescRecord> load_descriptors(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::Io, "cannot open descriptors '" + path + "'");
    std::vector<DescRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            out.push_back({j.at("id").get<std::string>(), j.at("descriptor").get<std::vector<double>>()});
        } catch (const json::exception& e) {
            fail(Errc::ParseError, path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::map<std::string, const CatalogRow*> index_catalog(const Catalog& cat) {
    std::map<std::string, const CatalogRow*> m;
    for (const auto& r : cat.rows) m[r.id] = &r;
    return m;
}

std::vector<fs::path> list_inputs(const fs::path& input) {
    if (!fs::exists(input)) throw MissingInput("input '" + input.string() + "' does not exist");
    std::vector<fs::path> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
    } else {
        files.push_back(input);
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw MissingInput("no inputs");
    return files;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SelFLoc place-recognition engine"};
    app.require_subcommand(1);
    Manifest man;
    std::size_t threads = default_threads();
    std::function<int()> run;
    ModelOpts model;

    auto common = [&](CLI::App* c) {
        c->add_option("--threads", threads, "worker threads (default: SELFLOC_THREADS or all cores)")
            ->check(CLI::PositiveNumber);
        c->add_option("--manifest", man.path, "run manifest path (default: <first output>.manifest.json)");
    };

    // gen-world
    std::uint64_t seed = 0;
    std::size_t places = 40;
    double spacing = 30.0;
    std::string out_path;
    {
        auto* c = app.add_subcommand("gen-world", "generate a synthetic world with revisit pass");
        c->add_option("--seed", seed)->required();
        c->add_option("--places", places)->check(CLI::Range(4, 100000));
        c->add_option("--spacing", spacing)->check(CLI::PositiveNumber);
        c->add_option("--out", out_path, "output directory")->required();
        common(c);
        c->callback([&] {
            run = [&] {
                const auto g = generate_world(seed, places, spacing);
                write_world(g, out_path);
                man.seed = seed;
                man.outputs = {(fs::path(out_path) / "catalog.csv").string(), (fs::path(out_path) / "database.csv").string(),
                               (fs::path(out_path) / "queries.csv").string()};
                std::printf("%zu submaps written to %s\n", g.submaps.size(), out_path.c_str());
                return kOk;
            };
        });
    }

    // init
    {
        auto* c = app.add_subcommand("init", "initialize model weights");
        model.attach(c);
        c->add_option("--seed", seed);
        c->add_option("--out", out_path, "weight file")->required();
        common(c);
        c->callback([&] {
            run = [&] {
                const auto cfg = model.load();
                save_weights_file(out_path, init_weights(cfg, seed));
                man.seed = seed;
                man.config = model.label();
                man.outputs = {out_path};
                const auto rep = parameter_count(cfg);
                std::printf("%zu parameters\n", rep.total);
                return kOk;
            };
        });
    }

    // extract
    std::string weights_path, input_path, attention_path;
    {
        auto* c = app.add_subcommand("extract", "point clouds to global descriptors");
        model.attach(c);
        c->add_option("--weights", weights_path)->required();
        c->add_option("--input", input_path, ".bin file or directory of .bin files")->required();
        c->add_option("--out", out_path, "descriptor JSONL")->required();
        c->add_option("--attention", attention_path, "optional CSV dump of gate activations");
        common(c);
        c->callback([&] {
            run = [&] {
                const auto files = list_inputs(input_path);
                const auto cfg = model.load();
                const auto w = load_weights_file(weights_path, cfg);
                std::vector<PointCloud> clouds(files.size());
                for (std::size_t i = 0; i < files.size(); ++i) {
                    try {
                        clouds[i] = load_bin(files[i]);
                    } catch (const Error& e) {
                        fail(e.code(), files[i].string() + ": " + e.what());
                    }
                }
                std::vector<Descriptor> desc(files.size());
                std::vector<ForwardTrace> traces(attention_path.empty() ? 0 : files.size());
                parallel_for(files.size(), threads, [&](std::size_t i) {
                    desc[i] = forward(clouds[i], w, cfg, traces.empty() ? nullptr : &traces[i]);
                });
                std::string text;
                for (std::size_t i = 0; i < files.size(); ++i)
                    text += format_desc_record({files[i].stem().string(), desc[i]});
                write_file_atomic(out_path, text);
                man.outputs = {out_path};
                if (!attention_path.empty()) {
                    std::string csv = "id,block,gate,coord_i,coord_j,coord_k,channel,score\n";
                    char buf[200];
                    for (std::size_t i = 0; i < files.size(); ++i)
                        for (const auto& d : traces[i].attention) {
                            const auto id = files[i].stem().string();
                            for (std::size_t c = 0; c < d.channel.size(); ++c) {
                                std::snprintf(buf, sizeof buf, "%s,%s,channel,,,,%zu,%.17g\n", id.c_str(), d.name.c_str(), c,
                                              d.channel[c]);
                                csv += buf;
                            }
                            for (std::size_t n = 0; n < d.point.size(); ++n) {
                                const auto& v = (*d.support)[n];
                                std::snprintf(buf, sizeof buf, "%s,%s,point,%d,%d,%d,,%.17g\n", id.c_str(), d.name.c_str(),
                                              v.i, v.j, v.k, d.point[n]);
                                csv += buf;
                            }
                        }
                    write_file_atomic(attention_path, csv);
                    man.outputs.push_back(attention_path);
                }
                man.weights = weights_path;
                man.config = model.label();
                std::printf("%zu descriptors written to %s\n", files.size(), out_path.c_str());
                return kOk;
            };
        });
    }

    // index
    std::string desc_path, catalog_path, run_tag;
    {
        auto* c = app.add_subcommand("index", "descriptors + catalog coordinates to a database file");
        c->add_option("--descriptors", desc_path)->required();
        c->add_option("--catalog", catalog_path)->required();
        c->add_option("--run", run_tag, "acquisition-run tag stored with every entry");
        c->add_option("--out", out_path, "database JSONL")->required();
        common(c);
        c->callback([&] {
            run = [&] {
                const auto cat = load_catalog(catalog_path, false);
                const auto where = index_catalog(cat);
                DescriptorDB db;
                for (auto& r : load_descriptors(desc_path)) {
                    auto it = where.find(r.id);
                    if (it == where.end()) fail(Errc::ParseError, "id '" + r.id + "' is not in the catalog");
                    db.add({r.id, it->second->easting, it->second->northing, std::move(r.descriptor), run_tag});
                }
                write_file_atomic(out_path, format_db(db));
                man.outputs = {out_path};
                std::printf("%zu entries indexed\n", db.size());
                return kOk;
            };
        });
    }

    // query
    std::string db_path;
    std::size_t k = 1;
    {
        auto* c = app.add_subcommand("query", "k nearest database entries for each descriptor");
        c->add_option("--db", db_path)->required();
        c->add_option("--descriptors", desc_path)->required();
        c->add_option("-k,--k", k)->check(CLI::PositiveNumber);
        c->add_option("--out", out_path, "results CSV (stdout when omitted)");
        common(c);
        c->callback([&] {
            run = [&] {
                const auto db = load_db(db_path);
                std::string csv = "query_id,rank,db_id,distance\n";
                char buf[64];
                for (const auto& q : load_descriptors(desc_path)) {
                    const auto hits = db.query(q.descriptor, k);
                    for (std::size_t r = 0; r < hits.size(); ++r) {
                        std::snprintf(buf, sizeof buf, ",%zu,", r + 1);
                        csv += q.id + buf + hits[r].id + "," + format_double17(hits[r].distance) + "\n";
                    }
                }
                if (out_path.empty()) {
                    std::cout << csv;
                } else {
                    write_file_atomic(out_path, csv);
                    man.outputs = {out_path};
                }
                return kOk;
            };
        });
    }

    // eval
    double radius = 25.0;
    bool exclude_same_run = false;
    std::string per_query_path;
    {
        auto* c = app.add_subcommand("eval", "AR@1 / AR@1% of query descriptors against a database");
        c->add_option("--db", db_path)->required();
        c->add_option("--queries", desc_path, "query descriptor JSONL")->required();
        c->add_option("--catalog", catalog_path, "coordinates of the query ids")->required();
        c->add_option("--radius", radius)->check(CLI::PositiveNumber);
        c->add_option("--run", run_tag, "acquisition-run tag of the queries");
        c->add_flag("--exclude-same-run", exclude_same_run, "skip database entries sharing the query's run tag");
        c->add_option("--out", out_path, "report CSV")->required();
        c->add_option("--per-query", per_query_path, "optional per-query CSV");
        common(c);
        c->callback([&] {
            run = [&] {
                const auto db = load_db(db_path);
                const auto where = index_catalog(load_catalog(catalog_path, false));
                std::vector<EvalQuery> qs;
                for (auto& r : load_descriptors(desc_path)) {
                    auto it = where.find(r.id);
                    if (it == where.end()) fail(Errc::ParseError, "query '" + r.id + "' is not in the catalog");
                    qs.push_back({r.id, std::move(r.descriptor), it->second->easting, it->second->northing, run_tag});
                }
                EvalOptions opt;
                opt.radius = radius;
                opt.exclude_same_run = exclude_same_run;
                const auto rep = evaluate(qs, db, opt);
                write_file_atomic(out_path, format_report_csv(rep));
                man.outputs = {out_path};
                if (!per_query_path.empty()) {
                    std::string csv = "query_id,evaluated,top1_id,descriptor_distance,geo_distance,hit_at_1,hit_at_1pct\n";
                    for (const auto& q : rep.per_query)
                        csv += q.id + "," + (q.evaluated ? "1" : "0") + "," + q.top1_id + "," +
                               format_double17(q.top1_descriptor_distance) + "," + format_double17(q.top1_geo_distance) +
                               "," + (q.hit_at_1 ? "1" : "0") + "," + (q.hit_at_1pct ? "1" : "0") + "\n";
                    write_file_atomic(per_query_path, csv);
                    man.outputs.push_back(per_query_path);
                }
                std::printf("AR@1 %.2f\nAR@1%% %.2f\nqueries %zu excluded %zu\n", rep.ar_at_1, rep.ar_at_1pct,
                            rep.query_count, rep.excluded);
                return kOk;
            };
        });
    }

    // mine
    double pos_m = 10.0, neg_m = 50.0;
    {
        auto* c = app.add_subcommand("mine", "positive / negative training pairs from a catalog");
        c->add_option("--catalog", catalog_path)->required();
        c->add_option("--pos", pos_m)->check(CLI::PositiveNumber);
        c->add_option("--neg", neg_m)->check(CLI::PositiveNumber);
        c->add_option("--out", out_path, "pairs CSV")->required();
        common(c);
        c->callback([&] {
            run = [&] {
                const auto cat = load_catalog(catalog_path, false);
                std::vector<GeoTag> tags;
                for (const auto& r : cat.rows) tags.push_back({r.id, r.easting, r.northing});
                const auto pairs = mine_pairs(tags, pos_m, neg_m);
                std::string csv = "kind,a,b\n";
                for (auto [i, j] : pairs.positives) csv += "positive," + tags[i].id + "," + tags[j].id + "\n";
                for (auto [i, j] : pairs.negatives) csv += "negative," + tags[i].id + "," + tags[j].id + "\n";
                write_file_atomic(out_path, csv);
                man.outputs = {out_path};
                std::printf("%zu positive, %zu negative pairs\n", pairs.positives.size(), pairs.negatives.size());
                return kOk;
            };
        });
    }

    // train
    TrainOptions topt;
    std::string log_path;
    {
        auto* c = app.add_subcommand("train", "metric learning on a geo-tagged catalog of submaps");
        model.attach(c);
        c->add_option("--catalog", catalog_path, "training catalog; files resolve relative to it")->required();
        c->add_option("--weights", weights_path, "starting weights (default: fresh init from --seed)");
        c->add_option("--epochs", topt.epochs)->check(CLI::Range(0, 100000));
        c->add_option("--seed", seed);
        c->add_option("--lr", topt.lr)->check(CLI::PositiveNumber);
        c->add_option("--momentum", topt.momentum)->check(CLI::Range(0.0, 1.0));
        c->add_option("--margin", topt.margin)->check(CLI::PositiveNumber);
        c->add_option("--batch", topt.batch)->check(CLI::PositiveNumber);
        c->add_option("--pos", topt.pos_m)->check(CLI::PositiveNumber);
        c->add_option("--neg", topt.neg_m)->check(CLI::PositiveNumber);
        c->add_option("--out", out_path, "trained weight file")->required();
        c->add_option("--log", log_path, "per-epoch loss CSV");
        common(c);
        c->callback([&] {
            run = [&] {
                const auto cfg = model.load();
                const auto cat = load_catalog(catalog_path, true);
                std::vector<TrainSample> samples(cat.rows.size());
                parallel_for(samples.size(), threads, [&](std::size_t i) {
                    const auto& r = cat.rows[i];
                    samples[i] = {r.id, load_bin(cat.resolve(r)), r.easting, r.northing};
                });
                auto w = weights_path.empty() ? init_weights(cfg, seed) : load_weights_file(weights_path, cfg);
                topt.seed = seed;
                topt.threads = threads;
                const auto res = train_toy(samples, cfg, std::move(w), topt);
                save_weights_file(out_path, res.weights);
                man.outputs = {out_path};
                const std::string log = format_train_log(res.log, topt.margin);
                if (!log_path.empty()) {
                    write_file_atomic(log_path, log);
                    man.outputs.push_back(log_path);
                }
                std::cout << log;
                man.seed = seed;
                man.weights = weights_path;
                man.config = model.label();
                return kOk;
            };
        });
    }

    // bench
    std::string mode = "asym";
    int size = 9, reps = 5;
    std::size_t channels = 64;
    double perturb = 0.0;
    {
        auto* c = app.add_subcommand("bench", "asymmetric axis convolutions against the dense 3D equivalent");
        c->add_option("--mode", mode)->check(CLI::IsMember({"asym", "dense"}));
        c->add_option("--size", size, "side of the dense cubic support")->check(CLI::Range(3, 64));
        c->add_option("--reps", reps)->check(CLI::Range(1, 10000));
        c->add_option("--channels", channels)->check(CLI::Range(1, 512));
        c->add_option("--seed", seed);
        c->add_option("--out", out_path, "CSV (stdout when omitted)");
        c->add_option("--perturb", perturb)->group("");  // test hook: offsets one dense weight
        common(c);
        c->callback([&] {
            run = [&] {
                std::mt19937_64 rng(seed);
                const auto cube = selftest::dense_cube(size);
                AsymmetricKernel<double> kx(Axis::X, 3, channels, channels), ky(Axis::Y, 3, channels, channels),
                    kz(Axis::Z, 3, channels, channels);
                for (auto* kk : {&kx, &ky, &kz}) kk->taps = selftest::rand_vec(rng, kk->taps.size());
                auto dense_k = compose_axis_kernels(kx, ky, kz);
                dense_k.weights[0] += perturb;
                const SparseTensor<double> x(cube, selftest::rand_matrix(rng, cube->size(), channels));
                auto asym_run = [&] { return axis_conv(axis_conv(axis_conv(x, kx), ky), kz); };
                auto dense_run = [&] { return sparse_conv(x, dense_k, cube); };

                const auto a = asym_run(), d = dense_run();
                double gap = 0;
                for (std::size_t n = 0; n < cube->size(); ++n) {
                    if (!selftest::interior((*cube)[n], size, 1)) continue;
                    for (std::size_t ch = 0; ch < channels; ++ch)
                        gap = std::max(gap, std::abs(a.features(n, ch) - d.features(n, ch)));
                }
                if (!(gap <= 1e-9)) {
                    std::fprintf(stderr, "equivalence check failed: max interior difference %.3g > 1e-9\n", gap);
                    return kCheckFailed;
                }
                std::vector<double> samples;
                for (int r = 0; r < reps; ++r) {
                    const auto t0 = std::chrono::steady_clock::now();
                    if (mode == "asym") (void)asym_run();
                    else (void)dense_run();
                    samples.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
                }
                ModelConfig pc;
                pc.channels.assign(static_cast<std::size_t>(pc.down_depth), channels);
                const auto layers = parameter_count(pc).layers;
                const auto core = *std::find_if(layers.begin(), layers.end(),
                                                [](const LayerCount& l) { return l.name.ends_with(".core"); });
                std::size_t pairs = 0;
                if (mode == "asym")
                    for (Axis ax : {Axis::X, Axis::Y, Axis::Z})
                        pairs += build_kernel_map(*cube, *cube, axis_offsets(ax, 3), 1).pair_count();
                else
                    pairs = build_kernel_map(*cube, *cube, cubic_offsets(3), 1).pair_count();
                char buf[320];
                std::snprintf(buf, sizeof buf,
                              "mode,size,channels,reps,median_s,params_asym,params_dense,param_ratio,pairs,max_interior_diff\n"
                              "%s,%d,%zu,%d,%.6g,%zu,%zu,%.4f,%zu,%.3g\n",
                              mode.c_str(), size, channels, reps, median(samples), core.params, core.dense_equivalent,
                              static_cast<double>(core.params) / static_cast<double>(core.dense_equivalent), pairs, gap);
                if (out_path.empty()) {
                    std::cout << buf;
                } else {
                    write_file_atomic(out_path, buf);
                    man.outputs = {out_path};
                }
                man.seed = seed;
                return kOk;
            };
        });
    }

    // selftest
    std::string corrupt;
    {
        auto* c = app.add_subcommand("selftest", "run the built-in property suites");
        c->add_option("--corrupt-backward", corrupt)->group("");  // test hook
        c->add_option("--out", out_path, "optional per-suite CSV");
        common(c);
        c->callback([&] {
            run = [&] {
                testing_hooks::corrupted_backward = corrupt;
                const auto results = selftest::run_all();
                std::string csv = "suite,pass,seconds,detail\n";
                const selftest::SuiteResult* first_fail = nullptr;
                for (const auto& r : results) {
                    std::printf("%-20s %s  %7.3fs  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL", r.seconds,
                                r.detail.c_str());
                    csv += r.name + "," + (r.pass ? "1" : "0") + "," + std::to_string(r.seconds) + "," +
                           json(r.detail).dump() + "\n";
                    if (!r.pass && !first_fail) first_fail = &r;
                }
                if (!out_path.empty()) {
                    write_file_atomic(out_path, csv);
                    man.outputs = {out_path};
                }
                if (first_fail) {
                    std::fprintf(stderr, "selftest failed: %s: %s\n", first_fail->name.c_str(), first_fail->detail.c_str());
                    return kUsage;
                }
                return kOk;
            };
        });
    }

    // ablate
    AblationOptions aopt;
    {
        auto* c = app.add_subcommand("ablate", "extra-layer axis x dilation depth grid on a synthetic world");
        model.attach(c);
        c->add_option("--seed", aopt.world_seed, "world seed");
        c->add_option("--weight-seed", aopt.weight_seed);
        c->add_option("--places", aopt.places)->check(CLI::Range(4, 100000));
        c->add_option("--train-places", aopt.train_places)->check(CLI::Range(2, 100000));
        c->add_option("--epochs", aopt.epochs)->check(CLI::Range(0, 100000));
        c->add_option("--out", out_path, "grid CSV")->required();
        common(c);
        c->callback([&] {
            run = [&] {
                aopt.threads = threads;
                const auto rows = run_ablation(model.load(), aopt);
                write_file_atomic(out_path, format_ablation_csv(rows));
                man.outputs = {out_path};
                man.seed = aopt.world_seed;
                man.config = model.label();
                std::printf("%zu configurations written to %s\n", rows.size(), out_path.c_str());
                return kOk;
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    man.command = app.get_subcommands().front()->get_name();
    if (man.config.empty() && !model.config.empty()) man.config = model.config;
    const auto t0 = std::chrono::steady_clock::now();
    int rc = kOk;
    try {
        man.threads = threads;
        rc = run();
    } catch (const MissingInput& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kMissingInput;
    } catch (const Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDataInvalid;
    }
    try {
        write_manifest(man, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: manifest: %s\n", e.what());
        return kMissingInput;
    }
    return rc;
}
