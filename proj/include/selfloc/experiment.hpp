#pragma once

#include <cctype>
#include <cstdio>
#include <string>
#include <vector>

#include "selfloc/data_io.hpp"
#include "selfloc/model.hpp"
#include "selfloc/parallel.hpp"
#include "selfloc/retrieval.hpp"
#include "selfloc/train.hpp"

namespace selfloc {

/// Descriptors for the given places of a world: pass 0 forms the database,
/// pass 1 the queries.
inline EvalReport evaluate_places(const GeneratedWorld& g, std::size_t first_place, std::size_t last_place,
                                  const ModelWeights& w, const ModelConfig& cfg, std::size_t threads = 1,
                                  double radius = 25.0) {
    std::vector<const Submap*> subs;
    for (const auto& s : g.submaps)
        if (s.place >= first_place && s.place < last_place) subs.push_back(&s);
    std::vector<Descriptor> desc(subs.size());
    parallel_for(subs.size(), threads, [&](std::size_t i) { desc[i] = forward(subs[i]->cloud, w, cfg); });
    DescriptorDB db;
    std::vector<EvalQuery> queries;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        const auto& s = *subs[i];
        if (s.pass == 0) db.add({s.id, s.easting, s.northing, desc[i], ""});
        else queries.push_back({s.id, desc[i], s.easting, s.northing, ""});
    }
    EvalOptions opt;
    opt.radius = radius;
    return evaluate(queries, db, opt);
}

struct AblationOptions {
    std::uint64_t world_seed = 7;
    std::uint64_t weight_seed = 1;
    std::size_t places = 16;
    std::size_t train_places = 12;  // places [0, train_places) train, the rest evaluate
    int epochs = 1;
    std::size_t threads = 1;
};

struct AblationRow {
    std::string variant;  // SelFLoc_X / _Y / _Z
    Axis axis = Axis::X;
    int dilation_depth = 0;
    double ar_at_1 = 0;
    double ar_at_1pct = 0;
    double final_loss = 0;
};

/// Extra-layer axis x dilation depth (0 = no dilated layer, 1..down_depth).
inline std::vector<AblationRow> run_ablation(const ModelConfig& base, const AblationOptions& opt) {
    require(opt.train_places >= 2 && opt.train_places < opt.places, Errc::InvalidArgument,
            "need 2 <= train places < places");
    const auto g = generate_world(opt.world_seed, opt.places);
    const auto samples = world_samples(g, 0, opt.train_places);
    std::vector<AblationRow> rows;
    for (Axis axis : {Axis::X, Axis::Y, Axis::Z})
        for (int depth = 0; depth <= base.down_depth; ++depth) {
            ModelConfig cfg = base;
            cfg.extra_axis = axis;
            cfg.dilation_depth = depth;
            cfg.validate();
            TrainOptions to;
            to.epochs = opt.epochs;
            to.seed = opt.weight_seed;
            to.threads = opt.threads;
            auto tr = train_toy(samples, cfg, init_weights(cfg, opt.weight_seed), to);
            const auto rep = evaluate_places(g, opt.train_places, opt.places, tr.weights, cfg, opt.threads);
            AblationRow r;
            r.variant = std::string("SelFLoc_") + static_cast<char>(std::toupper(axis_char(axis)));
            r.axis = axis;
            r.dilation_depth = depth;
            r.ar_at_1 = rep.ar_at_1;
            r.ar_at_1pct = rep.ar_at_1pct;
            r.final_loss = tr.log.empty() ? 0.0 : tr.log.back().mean_loss;
            rows.push_back(std::move(r));
        }
    return rows;
}

inline std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
    std::string s = "variant,extra_axis,dilation_depth,ar_at_1,ar_at_1pct,final_loss\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%c,%d,%.2f,%.2f,%.17g\n", r.variant.c_str(), axis_char(r.axis),
                      r.dilation_depth, r.ar_at_1, r.ar_at_1pct, r.final_loss);
        s += buf;
    }
    return s;
}

}  // namespace selfloc
