#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "selfloc/autodiff.hpp"
#include "selfloc/data_io.hpp"
#include "selfloc/model.hpp"
#include "selfloc/parallel.hpp"
#include "selfloc/retrieval.hpp"

namespace selfloc {

struct TrainSample {
    std::string id;
    PointCloud cloud;
    double easting = 0;
    double northing = 0;
};

struct TrainOptions {
    int epochs = 30;
    std::uint64_t seed = 0;
    double lr = 0.01;
    double momentum = 0.9;
    double margin = 0.2;
    double pos_m = 10.0;
    double neg_m = 50.0;
    std::size_t batch = 16;  // clouds per step, rounded up to whole positive groups
    std::size_t threads = 1;
    bool calibrate = true;  // fold warmup norm statistics into the affine norms first
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0;
    std::size_t active_triplets = 0;
};

struct TrainResult {
    ModelWeights weights;
    std::vector<EpochLog> log;
};

inline constexpr const char* kTrainLogColumns = "epoch,mean_loss,active_triplets\n";

/// Log CSV; the comment line names the objective that produced the numbers.
inline std::string format_train_log(const std::vector<EpochLog>& log, double margin) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "# loss: batch-hard triplet margin loss, margin %g, Euclidean descriptor distance\n",
                  margin);
    std::string s = buf;
    s += kTrainLogColumns;
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%zu\n", e.epoch, e.mean_loss, e.active_triplets);
        s += buf;
    }
    return s;
}

namespace detail {

/// Connected components of the positive-pair graph, each sorted, ordered by
/// their smallest member.
inline std::vector<std::vector<std::size_t>> positive_groups(std::size_t n, const PairSets& pairs) {
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    for (auto [i, j] : pairs.positives) {
        const auto a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> slot(n, SIZE_MAX);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = find(i);
        if (slot[r] == SIZE_MAX) {
            slot[r] = groups.size();
            groups.emplace_back();
        }
        groups[slot[r]].push_back(i);
    }
    return groups;
}

inline void add_into(TensorStore& dst, const TensorStore& src, double scale) {
    for (const auto& [name, t] : src) {
        auto& acc = dst.accumulator(name, t.shape).values;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * t.values[i];
    }
}

}  // namespace detail

/// Metric learning on geo-tagged clouds. Each step takes a batch of positive
/// groups, embeds every cloud, and for each (anchor, positive) pair picks the
/// hardest in-batch negative (farther than neg_m); the mean triplet loss is
/// backpropagated through every cloud that received a gradient.
inline TrainResult train_toy(const std::vector<TrainSample>& samples, const ModelConfig& cfg, ModelWeights weights,
                             const TrainOptions& opt) {
    cfg.validate();
    weights.check_complete(cfg);
    TrainResult res;
    if (opt.epochs <= 0) {
        res.weights = std::move(weights);
        return res;
    }
    std::vector<GeoTag> tags;
    for (const auto& s : samples) tags.push_back({s.id, s.easting, s.northing});
    const auto pairs = mine_pairs(tags, opt.pos_m, opt.neg_m);
    const std::size_t n = samples.size();
    std::vector<std::vector<char>> is_pos(n, std::vector<char>(n, 0)), is_neg(n, std::vector<char>(n, 0));
    for (auto [i, j] : pairs.positives) is_pos[i][j] = is_pos[j][i] = 1;
    for (auto [i, j] : pairs.negatives) is_neg[i][j] = is_neg[j][i] = 1;
    auto groups = detail::positive_groups(n, pairs);
    std::erase_if(groups, [](const auto& g) { return g.size() < 2; });
    require(!groups.empty() && !pairs.negatives.empty(), Errc::InsufficientData,
            "no (anchor, positive, negative) triplets in the training set");

    std::vector<ForwardPlan> plans(n);
    parallel_for(n, opt.threads, [&](std::size_t i) { plans[i] = make_plan(samples[i].cloud, cfg); });
    if (opt.calibrate && cfg.norm == NormMode::Affine) {
        std::vector<const ForwardPlan*> ptrs;
        for (const auto& p : plans) ptrs.push_back(&p);
        calibrate_norms(weights, cfg, ptrs);
    }

    MomentumSgd sgd(opt.lr, opt.momentum);
    std::mt19937_64 rng(opt.seed ^ 0x7472616eull);
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(groups.begin(), groups.end(), rng);
        double loss_sum = 0;
        std::size_t triplets = 0, active = 0;
        for (std::size_t g0 = 0; g0 < groups.size();) {
            std::vector<std::size_t> batch;
            while (g0 < groups.size() && (batch.empty() || batch.size() < opt.batch)) {
                batch.insert(batch.end(), groups[g0].begin(), groups[g0].end());
                ++g0;
            }
            const std::size_t b = batch.size();
            std::vector<Descriptor> desc(b);
            parallel_for(b, opt.threads, [&](std::size_t k) { desc[k] = forward(plans[batch[k]], weights, cfg); });

            std::vector<std::vector<double>> dgrad(b, std::vector<double>(cfg.d2, 0.0));
            std::size_t batch_triplets = 0;
            for (std::size_t a = 0; a < b; ++a)
                for (std::size_t p = 0; p < b; ++p) {
                    if (!is_pos[batch[a]][batch[p]]) continue;
                    std::size_t neg = b;
                    double best = 0;
                    for (std::size_t q = 0; q < b; ++q) {
                        if (!is_neg[batch[a]][batch[q]]) continue;
                        const double dist = l2_distance(desc[a], desc[q]);
                        if (neg == b || dist < best) {
                            neg = q;
                            best = dist;
                        }
                    }
                    if (neg == b) continue;
                    const auto tg = triplet_loss_grad(desc[a], desc[p], desc[neg], opt.margin);
                    ++batch_triplets;
                    loss_sum += tg.loss;
                    if (tg.loss > 0) ++active;
                    for (std::size_t c = 0; c < cfg.d2; ++c) {
                        dgrad[a][c] += tg.ga[c];
                        dgrad[p][c] += tg.gp[c];
                        dgrad[neg][c] += tg.gn[c];
                    }
                }
            triplets += batch_triplets;
            if (batch_triplets == 0) continue;

            std::vector<TensorStore> per_cloud(b);
            parallel_for(b, opt.threads, [&](std::size_t k) {
                if (std::all_of(dgrad[k].begin(), dgrad[k].end(), [](double v) { return v == 0.0; })) return;
                Tape t(&weights.tensors, true);
                const NodeId g = taped_forward(t, plans[batch[k]], cfg);
                t.backward(g, Matrix<double>(1, cfg.d2, dgrad[k]));
                per_cloud[k] = std::move(t.param_grads());
            });
            TensorStore grads;
            for (std::size_t k = 0; k < b; ++k)
                detail::add_into(grads, per_cloud[k], 1.0 / static_cast<double>(batch_triplets));
            sgd.step(weights.tensors, grads);
            auto& p = weights.tensors.at("gem.p").values[0];
            p = std::max(1.0, p);
        }
        res.log.push_back({epoch, triplets ? loss_sum / static_cast<double>(triplets) : 0.0, active});
    }
    res.weights = std::move(weights);
    return res;
}

/// Samples for the given places of a generated world (both passes).
inline std::vector<TrainSample> world_samples(const GeneratedWorld& g, std::size_t first_place, std::size_t last_place) {
    std::vector<TrainSample> out;
    for (const auto& s : g.submaps)
        if (s.place >= first_place && s.place < last_place) out.push_back({s.id, s.cloud, s.easting, s.northing});
    return out;
}

}  // namespace selfloc
