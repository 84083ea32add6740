#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsieve/attack.hpp"
#include "fedsieve/common.hpp"
#include "fedsieve/config.hpp"
#include "fedsieve/data.hpp"
#include "fedsieve/defense.hpp"
#include "fedsieve/model.hpp"
#include "fedsieve/outlier.hpp"

namespace fedsieve {

enum class DefenseKind { None, Fld, Krum, Bulyan, Rfa, TrimmedMean, FoolsGold, Dp };

inline DefenseKind defense_kind_from_string(const std::string& s) {
    if (s == "none") return DefenseKind::None;
    if (s == "fld") return DefenseKind::Fld;
    if (s == "krum") return DefenseKind::Krum;
    if (s == "bulyan") return DefenseKind::Bulyan;
    if (s == "rfa") return DefenseKind::Rfa;
    if (s == "trimmed_mean") return DefenseKind::TrimmedMean;
    if (s == "foolsgold") return DefenseKind::FoolsGold;
    if (s == "dp") return DefenseKind::Dp;
    throw ConfigError("unknown defense: " + s);
}

struct DefenseSpec {
    DefenseKind kind = DefenseKind::Fld;
    double mu = 3.0;
    std::optional<std::size_t> f;       // krum / bulyan
    std::optional<std::size_t> k_trim;  // trimmed mean
    double clip_norm = 1.0;             // dp
    double sigma = 0.0;                 // dp
};

struct DatasetSpec {
    enum class Kind { Blobs, Idx } kind = Kind::Blobs;
    // blobs
    std::size_t classes = 10;
    std::size_t dim = 64;
    std::size_t per_class = 100;
    std::size_t per_class_test = 30;
    double spread = 0.5;
    // idx
    std::string train_images, train_labels, test_images, test_labels;

    double dirichlet_alpha = 100.0;
};

struct ExperimentConfig {
    std::size_t clients = 20;    // N
    double participation = 0.5;  // K
    std::size_t rounds = 40;     // T
    double pmr = 0.0;
    std::uint64_t seed = 1;
    DatasetSpec dataset;
    std::vector<std::size_t> hidden = {32};
    TrainingConfig training;
    std::optional<AttackSpec> attack;
    DefenseSpec defense;
    std::string out_dir;

    // n = max(K*N, 1) participants per round.
    std::size_t round_participants() const {
        double n = participation * static_cast<double>(clients);
        return std::max<std::size_t>(static_cast<std::size_t>(std::llround(n)), 1);
    }

    // Fixed attacker cohort size: ceil(pmr * N).
    std::size_t cohort_size() const {
        return static_cast<std::size_t>(std::ceil(pmr * static_cast<double>(clients) - 1e-9));
    }

    // Attackers sampled into each round: ceil(pmr * n), capped by the cohort.
    std::size_t attackers_per_round() const {
        auto n = round_participants();
        auto k = static_cast<std::size_t>(std::ceil(pmr * static_cast<double>(n) - 1e-9));
        return std::min(k, cohort_size());
    }

    void validate() const {
        if (clients < 1) throw ConfigError("experiment: clients must be >= 1");
        if (participation <= 0.0 || participation > 1.0)
            throw ConfigError("experiment: participation must be in (0,1]");
        if (pmr < 0.0 || pmr >= 1.0) throw ConfigError("experiment: pmr must be in [0,1)");
        training.validate();
        if (attack.has_value()) attack->validate();
    }
};

// What the harness knows about one upload; the ground-truth bit never crosses
// into any defense, which only ever receives the embedded ClientUpdate.
struct RoundSubmission {
    ClientUpdate update;
    bool ground_truth_malicious = false;
};

struct MetricsRecord {
    std::size_t round = 0;
    double ma = 0.0;
    double ba = 0.0;
    std::vector<std::size_t> benign_set;
    std::vector<std::pair<std::size_t, std::size_t>> flags;  // (client_id, flagged layers)
    double wall_time = 0.0;
};

namespace detail {

struct PreparedData {
    std::vector<DatasetShard> shards;  // one per client
    DatasetShard clean_test;
    DatasetShard trigger_test;  // empty when no attack is configured
    std::size_t input_dim = 0;
    std::size_t classes = 0;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
    PreparedData out;
    DatasetShard train;
    if (cfg.dataset.kind == DatasetSpec::Kind::Blobs) {
        std::size_t per_class_total = cfg.dataset.per_class + cfg.dataset.per_class_test;
        DatasetShard full = synth_blobs(cfg.dataset.classes, cfg.dataset.dim, per_class_total,
                                        cfg.dataset.spread, mix_seed(cfg.seed, 0x64617461));
        // synth_blobs emits class blocks; the first per_class of each block
        // train, the tail is held out for evaluation.
        for (std::size_t c = 0; c < cfg.dataset.classes; ++c) {
            std::size_t base = c * per_class_total;
            for (std::size_t i = 0; i < per_class_total; ++i) {
                auto& dst = i < cfg.dataset.per_class ? train : out.clean_test;
                dst.samples.push_back(full.samples[base + i]);
            }
        }
    } else {
        train = load_idx(cfg.dataset.train_images, cfg.dataset.train_labels);
        out.clean_test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
    }
    out.input_dim = train.feature_dim();
    out.classes = std::max(train.class_count(), out.clean_test.class_count());

    PartitionSpec part;
    part.dirichlet_alpha = cfg.dataset.dirichlet_alpha;
    part.client_count = cfg.clients;
    part.seed = mix_seed(cfg.seed, 0x70617274);
    out.shards = dirichlet_partition(train, part);

    if (cfg.attack.has_value())
        out.trigger_test = make_backdoor_testset(out.clean_test, cfg.attack->trigger);
    return out;
}

struct RoundSample {
    std::vector<std::size_t> participants;  // ascending client ids
    std::vector<std::size_t> attackers;     // subset of participants
};

// Stratified round sampling: exactly `attackers_per_round` cohort members
// plus honest clients fill the round, both draws seeded.
inline RoundSample sample_round(const ExperimentConfig& cfg, const CompromisedCohort& cohort,
                                std::size_t round) {
    std::size_t n = cfg.round_participants();
    std::size_t k = cfg.attackers_per_round();
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x73616d70, round));  // "samp"

    std::vector<std::size_t> comp = cohort.client_ids;
    std::vector<std::size_t> honest;
    for (std::size_t id = 0; id < cfg.clients; ++id)
        if (!cohort.contains(id)) honest.push_back(id);

    std::shuffle(comp.begin(), comp.end(), rng);
    std::shuffle(honest.begin(), honest.end(), rng);
    if (honest.size() + k < n) throw ConfigError("sample_round: not enough honest clients");

    RoundSample rs;
    rs.attackers.assign(comp.begin(), comp.begin() + static_cast<std::ptrdiff_t>(k));
    rs.participants = rs.attackers;
    rs.participants.insert(rs.participants.end(), honest.begin(),
                           honest.begin() + static_cast<std::ptrdiff_t>(n - k));
    std::sort(rs.participants.begin(), rs.participants.end());
    std::sort(rs.attackers.begin(), rs.attackers.end());
    return rs;
}

inline DefenseOutcome dispatch_defense(const ExperimentConfig& cfg,
                                       const std::vector<ClientUpdate>& updates,
                                       const LayeredParams& prev_global,
                                       std::map<std::size_t, std::vector<double>>& histories,
                                       std::size_t round) {
    const std::size_t n = updates.size();
    switch (cfg.defense.kind) {
        case DefenseKind::None: {
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), 0);
            return detail::outcome_from_positions(updates, all);
        }
        case DefenseKind::Fld:
            return fld_aggregate(updates, cfg.defense.mu);
        case DefenseKind::Krum: {
            std::size_t f = cfg.defense.f.value_or((n + 3) / 4);  // ceil(n/4)
            return krum(updates, f);
        }
        case DefenseKind::Bulyan: {
            std::size_t f = cfg.defense.f.value_or(n >= 7 ? (n - 3) / 4 : 0);
            return bulyan(updates, f);
        }
        case DefenseKind::Rfa:
            return rfa(updates);
        case DefenseKind::TrimmedMean:
            return trimmed_mean_defense(updates, cfg.defense.k_trim.value_or(n / 5));
        case DefenseKind::FoolsGold: {
            auto base = prev_global.flatten();
            std::vector<std::vector<double>> hist;
            hist.reserve(n);
            for (const auto& u : updates) {
                auto& h = histories[u.client_id];
                if (h.empty()) h.assign(base.size(), 0.0);
                auto flat = u.params.flatten();
                for (std::size_t t = 0; t < flat.size(); ++t) h[t] += flat[t] - base[t];
                hist.push_back(h);
            }
            return foolsgold_aggregate(updates, hist);
        }
        case DefenseKind::Dp:
            return dp_defense(updates, prev_global, cfg.defense.clip_norm, cfg.defense.sigma,
                              mix_seed(cfg.seed, 0x6470, round));
    }
    throw ConfigError("dispatch_defense: unhandled defense");
}

}  // namespace detail

// One full experiment: T rounds of sampling, local work, defense aggregation
// and evaluation. Deterministic per (config, seed).
inline std::vector<MetricsRecord> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    auto data = detail::prepare_data(cfg);

    ArchSpec arch;
    arch.dims.push_back(data.input_dim);
    for (std::size_t h : cfg.hidden) arch.dims.push_back(h);
    arch.dims.push_back(data.classes);
    LayeredParams global = init_model(arch, mix_seed(cfg.seed, 0x6d6f64656c));

    std::size_t fragments = cfg.attack.has_value() ? cfg.attack->trigger.fragment_count : 1;
    std::vector<std::size_t> cohort_ids;
    {
        std::vector<std::size_t> order(cfg.clients);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(cfg.seed, 0x636f686f));  // "coho"
        std::shuffle(order.begin(), order.end(), rng);
        cohort_ids.assign(order.begin(),
                          order.begin() + static_cast<std::ptrdiff_t>(cfg.cohort_size()));
    }
    CompromisedCohort cohort = CompromisedCohort::create(cohort_ids, cfg.clients, fragments);

    std::map<std::size_t, std::vector<double>> histories;  // foolsgold state
    std::vector<MetricsRecord> records;
    records.reserve(cfg.rounds);

    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        auto start = std::chrono::steady_clock::now();
        auto rs = detail::sample_round(cfg, cohort, round);
        bool attack_now = cfg.attack.has_value() && schedule_active(*cfg.attack, round);

        std::vector<RoundSubmission> submissions(rs.participants.size());
        std::vector<std::size_t> honest_pos, attacker_pos;
        for (std::size_t p = 0; p < rs.participants.size(); ++p) {
            std::size_t id = rs.participants[p];
            bool acts = attack_now && cohort.contains(id);
            (acts ? attacker_pos : honest_pos).push_back(p);
            submissions[p].update.client_id = id;
            submissions[p].ground_truth_malicious = acts;
        }

        auto client_cfg = [&](std::size_t id) {
            TrainingConfig tc = cfg.training;
            tc.seed = mix_seed(cfg.seed, 0x636c6e74, id);  // "clnt"
            return tc;
        };

        try {
            parallel_for(honest_pos.size(), [&](std::size_t t) {
                std::size_t p = honest_pos[t];
                std::size_t id = rs.participants[p];
                submissions[p].update.params =
                    local_train(global, data.shards[id], client_cfg(id), round);
            });

            std::optional<BenignStats> stats;
            if (attack_now && cfg.attack->family == AttackFamily::LittleIsEnough) {
                std::vector<LayeredParams> honest_models;
                for (std::size_t p : honest_pos) honest_models.push_back(submissions[p].update.params);
                if (honest_models.empty()) throw Error("little_is_enough: no honest submissions");
                stats = compute_benign_stats(honest_models);
            }

            parallel_for(attacker_pos.size(), [&](std::size_t t) {
                std::size_t p = attacker_pos[t];
                std::size_t id = rs.participants[p];
                CraftContext ctx;
                ctx.round = round;
                ctx.n_participants = rs.participants.size();
                auto frag = cohort.fragment_of.find(id);
                if (frag != cohort.fragment_of.end()) ctx.fragment = frag->second;
                ctx.benign_stats = stats.has_value() ? &*stats : nullptr;
                submissions[p].update.params =
                    craft_update(*cfg.attack, global, data.shards[id], client_cfg(id), ctx);
            });
        } catch (const TrainingDivergedError&) {
            throw;
        } catch (const Error& e) {
            throw Error("round " + std::to_string(round) + ": " + e.what());
        }

        std::vector<ClientUpdate> updates;
        updates.reserve(submissions.size());
        for (const auto& s : submissions) updates.push_back(s.update);

        DefenseOutcome outcome =
            detail::dispatch_defense(cfg, updates, global, histories, round);
        outcome.aggregated.validate_finite("aggregated global");
        global = outcome.aggregated;

        MetricsRecord rec;
        rec.round = round;
        rec.ma = evaluate(global, data.clean_test).accuracy;
        rec.ba = data.trigger_test.empty() ? 0.0 : evaluate(global, data.trigger_test).accuracy;
        rec.benign_set = outcome.benign_ids;
        for (std::size_t p = 0; p < updates.size(); ++p)
            rec.flags.emplace_back(updates[p].client_id,
                                   p < outcome.per_client_flags.size() ? outcome.per_client_flags[p]
                                                                       : 0);
        rec.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Convergence probe: strongly convex quadratics F_i(w) = 0.5||w - a_i||^2
// with decaying rate theta/(t+eps), scale-replacement attackers, and FLD
// filtering. Reports F(G^t) - F* per round (closed form: 0.5||G^t - mean a||^2).
// ---------------------------------------------------------------------------

struct ProbeConfig {
    std::size_t clients = 10;
    std::size_t rounds = 200;
    double pmr = 0.2;
    std::uint64_t seed = 1;
    std::size_t dim = 8;
    double target_spread = 0.3;
    double theta = 2.0;
    double eps = 10.0;
    std::size_t local_steps = 1;
    bool defense_on = true;
    double mu = 3.0;
    double attack_distance = 10.0;  // attacker target X = distance * (1,...,1)

    std::size_t attacker_count() const {
        return static_cast<std::size_t>(
            std::ceil(pmr * static_cast<double>(clients) - 1e-9));
    }
};

inline std::vector<double> convergence_probe(const ProbeConfig& cfg) {
    if (cfg.clients < 3) throw ConfigError("probe: needs >= 3 clients");
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x70726f6265));  // "probe"
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<std::vector<double>> targets(cfg.clients, std::vector<double>(cfg.dim));
    for (auto& t : targets)
        for (auto& v : t) v = cfg.target_spread * noise(rng);

    std::vector<double> center(cfg.dim, 0.0);
    for (const auto& t : targets)
        for (std::size_t j = 0; j < cfg.dim; ++j) center[j] += t[j];
    for (auto& v : center) v /= static_cast<double>(cfg.clients);

    std::vector<double> backdoor(cfg.dim, cfg.attack_distance);

    LayeredParams global;
    global.layers.push_back({"w", {cfg.dim}, std::vector<double>(cfg.dim, 0.0)});

    std::size_t attackers = cfg.attacker_count();
    std::vector<double> gaps;
    gaps.reserve(cfg.rounds);
    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        double eta = cfg.theta / (static_cast<double>(round) + cfg.eps);
        std::vector<ClientUpdate> updates(cfg.clients);
        for (std::size_t i = 0; i < cfg.clients; ++i) {
            updates[i].client_id = i;
            if (i < attackers) {
                // Model replacement toward the backdoor point.
                double n = static_cast<double>(cfg.clients);
                LayeredParams x = global;
                for (std::size_t j = 0; j < cfg.dim; ++j) {
                    double g = global.layers[0].values[j];
                    x.layers[0].values[j] = n * (backdoor[j] - g) + g;
                }
                updates[i].params = x;
            } else {
                updates[i].params =
                    quadratic_descend(global, targets[i], eta, cfg.local_steps);
            }
        }
        if (cfg.defense_on) {
            global = fld_aggregate(updates, cfg.mu).aggregated;
        } else {
            std::vector<LayeredParams> all;
            for (auto& u : updates) all.push_back(std::move(u.params));
            global = mean_params(all);
        }
        double gap = 0.0;
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            double diff = global.layers[0].values[j] - center[j];
            gap += diff * diff;
        }
        gaps.push_back(0.5 * gap);
    }
    return gaps;
}

// ---------------------------------------------------------------------------
// Metric persistence.
// ---------------------------------------------------------------------------

enum class EmitFormat { Csv, JsonLines };

inline nlohmann::json record_to_json(const MetricsRecord& r) {
    nlohmann::json j;
    j["round"] = r.round;
    j["MA"] = r.ma;
    j["BA"] = r.ba;
    j["benign_set"] = r.benign_set;
    j["flags"] = r.flags;
    j["wall_time"] = r.wall_time;
    return j;
}

inline void emit(const std::vector<MetricsRecord>& records, const std::string& path,
                 EmitFormat format) {
    std::ofstream out(path);
    if (!out) throw IoError("emit: cannot open " + path);
    if (format == EmitFormat::Csv) {
        out << "round,MA,BA,n_benign,flags_json\n";
        for (const auto& r : records) {
            nlohmann::json flags = r.flags;
            out << r.round << ',' << nlohmann::json(r.ma).dump() << ','
                << nlohmann::json(r.ba).dump() << ',' << r.benign_set.size() << ",\""
                << flags.dump() << "\"\n";
        }
    } else {
        for (const auto& r : records) out << record_to_json(r).dump() << '\n';
    }
    out.flush();
    if (!out) throw IoError("emit: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Config file binding.
// ---------------------------------------------------------------------------

inline ExperimentConfig experiment_from_config(const ConfigFile& cf) {
    ExperimentConfig cfg;
    cfg.clients = static_cast<std::size_t>(cf.get_int("experiment.clients", 20));
    cfg.participation = cf.get_double("experiment.participation", 0.5);
    cfg.rounds = static_cast<std::size_t>(cf.get_int("experiment.rounds", 40));
    cfg.pmr = cf.get_double("experiment.pmr", 0.0);
    cfg.seed = static_cast<std::uint64_t>(cf.get_int("experiment.seed", 1));
    cfg.out_dir = cf.get_str("experiment.out_dir", "");

    std::string kind = cf.get_str("dataset.kind", "blobs");
    if (kind == "blobs") {
        cfg.dataset.kind = DatasetSpec::Kind::Blobs;
        cfg.dataset.classes = static_cast<std::size_t>(cf.get_int("dataset.classes", 10));
        cfg.dataset.dim = static_cast<std::size_t>(cf.get_int("dataset.dim", 64));
        cfg.dataset.per_class = static_cast<std::size_t>(cf.get_int("dataset.per_class", 100));
        cfg.dataset.per_class_test =
            static_cast<std::size_t>(cf.get_int("dataset.per_class_test", 30));
        cfg.dataset.spread = cf.get_double("dataset.spread", 0.5);
    } else if (kind == "idx") {
        cfg.dataset.kind = DatasetSpec::Kind::Idx;
        cfg.dataset.train_images = cf.require_str("dataset.train_images");
        cfg.dataset.train_labels = cf.require_str("dataset.train_labels");
        cfg.dataset.test_images = cf.require_str("dataset.test_images");
        cfg.dataset.test_labels = cf.require_str("dataset.test_labels");
    } else {
        throw ConfigError("dataset.kind must be blobs or idx");
    }
    cfg.dataset.dirichlet_alpha = cf.get_double("dataset.dirichlet_alpha", 100.0);

    cfg.hidden = cf.get_index_list("model.hidden", {32});

    cfg.training.local_epochs = static_cast<std::size_t>(cf.get_int("training.local_epochs", 2));
    cfg.training.batch_size = static_cast<std::size_t>(cf.get_int("training.batch_size", 32));
    if (cf.has("training.lr_theta")) {
        cfg.training.lr.kind = LrSchedule::Kind::Decay;
        cfg.training.lr.theta = cf.get_double("training.lr_theta", 1.0);
        cfg.training.lr.eps = cf.get_double("training.lr_eps", 1.0);
    } else {
        cfg.training.lr.kind = LrSchedule::Kind::Constant;
        cfg.training.lr.eta = cf.get_double("training.lr", 0.1);
    }

    std::string family = cf.get_str("attack.family", "none");
    if (family != "none") {
        AttackSpec atk;
        atk.family = attack_family_from_string(family);
        atk.pdr = cf.get_double("attack.pdr", 0.3);
        atk.alpha = cf.get_double("attack.alpha", 1.0);
        if (cf.has("attack.scale_factor")) atk.scale_factor = cf.get_double("attack.scale_factor", 1.0);
        std::string sched = cf.get_str("attack.schedule", "multi_shot");
        if (sched == "single_shot") {
            atk.schedule = Schedule::single_shot(
                static_cast<std::size_t>(cf.get_int("attack.round", 1)));
        } else if (sched == "multi_shot") {
            atk.schedule = Schedule::multi_shot(
                static_cast<std::size_t>(cf.get_int("attack.from_round", 1)),
                static_cast<std::size_t>(cf.get_int("attack.to_round",
                                                    static_cast<std::int64_t>(cfg.rounds))));
        } else {
            throw ConfigError("attack.schedule must be single_shot or multi_shot");
        }
        atk.trigger.pixel_indices =
            cf.get_index_list("attack.trigger_pixels", {0, 1, 2, 16, 17, 18, 32, 33, 34, 48, 49, 50});
        atk.trigger.pixel_value = cf.get_double("attack.trigger_value", 3.0);
        atk.trigger.target_label =
            static_cast<std::size_t>(cf.get_int("attack.target_label", 0));
        atk.trigger.fragment_count = static_cast<std::size_t>(cf.get_int("attack.fragments", 1));
        cfg.attack = std::move(atk);
    }

    cfg.defense.kind = defense_kind_from_string(cf.get_str("defense.name", "fld"));
    cfg.defense.mu = cf.get_double("defense.mu", 3.0);
    if (cf.has("defense.f"))
        cfg.defense.f = static_cast<std::size_t>(cf.get_int("defense.f", 0));
    if (cf.has("defense.k_trim"))
        cfg.defense.k_trim = static_cast<std::size_t>(cf.get_int("defense.k_trim", 0));
    cfg.defense.clip_norm = cf.get_double("defense.clip_norm", 1.0);
    cfg.defense.sigma = cf.get_double("defense.sigma", 0.0);
    return cfg;
}

inline ProbeConfig probe_from_config(const ConfigFile& cf) {
    ProbeConfig cfg;
    cfg.clients = static_cast<std::size_t>(cf.get_int("probe.clients", 10));
    cfg.rounds = static_cast<std::size_t>(cf.get_int("probe.rounds", 200));
    cfg.pmr = cf.get_double("probe.pmr", 0.2);
    cfg.seed = static_cast<std::uint64_t>(cf.get_int("probe.seed", 1));
    cfg.dim = static_cast<std::size_t>(cf.get_int("probe.dim", 8));
    cfg.target_spread = cf.get_double("probe.spread", 0.3);
    cfg.theta = cf.get_double("probe.theta", 2.0);
    cfg.eps = cf.get_double("probe.eps", 10.0);
    cfg.local_steps = static_cast<std::size_t>(cf.get_int("probe.local_steps", 1));
    cfg.defense_on = cf.get_str("probe.defense", "fld") != "none";
    cfg.mu = cf.get_double("probe.mu", 3.0);
    cfg.attack_distance = cf.get_double("probe.attack_distance", 10.0);
    return cfg;
}

}  // namespace fedsieve
