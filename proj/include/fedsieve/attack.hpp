#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedsieve/common.hpp"
#include "fedsieve/data.hpp"
#include "fedsieve/model.hpp"

namespace fedsieve {

enum class AttackFamily {
    LabelFlip,
    PixelTrigger,
    Dba,
    ConstrainAndScale,
    ScaleReplacement,
    LittleIsEnough,
};

inline AttackFamily attack_family_from_string(const std::string& s) {
    if (s == "label_flip") return AttackFamily::LabelFlip;
    if (s == "pixel_trigger") return AttackFamily::PixelTrigger;
    if (s == "dba") return AttackFamily::Dba;
    if (s == "constrain_and_scale") return AttackFamily::ConstrainAndScale;
    if (s == "scale_replacement") return AttackFamily::ScaleReplacement;
    if (s == "little_is_enough") return AttackFamily::LittleIsEnough;
    throw ConfigError("unknown attack family: " + s);
}

struct Schedule {
    enum class Kind { SingleShot, MultiShot } kind = Kind::MultiShot;
    std::size_t from = 0;
    std::size_t to = 0;  // inclusive

    static Schedule single_shot(std::size_t round) { return {Kind::SingleShot, round, round}; }
    static Schedule multi_shot(std::size_t from, std::size_t to) {
        if (from > to) throw ConfigError("schedule: from_round > to_round");
        return {Kind::MultiShot, from, to};
    }
};

struct AttackSpec {
    AttackFamily family = AttackFamily::PixelTrigger;
    double pdr = 0.3;
    double alpha = 1.0;  // evasion weight in alpha*L_class + (1-alpha)*L_ano
    std::optional<double> scale_factor;  // replacement multiplier, or the LIE z
    Schedule schedule = Schedule::multi_shot(0, SIZE_MAX);
    TriggerPattern trigger;

    void validate() const {
        if (pdr < 0.0 || pdr > 1.0) throw ConfigError("attack: pdr must be in [0,1]");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("attack: alpha must be in [0,1]");
        if (scale_factor.has_value()) {
            // The replacement multiplier must amplify; the LIE z only needs
            // to be non-negative (z = 0 degenerates to the benign mean).
            double lower = family == AttackFamily::LittleIsEnough ? 0.0 : 1.0;
            if (*scale_factor < lower) throw ConfigError("attack: scale_factor too small");
        }
    }
};

// Fixed set of attacker-controlled client ids plus the coordination state
// they share (DBA fragment assignment, written once at experiment setup).
struct CompromisedCohort {
    std::vector<std::size_t> client_ids;  // ascending
    std::map<std::size_t, std::size_t> fragment_of;

    static CompromisedCohort create(std::vector<std::size_t> ids, std::size_t total_clients,
                                    std::size_t fragment_count) {
        CompromisedCohort c;
        std::sort(ids.begin(), ids.end());
        c.client_ids = std::move(ids);
        if (total_clients > 0 &&
            2 * c.client_ids.size() >= total_clients && !c.client_ids.empty()) {
            std::cerr << "warning: compromised clients are not a minority ("
                      << c.client_ids.size() << "/" << total_clients << ")\n";
        }
        for (std::size_t i = 0; i < c.client_ids.size(); ++i)
            c.fragment_of[c.client_ids[i]] = fragment_count ? i % fragment_count : 0;
        return c;
    }

    bool contains(std::size_t id) const {
        return std::binary_search(client_ids.begin(), client_ids.end(), id);
    }
};

// Per-coordinate statistics of the honest submissions in one round, provided
// to colluding attackers by the harness.
struct BenignStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

struct CraftContext {
    std::size_t round = 0;
    std::size_t n_participants = 1;           // the n in replacement scaling
    std::optional<std::size_t> fragment;      // DBA fragment for this client
    const BenignStats* benign_stats = nullptr;
};

inline bool schedule_active(const AttackSpec& spec, std::size_t round) {
    return round >= spec.schedule.from && round <= spec.schedule.to;
}

inline BenignStats compute_benign_stats(const std::vector<LayeredParams>& honest) {
    if (honest.empty()) throw Error("benign stats: no honest submissions");
    std::size_t d = honest[0].flat_size();
    BenignStats st;
    st.mean.assign(d, 0.0);
    st.stddev.assign(d, 0.0);
    std::vector<std::vector<double>> flats;
    flats.reserve(honest.size());
    for (const auto& h : honest) flats.push_back(h.flatten());
    for (const auto& f : flats)
        for (std::size_t i = 0; i < d; ++i) st.mean[i] += f[i];
    for (auto& m : st.mean) m /= static_cast<double>(flats.size());
    for (const auto& f : flats)
        for (std::size_t i = 0; i < d; ++i) {
            double diff = f[i] - st.mean[i];
            st.stddev[i] += diff * diff;
        }
    for (auto& s : st.stddev) s = std::sqrt(s / static_cast<double>(flats.size()));
    return st;
}

// Compromised-client behavior, dispatched on the attack family. The data
// poisoning families train normally on a poisoned shard; the model poisoning
// families manipulate the upload directly.
inline LayeredParams craft_update(const AttackSpec& spec, const LayeredParams& global,
                                  const DatasetShard& shard, const TrainingConfig& cfg,
                                  const CraftContext& ctx) {
    spec.validate();
    if (!schedule_active(spec, ctx.round))
        throw Error("craft_update: round outside attack schedule");

    std::uint64_t poison_seed = mix_seed(cfg.seed, 0x61746b, ctx.round);  // "atk"

    switch (spec.family) {
        case AttackFamily::LabelFlip: {
            TriggerPattern label_only = spec.trigger;
            label_only.pixel_indices.clear();
            label_only.fragment_count = 1;
            auto poisoned = poison_shard(shard, label_only, spec.pdr, std::nullopt, poison_seed);
            return local_train(global, poisoned, cfg, ctx.round);
        }
        case AttackFamily::PixelTrigger: {
            auto poisoned = poison_shard(shard, spec.trigger, spec.pdr, std::nullopt, poison_seed);
            return local_train(global, poisoned, cfg, ctx.round);
        }
        case AttackFamily::Dba: {
            if (!ctx.fragment.has_value()) throw Error("dba: no fragment assigned");
            auto poisoned = poison_shard(shard, spec.trigger, spec.pdr, ctx.fragment, poison_seed);
            return local_train(global, poisoned, cfg, ctx.round);
        }
        case AttackFamily::ConstrainAndScale: {
            auto poisoned = poison_shard(shard, spec.trigger, spec.pdr, std::nullopt, poison_seed);
            EvasionTerm evasion{&global, spec.alpha};
            return local_train(global, poisoned, cfg, ctx.round, &evasion);
        }
        case AttackFamily::ScaleReplacement: {
            auto poisoned = poison_shard(shard, spec.trigger, spec.pdr, std::nullopt, poison_seed);
            LayeredParams backdoor = local_train(global, poisoned, cfg, ctx.round);
            double factor =
                spec.scale_factor.value_or(static_cast<double>(ctx.n_participants));
            // w = factor * (X - G) + G, so averaging with (n-1) copies of G
            // reproduces X when factor = n.
            return map2(backdoor, global,
                        [factor](double x, double g) { return factor * (x - g) + g; });
        }
        case AttackFamily::LittleIsEnough: {
            if (ctx.benign_stats == nullptr)
                throw Error("little_is_enough: missing benign stats");
            double z = spec.scale_factor.value_or(1.5);
            const auto& st = *ctx.benign_stats;
            if (st.mean.size() != global.flat_size())
                throw Error("little_is_enough: stats dimension mismatch");
            std::vector<double> crafted(st.mean.size());
            for (std::size_t i = 0; i < crafted.size(); ++i)
                crafted[i] = st.mean[i] + z * st.stddev[i];
            return LayeredParams::from_flat(global, crafted);
        }
    }
    throw Error("craft_update: unhandled family");
}

}  // namespace fedsieve
