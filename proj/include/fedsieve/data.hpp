#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fedsieve/common.hpp"

namespace fedsieve {

struct Sample {
    std::vector<double> features;
    std::size_t label = 0;
};

struct DatasetShard {
    std::vector<Sample> samples;
    int owner = -1;  // client id; -1 when not assigned

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    std::size_t feature_dim() const { return samples.empty() ? 0 : samples[0].features.size(); }

    std::size_t class_count() const {
        std::size_t c = 0;
        for (const auto& s : samples) c = std::max(c, s.label + 1);
        return c;
    }
};

struct TriggerPattern {
    std::vector<std::size_t> pixel_indices;
    double pixel_value = 1.0;
    std::size_t target_label = 0;
    std::size_t fragment_count = 1;

    void validate(std::size_t feature_dim) const {
        for (std::size_t idx : pixel_indices) {
            if (idx >= feature_dim) throw ConfigError("trigger pixel index out of range");
        }
        if (fragment_count < 1) throw ConfigError("trigger fragment_count must be >= 1");
        if (!pixel_indices.empty() && fragment_count > pixel_indices.size())
            throw ConfigError("trigger fragment_count exceeds pixel count");
    }

    // Contiguous chunk of pixel_indices for one DBA fragment.
    std::vector<std::size_t> fragment_pixels(std::size_t fragment) const {
        if (fragment >= fragment_count) throw ConfigError("trigger fragment out of range");
        std::size_t total = pixel_indices.size();
        std::size_t lo = fragment * total / fragment_count;
        std::size_t hi = (fragment + 1) * total / fragment_count;
        return {pixel_indices.begin() + static_cast<std::ptrdiff_t>(lo),
                pixel_indices.begin() + static_cast<std::ptrdiff_t>(hi)};
    }
};

struct PartitionSpec {
    double dirichlet_alpha = 1.0;
    std::size_t client_count = 1;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const char* what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw FormatError(std::string("idx: truncated reading ") + what);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace detail

// IDX pair loader (the MNIST container format). Image magic 0x00000803
// (count, rows, cols follow), label magic 0x00000801 (count follows).
// Pixel bytes are scaled to [0,1].
inline DatasetShard load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("idx: cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("idx: cannot open " + labels_path);

    std::uint32_t img_magic = detail::read_be_u32(img, "image magic");
    if (img_magic != 0x00000803u) throw FormatError("idx: bad image magic");
    std::uint32_t count = detail::read_be_u32(img, "image count");
    std::uint32_t rows = detail::read_be_u32(img, "rows");
    std::uint32_t cols = detail::read_be_u32(img, "cols");

    std::uint32_t lab_magic = detail::read_be_u32(lab, "label magic");
    if (lab_magic != 0x00000801u) throw FormatError("idx: bad label magic");
    std::uint32_t lab_count = detail::read_be_u32(lab, "label count");
    if (lab_count != count) throw FormatError("idx: image/label count mismatch");

    std::size_t dim = static_cast<std::size_t>(rows) * cols;
    DatasetShard shard;
    shard.samples.resize(count);
    std::vector<unsigned char> pixel(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(pixel.data()), static_cast<std::streamsize>(dim));
        if (!img) throw FormatError("idx: truncated image data");
        char label_byte = 0;
        lab.read(&label_byte, 1);
        if (!lab) throw FormatError("idx: truncated label data");
        auto& s = shard.samples[i];
        s.features.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) s.features[j] = pixel[j] / 255.0;
        s.label = static_cast<unsigned char>(label_byte);
    }
    return shard;
}

// Gaussian clusters with per-class means drawn uniform in [-1,1]^dim.
// Samples are emitted class by class, per_class each, deterministic per seed.
inline DatasetShard synth_blobs(std::size_t classes, std::size_t dim, std::size_t per_class,
                                double spread, std::uint64_t seed) {
    if (classes < 2 || dim < 2) throw ConfigError("synth_blobs: classes >= 2 and dim >= 2");
    std::mt19937_64 rng(mix_seed(seed, 0x626c6f62));  // "blob"
    std::uniform_real_distribution<double> mean_dist(-1.0, 1.0);
    std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
    for (auto& m : means)
        for (auto& x : m) x = mean_dist(rng);

    std::normal_distribution<double> noise(0.0, 1.0);
    DatasetShard shard;
    shard.samples.reserve(classes * per_class);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s) {
            Sample sample;
            sample.label = c;
            sample.features.resize(dim);
            for (std::size_t j = 0; j < dim; ++j) {
                double eps = spread > 0.0 ? spread * noise(rng) : 0.0;
                sample.features[j] = means[c][j] + eps;
            }
            shard.samples.push_back(std::move(sample));
        }
    }
    return shard;
}

namespace detail {

// Largest-remainder apportionment of `total` items to `weights` (ties to
// the lowest index), so the allocation is exhaustive and deterministic.
inline std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> counts(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        double share = weights[i] / wsum * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(share));
        assigned += counts[i];
        rema.emplace_back(share - std::floor(share), i);
    }
    std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) counts[rema[r % rema.size()].second]++;
    return counts;
}

}  // namespace detail

// Per class, draw client proportions ~ Dirichlet(alpha * 1) and allocate that
// class's samples accordingly. Output shards are disjoint and jointly
// exhaustive; a client left empty is repaired with one sample from the
// largest client.
inline std::vector<DatasetShard> dirichlet_partition(const DatasetShard& data,
                                                     const PartitionSpec& spec) {
    if (data.empty()) throw Error("dirichlet_partition: empty dataset");
    if (spec.dirichlet_alpha <= 0.0) throw ConfigError("dirichlet_partition: alpha must be > 0");
    if (spec.client_count < 1) throw ConfigError("dirichlet_partition: need >= 1 client");
    if (data.size() < spec.client_count)
        throw ConfigError("dirichlet_partition: fewer samples than clients");

    std::mt19937_64 rng(mix_seed(spec.seed, 0x64697269));  // "diri"
    std::size_t classes = data.class_count();

    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.samples[i].label].push_back(i);

    std::vector<std::vector<std::size_t>> assignment(spec.client_count);
    std::gamma_distribution<double> gamma(spec.dirichlet_alpha, 1.0);
    for (std::size_t c = 0; c < classes; ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<double> props(spec.client_count);
        for (auto& p : props) {
            p = gamma(rng);
            if (p <= 0.0) p = 1e-300;  // gamma can underflow to 0 at tiny alpha
        }
        auto counts = detail::apportion(props, idx.size());
        std::size_t cursor = 0;
        for (std::size_t cl = 0; cl < spec.client_count; ++cl) {
            for (std::size_t t = 0; t < counts[cl]; ++t) assignment[cl].push_back(idx[cursor++]);
        }
    }

    // Repair: every selected client must be able to train on something.
    for (std::size_t cl = 0; cl < spec.client_count; ++cl) {
        while (assignment[cl].empty()) {
            std::size_t largest = 0;
            for (std::size_t j = 1; j < spec.client_count; ++j)
                if (assignment[j].size() > assignment[largest].size()) largest = j;
            std::uniform_int_distribution<std::size_t> pick(0, assignment[largest].size() - 1);
            std::size_t pos = pick(rng);
            assignment[cl].push_back(assignment[largest][pos]);
            assignment[largest].erase(assignment[largest].begin() +
                                      static_cast<std::ptrdiff_t>(pos));
        }
    }

    std::vector<DatasetShard> shards(spec.client_count);
    for (std::size_t cl = 0; cl < spec.client_count; ++cl) {
        shards[cl].owner = static_cast<int>(cl);
        shards[cl].samples.reserve(assignment[cl].size());
        for (std::size_t i : assignment[cl]) shards[cl].samples.push_back(data.samples[i]);
    }
    return shards;
}

// Poisons exactly round(pdr * |shard|) samples: trigger pixels (or only the
// chosen fragment's pixels) set to pixel_value, label overwritten with the
// trigger target. Everything else is untouched.
inline DatasetShard poison_shard(const DatasetShard& shard, const TriggerPattern& trigger,
                                 double pdr, std::optional<std::size_t> fragment,
                                 std::uint64_t seed) {
    if (pdr < 0.0 || pdr > 1.0) throw ConfigError("poison_shard: pdr must be in [0,1]");
    trigger.validate(shard.feature_dim());

    DatasetShard out = shard;
    std::size_t poison_count =
        static_cast<std::size_t>(std::llround(pdr * static_cast<double>(shard.size())));
    if (poison_count == 0) return out;

    std::vector<std::size_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, 0x706f69));  // "poi"
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::size_t> pixels =
        fragment.has_value() ? trigger.fragment_pixels(*fragment) : trigger.pixel_indices;
    for (std::size_t t = 0; t < poison_count; ++t) {
        auto& s = out.samples[order[t]];
        for (std::size_t idx : pixels) s.features[idx] = trigger.pixel_value;
        s.label = trigger.target_label;
    }
    return out;
}

// Backdoor evaluation set: drop samples whose true label already equals the
// trigger target, then stamp the full trigger on everything that remains.
inline DatasetShard make_backdoor_testset(const DatasetShard& clean_test,
                                          const TriggerPattern& trigger) {
    DatasetShard filtered;
    for (const auto& s : clean_test.samples)
        if (s.label != trigger.target_label) filtered.samples.push_back(s);
    return poison_shard(filtered, trigger, 1.0, std::nullopt, 0);
}

}  // namespace fedsieve
