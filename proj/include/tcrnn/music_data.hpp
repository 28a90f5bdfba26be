// SPDX-License-Identifier: Apache-2.0
//
// Polyphonic piano-roll sequences: loading, binarization and next-step
// batching.
//
// On-disk format (UTF-8 JSON):
//   {"name": "...",
//    "splits": {"train": [seq, ...], "valid": [...], "test": [...]}}
// where a sequence is a list of timesteps and a timestep is a list of note
// indices in [0, 88) (MIDI pitch minus 21).
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tcrnn/error.hpp"
#include "tcrnn/tensor_core.hpp"

namespace tcrnn::music {

inline constexpr Index kNumNotes = 88;

using Timestep = std::vector<int>;  // sorted, unique note indices
using Sequence = std::vector<Timestep>;
using Split = std::vector<Sequence>;

struct PianoRollDataset {
    std::string name;
    Split train, valid, test;

    const Split& split(std::string_view which) const {
        if (which == "train") return train;
        if (which == "valid") return valid;
        if (which == "test") return test;
        throw ConfigError("unknown split '" + std::string(which) + "' (expected train|valid|test)");
    }
};

inline std::vector<std::uint8_t> binarize(const Timestep& notes) {
    std::vector<std::uint8_t> v(kNumNotes, 0);
    for (int n : notes) v.at(static_cast<Index>(n)) = 1;
    return v;
}

inline PianoRollDataset parse_dataset(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("splits") || !doc["splits"].is_object())
        throw DataError("dataset: missing 'splits' object");
    PianoRollDataset ds;
    ds.name = doc.value("name", std::string("unnamed"));
    auto read_split = [&](const char* key, Split& out) {
        const auto& splits = doc["splits"];
        if (!splits.contains(key)) throw DataError(std::string("dataset: missing split '") + key + "'");
        const auto& seqs = splits[key];
        if (!seqs.is_array()) throw DataError(std::string("dataset: split '") + key + "' is not a list");
        out.reserve(seqs.size());
        for (Index s = 0; s < seqs.size(); ++s) {
            const auto& seq = seqs[s];
            if (!seq.is_array()) throw DataError("dataset: " + std::string(key) + "[" + std::to_string(s) + "] is not a list");
            Sequence sequence;
            sequence.reserve(seq.size());
            for (Index t = 0; t < seq.size(); ++t) {
                const auto where = std::string(key) + "[" + std::to_string(s) + "][" + std::to_string(t) + "]";
                if (!seq[t].is_array()) throw DataError("dataset: " + where + " is not a list of notes");
                Timestep step;
                for (const auto& note : seq[t]) {
                    if (!note.is_number_integer()) throw DataError("dataset: " + where + " holds a non-integer note");
                    const auto n = note.get<long long>();
                    if (n < 0 || n >= static_cast<long long>(kNumNotes))
                        throw DataError("dataset: note " + std::to_string(n) + " at " + where + " outside [0, 88)");
                    step.push_back(static_cast<int>(n));
                }
                std::sort(step.begin(), step.end());
                if (std::adjacent_find(step.begin(), step.end()) != step.end())
                    throw DataError("dataset: duplicate note at " + where);
                sequence.push_back(std::move(step));
            }
            out.push_back(std::move(sequence));
        }
    };
    read_split("train", ds.train);
    read_split("valid", ds.valid);
    read_split("test", ds.test);
    return ds;
}

inline PianoRollDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("dataset: cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("dataset: parse error in '" + path + "': " + e.what());
    }
    return parse_dataset(doc);
}

/// Padded next-step prediction batch. Row b, position t holds input frame t
/// and target frame t+1 of the row's sequence; positions past the row's
/// length are zero with mask 0.
struct Batch {
    Index size = 0;
    Index steps = 0;  // T_max, prediction positions
    std::vector<std::uint8_t> inputs;   // size x steps x 88
    std::vector<std::uint8_t> targets;  // size x steps x 88
    std::vector<std::uint8_t> mask;     // size x steps
    std::vector<Index> lengths;         // valid positions per row

    std::span<const std::uint8_t> input_row(Index b) const {
        return {inputs.data() + b * steps * kNumNotes, steps * kNumNotes};
    }
    std::span<const std::uint8_t> target_row(Index b) const {
        return {targets.data() + b * steps * kNumNotes, steps * kNumNotes};
    }
    Index valid_positions() const {
        Index n = 0;
        for (Index l : lengths) n += l;
        return n;
    }
};

/// Order in which to_batches visits the split (Fisher-Yates on mt19937_64).
inline std::vector<Index> shuffled_order(Index n, std::uint64_t seed) {
    std::vector<Index> order(n);
    for (Index i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (Index i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return order;
}

/// Sequences shorter than 2 frames have nothing to predict and are dropped.
inline std::vector<Batch> to_batches(const Split& split, Index batch_size, std::uint64_t seed, bool shuffle = true) {
    if (batch_size == 0) throw ConfigError("to_batches: batch_size must be >= 1");
    std::vector<Index> order;
    if (shuffle) {
        order = shuffled_order(split.size(), seed);
    } else {
        for (Index i = 0; i < split.size(); ++i) order.push_back(i);
    }
    std::erase_if(order, [&](Index i) { return split[i].size() < 2; });

    std::vector<Batch> batches;
    for (Index start = 0; start < order.size(); start += batch_size) {
        const Index end = std::min(order.size(), start + batch_size);
        Batch b;
        b.size = end - start;
        for (Index k = start; k < end; ++k) b.steps = std::max(b.steps, split[order[k]].size() - 1);
        b.inputs.assign(b.size * b.steps * kNumNotes, 0);
        b.targets.assign(b.size * b.steps * kNumNotes, 0);
        b.mask.assign(b.size * b.steps, 0);
        for (Index row = 0; row < b.size; ++row) {
            const Sequence& seq = split[order[start + row]];
            const Index len = seq.size() - 1;
            b.lengths.push_back(len);
            for (Index t = 0; t < len; ++t) {
                b.mask[row * b.steps + t] = 1;
                const Index base = (row * b.steps + t) * kNumNotes;
                for (int n : seq[t]) b.inputs[base + n] = 1;
                for (int n : seq[t + 1]) b.targets[base + n] = 1;
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace tcrnn::music
