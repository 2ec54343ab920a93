#pragma once

#include <jof/losses.hpp>
#include <jof/scenes.hpp>

#include <map>
#include <string>

namespace jof {

// Plain-text run configuration: one `key = value` per line, `#` comments,
// later duplicates win. CLI flags are merged on top of the file.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::string& path);
KeyValues merge_key_values(KeyValues base, const KeyValues& overrides);

// strict scalar parsing: the whole token must be consumed
int parse_int(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);

struct TrainConfig {
    // model
    int branches = 8;
    int l_C = 8, l_S = 32, l_A = 32;
    int trunk_width = 64, trunk_depth = 4;
    int voxel_hidden = 128, head_hidden = 64;
    int categories = 3;

    // data geometry
    int width = 64, height = 64;
    double focal = 64.0;
    int voxel_res = 16;
    int points_per_shape = 128; // occupancy/albedo samples per shape per step
    int boundary_count = 24;    // part-boundary points per view
    double boundary_probe = 0.02;
    double search_epsilon = 2.4 / 64.0;
    int search_binary_iters = 10;

    // schedule
    int batch_size = 8;
    int steps1 = 20000, steps2 = 10000, steps3 = 10000;
    int fit_iters = 300;
    double lr_step1 = 1e-3, lr_step2 = 1e-3, lr_step3 = 2e-4;
    double lr_fit = 2e-2;
    int checkpoint_every = 500;
    std::uint64_t seed = 1;
    int threads = 1;

    LossWeights weights;

    // run-scoped paths; these travel in the run manifest, not in checkpoints
    std::string data_dir, real_dir, out_dir;

    void validate() const;
    SearchConfig search() const;

    // numeric fields only; from_store leaves the paths empty
    void to_store(TensorStore& store, const std::string& prefix) const;
    static TrainConfig from_store(const TensorStore& store, const std::string& prefix);
};

// Unknown keys are rejected except the `data.` section, which belongs to
// dataset generation.
TrainConfig train_config_from_kv(const KeyValues& kv);
std::string train_config_to_text(const TrainConfig& cfg);

// Reads the `data.` keys; everything else is ignored.
DatasetConfig dataset_config_from_kv(const KeyValues& kv);
std::string dataset_config_to_text(const DatasetConfig& cfg);

} // namespace jof
