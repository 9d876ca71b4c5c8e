#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hspi/bi.hpp"
#include "hspi/ld.hpp"

namespace hspi {

// Model recipe: a saved model file, or a seeded architecture optionally
// trained on a seeded synthetic dataset. Everything is pinned by explicit
// seeds so reruns are byte-identical.
struct ModelSpec {
    std::string path;  // when nonempty the file wins over the recipe
    std::string arch = "cnn";  // "cnn" | "mlp"
    int64_t classes = 10;
    int64_t in_dim = 3072;        // mlp only
    std::vector<int64_t> hidden;  // mlp only
    uint64_t seed = 1;

    bool trained = false;  // set by a train-on line
    std::string data_kind = "textures";  // "textures" | "blobs"
    int64_t per_class = 40;
    uint64_t data_seed = 1;
    int epochs = 8;
    double lr = 0.02;
    uint64_t train_seed = 1;
};

// One reproducible study. `attack` picks the fingerprinting family and
// `study` the orchestration: ld supports whitebox / defense / transfer,
// bi supports whitebox (pairwise campaigns) / batch-group.
struct ExperimentSpec {
    std::string name;
    std::string attack;             // "bi" | "ld"
    std::string study = "whitebox";
    ModelSpec model;
    ModelSpec transfer_model;       // transfer study's held-out model
    std::string registry_path;      // empty = bundled default registry
    std::vector<std::string> profiles;  // subset; empty = whole registry
    std::string out_dir;

    // ld studies
    uint64_t probe_seed = 7;
    int64_t probe_count = 100;
    int64_t set_size = 10;
    SvmConfig svm;
    std::string defense = "logit-bitflip:p=0.05";  // defense study arm
    uint64_t oracle_seed = 1;  // base seed for defended oracle connections

    // bi studies
    PgdConfig pgd;
    int trials = 10;                // seeded campaign attempts per pair
    std::string reference = "fp32";
    int oracle_batch_group = 8;     // batch-group study's mismatched oracle
};

ExperimentSpec experiment_parse(const std::string& text);
ExperimentSpec experiment_load(const std::string& path);

struct ExperimentResult {
    std::string csv_path;
    std::string summary_path;
    std::string csv;      // exact file contents, for determinism checks
    std::string summary;
};

// Validates the spec (unknown profile ids and bad combinations fail before
// any computation), runs the study, and writes results.csv plus summary.md
// under spec.out_dir. Every artifact embeds the registry hash and all seeds.
// Failures carry a stage tag, e.g. "stage collect: ...".
ExperimentResult run_experiment(const ExperimentSpec& spec);

}  // namespace hspi
