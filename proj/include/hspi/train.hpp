#pragma once

#include <cstdint>

#include "hspi/dataset.hpp"
#include "hspi/model.hpp"

namespace hspi {

struct TrainConfig {
    int epochs = 10;
    double lr = 0.05;
    uint64_t seed = 1;
    int batch_size = 32;
    double momentum = 0.9;
    double lr_decay = 0.5;      // multiplier applied every lr_decay_every epochs
    int lr_decay_every = 3;
    bool verbose = false;
};

struct TrainResult {
    double final_loss = 0;
    double train_accuracy = 0;
};

// Seeded full-precision SGD. Trains in place; weights are snapped to FP32
// values at the end so saved and in-memory models match bit for bit.
// Throws on divergence (NaN loss), reporting the seed.
TrainResult train_reference(Model& model, const Dataset& data, const TrainConfig& cfg);

// Fraction of samples whose reference-forward argmax matches the label.
double evaluate_accuracy(const Model& model, const Dataset& data);

}  // namespace hspi
