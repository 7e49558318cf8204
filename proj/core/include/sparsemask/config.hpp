#pragma once

#include <string>
#include <vector>

#include "sparsemask/encoder_spec.hpp"
#include "sparsemask/fdn.hpp"
#include "sparsemask/tasks.hpp"

namespace sparsemask {

enum class Regularizer { sparse, l1 };

struct SearchParams {
    int epochs = 30;
    int batch = 8;
    double lr_encoder = 0.005;
    double lr_decoder = 0.05;
    double lr_gates = 25.0;  // gates get their own group, no weight decay
    double lambda = 0.01;
    double sigma = 0.001;
    long seed = 3;
    int retrain_epochs = 16;
};

struct Config {
    SyntheticTaskSpec task;
    EncoderSpec encoder;
    int decoder_channels = 32;
    SearchParams search;
    Regularizer regularizer = Regularizer::sparse;
    DecoderActivation decoder_activation = DecoderActivation::relu;
    bool pointwise_decoder = false;
    std::vector<double> alpha_override;
    std::string cache_dir;

    void validate() const;
    FdnOptions fdn_options() const;
};

// Desk-scale defaults: 4-stage encoder, 64x64 synthetic shapes, 30 search
// epochs. Omitted config fields resolve to these values.
Config default_config();

Config config_from_json(const std::string& text);
Config load_config(const std::string& path);
std::string config_to_json(const Config& cfg);

// FNV-1a hash of the resolved config; embedded in every output file.
std::string config_digest(const Config& cfg);

}  // namespace sparsemask
