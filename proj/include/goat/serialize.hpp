#pragma once

// JSON serialization: flat prior-parameter documents and toy-LM checkpoints
// (named flat parameter arrays plus a config echo).

#include <string>

#include <json.hpp>

#include "goat/prior.hpp"
#include "goat/toy_lm.hpp"

namespace goat {

// Flat document with fields: frequencies, alpha, beta, slope, mlp_w1,
// mlp_b1, mlp_w2, mlp_b2, feature_count, l_ref. mlp_w1 is row-major.
nlohmann::json prior_params_to_json(const SpectralPriorParams<double>& spectral,
                                    const SinkBiasParams<double>& sink);
void prior_params_from_json(const nlohmann::json& doc, SpectralPriorParams<double>& spectral,
                            SinkBiasParams<double>& sink);

nlohmann::json checkpoint_to_json(const ToyModel<float>& model);
ToyModel<float> checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const ToyModel<float>& model, const std::string& path);
ToyModel<float> load_checkpoint(const std::string& path);

}  // namespace goat
