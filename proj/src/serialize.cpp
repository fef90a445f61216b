#include "goat/serialize.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

namespace goat {

namespace {

std::vector<double> to_flat(const MatXd& m) {
  std::vector<double> out;
  out.reserve(m.size());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

VecXd to_vec(const nlohmann::json& arr) {
  VecXd v(static_cast<Index>(arr.size()));
  Index i = 0;
  for (const auto& x : arr) v(i++) = x.get<double>();
  return v;
}

std::string variant_name(PositionalVariant v) {
  switch (v) {
    case PositionalVariant::kGoat:
      return "goat";
    case PositionalVariant::kLearnedAbsPe:
      return "abs_pe";
    case PositionalVariant::kAlibiSlope:
      return "alibi";
  }
  throw std::invalid_argument("unknown variant");
}

PositionalVariant variant_from_name(const std::string& name) {
  if (name == "goat") return PositionalVariant::kGoat;
  if (name == "abs_pe") return PositionalVariant::kLearnedAbsPe;
  if (name == "alibi") return PositionalVariant::kAlibiSlope;
  throw std::invalid_argument("unknown variant: " + name);
}

}  // namespace

nlohmann::json prior_params_to_json(const SpectralPriorParams<double>& spectral,
                                    const SinkBiasParams<double>& sink) {
  nlohmann::json doc;
  doc["frequencies"] = std::vector<double>(spectral.frequencies.begin(),
                                           spectral.frequencies.end());
  doc["alpha"] = std::vector<double>(spectral.alpha.begin(), spectral.alpha.end());
  doc["beta"] = std::vector<double>(spectral.beta.begin(), spectral.beta.end());
  doc["slope"] = sink.slope;
  doc["mlp_w1"] = to_flat(sink.mlp_w1);
  doc["mlp_b1"] = std::vector<double>(sink.mlp_b1.begin(), sink.mlp_b1.end());
  doc["mlp_w2"] = std::vector<double>(sink.mlp_w2.begin(), sink.mlp_w2.end());
  doc["mlp_b2"] = sink.mlp_b2;
  doc["feature_count"] = sink.feature_count;
  doc["l_ref"] = sink.l_ref;
  return doc;
}

void prior_params_from_json(const nlohmann::json& doc, SpectralPriorParams<double>& spectral,
                            SinkBiasParams<double>& sink) {
  spectral.frequencies = to_vec(doc.at("frequencies"));
  spectral.alpha = to_vec(doc.at("alpha"));
  spectral.beta = to_vec(doc.at("beta"));
  validate(spectral);
  sink.slope = doc.at("slope").get<double>();
  sink.mlp_b1 = to_vec(doc.at("mlp_b1"));
  sink.mlp_w2 = to_vec(doc.at("mlp_w2"));
  sink.mlp_b2 = doc.at("mlp_b2").get<double>();
  sink.feature_count = doc.at("feature_count").get<Index>();
  sink.l_ref = doc.at("l_ref").get<Index>();
  const Index hidden = sink.mlp_b1.size();
  const Index in_dim = sink.feature_count + 1;
  const VecXd w1 = to_vec(doc.at("mlp_w1"));
  if (w1.size() != hidden * in_dim) {
    throw std::invalid_argument("prior_params_from_json: mlp_w1 size mismatch");
  }
  sink.mlp_w1.resize(hidden, in_dim);
  for (Index i = 0; i < hidden; ++i) {
    for (Index j = 0; j < in_dim; ++j) sink.mlp_w1(i, j) = w1(i * in_dim + j);
  }
  validate(sink);
}

nlohmann::json checkpoint_to_json(const ToyModel<float>& model) {
  const ToyModelConfig& cfg = model.config();
  nlohmann::json doc;
  doc["format"] = "goat-toy-checkpoint-v1";
  nlohmann::json c;
  c["layers"] = cfg.layers;
  c["heads"] = cfg.heads;
  c["d_model"] = cfg.d_model;
  c["head_dim"] = cfg.head_dim;
  c["modes"] = cfg.modes;
  c["vocab_size"] = cfg.vocab_size;
  c["seq_len"] = cfg.seq_len;
  c["sink_hidden"] = cfg.sink_hidden;
  c["sink_features"] = cfg.sink_features;
  c["variant"] = variant_name(cfg.variant);
  c["init_seed"] = cfg.init_seed;
  c["opt"] = {{"learning_rate", cfg.opt.learning_rate}, {"beta1", cfg.opt.beta1},
              {"beta2", cfg.opt.beta2},                 {"eps", cfg.opt.eps},
              {"weight_decay", cfg.opt.weight_decay},   {"clip_norm", cfg.opt.clip_norm},
              {"batch_size", cfg.opt.batch_size}};
  doc["config"] = c;
  nlohmann::json params;
  for (const ParamInfo& info : model.param_infos()) {
    std::vector<double> flat(static_cast<std::size_t>(info.size()));
    for (Index i = 0; i < info.size(); ++i) {
      flat[static_cast<std::size_t>(i)] =
          static_cast<double>(model.params()(info.offset + i));
    }
    params[info.name] = flat;
  }
  doc["params"] = params;
  return doc;
}

ToyModel<float> checkpoint_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "goat-toy-checkpoint-v1") {
    throw std::invalid_argument("checkpoint: unknown format");
  }
  const nlohmann::json& c = doc.at("config");
  ToyModelConfig cfg;
  cfg.layers = c.at("layers").get<Index>();
  cfg.heads = c.at("heads").get<Index>();
  cfg.d_model = c.at("d_model").get<Index>();
  cfg.head_dim = c.at("head_dim").get<Index>();
  cfg.modes = c.at("modes").get<Index>();
  cfg.vocab_size = c.at("vocab_size").get<Index>();
  cfg.seq_len = c.at("seq_len").get<Index>();
  cfg.sink_hidden = c.at("sink_hidden").get<Index>();
  cfg.sink_features = c.at("sink_features").get<Index>();
  cfg.variant = variant_from_name(c.at("variant").get<std::string>());
  cfg.init_seed = c.at("init_seed").get<std::uint64_t>();
  const nlohmann::json& o = c.at("opt");
  cfg.opt.learning_rate = o.at("learning_rate").get<double>();
  cfg.opt.beta1 = o.at("beta1").get<double>();
  cfg.opt.beta2 = o.at("beta2").get<double>();
  cfg.opt.eps = o.at("eps").get<double>();
  cfg.opt.weight_decay = o.at("weight_decay").get<double>();
  cfg.opt.clip_norm = o.at("clip_norm").get<double>();
  cfg.opt.batch_size = o.at("batch_size").get<Index>();

  ToyModel<float> model(cfg);
  const nlohmann::json& params = doc.at("params");
  for (const ParamInfo& info : model.param_infos()) {
    const auto it = params.find(info.name);
    if (it == params.end()) {
      throw std::invalid_argument("checkpoint: missing parameter " + info.name);
    }
    if (static_cast<Index>(it->size()) != info.size()) {
      throw std::invalid_argument("checkpoint: size mismatch for " + info.name);
    }
    for (Index i = 0; i < info.size(); ++i) {
      model.params()(info.offset + i) =
          static_cast<float>((*it)[static_cast<std::size_t>(i)].get<double>());
    }
  }
  return model;
}

void save_checkpoint(const ToyModel<float>& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << checkpoint_to_json(model).dump(1) << "\n";
}

ToyModel<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json doc;
  in >> doc;
  return checkpoint_from_json(doc);
}

}  // namespace goat
