#include "stepcast/config.hpp"

#include "stepcast/errors.hpp"

#include <fstream>

namespace stepcast {

using nlohmann::json;

std::string_view model_kind_name(ModelKind k) {
  return k == ModelKind::Gepsan ? "gepsan" : "baseline";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "gepsan") {
    return ModelKind::Gepsan;
  }
  if (s == "baseline") {
    return ModelKind::Baseline;
  }
  throw UsageError("model.kind must be gepsan|baseline, got '" + std::string(s) + "'");
}

std::string_view averaging_name(Averaging a) {
  switch (a) {
    case Averaging::Micro:
      return "micro";
    case Averaging::Macro:
      return "macro";
    case Averaging::Both:
      return "both";
  }
  return "both";
}

Averaging parse_averaging(std::string_view s) {
  if (s == "micro") {
    return Averaging::Micro;
  }
  if (s == "macro") {
    return Averaging::Macro;
  }
  if (s == "both") {
    return Averaging::Both;
  }
  throw UsageError("metrics.averaging must be micro|macro|both");
}

namespace {

void reject_unknown(const json& user, const json& base, const std::string& path) {
  for (const auto& [k, v] : user.items()) {
    const std::string key = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) {
      throw UsageError("unknown config key '" + key + "'");
    }
    if (v.is_object() && base.at(k).is_object()) {
      reject_unknown(v, base.at(k), key);
    }
  }
}

}  // namespace

ExperimentConfig desk_preset() {
  ExperimentConfig c;
  c.preset = "desk";
  c.dims = ModelDims{};
  c.loss.alpha = 3.0;
  c.loss.beta_max = 0.5;
  c.loss.beta_anneal_steps = 0;
  c.loss.gamma = 1.0;
  c.optim.lr = 2e-3;
  c.optim.finetune_lr = 1e-4;
  c.train.batch_size = 50;
  c.train.epochs = 5;
  return c;
}

ExperimentConfig full_preset() {
  ExperimentConfig c;
  c.preset = "full";
  c.dims.d_f = 512;
  c.dims.d_z = 1024;
  c.dims.ctx_layers = 6;
  c.dims.ctx_heads = 8;
  c.dims.ctx_ff = 2048;
  c.dims.proj_hidden = 512;
  c.dims.mlp_hidden = 2048;
  c.dims.dec_layers = 3;
  c.dims.dec_hidden = 512;
  c.dims.dec_embed = 256;
  c.loss.alpha = 3.0;
  c.loss.beta_max = 0.2;
  c.loss.beta_anneal_steps = 100000;
  c.loss.gamma = 1.0;
  c.optim.lr = 1e-4;
  c.optim.weight_decay = 0.01;
  c.optim.warmup_epochs = 1.0;
  c.train.batch_size = 50;
  return c;
}

void ExperimentConfig::validate() const {
  const ModelDims& d = dims;
  if (d.d_f < 1 || d.d_z < 1 || d.ctx_layers < 1 || d.ctx_heads < 1 || d.ctx_ff < 1 ||
      d.proj_blocks < 0 || d.proj_hidden < 1 || d.mlp_hidden < 1 || d.dec_layers < 1 ||
      d.dec_hidden < 1 || d.dec_embed < 1) {
    throw UsageError("model dimensions must be positive");
  }
  if (d.d_f % d.ctx_heads != 0) {
    throw UsageError("model.d_f must be divisible by model.ctx_heads");
  }
  if (d.dropout < 0.0 || d.dropout >= 1.0) {
    throw UsageError("model.dropout must lie in [0, 1)");
  }
  if (!(d.logvar_clamp > 0.0)) {
    throw UsageError("model.logvar_clamp must be positive");
  }
  if (loss.alpha < 0.0 || loss.beta_max < 0.0 || loss.gamma < 0.0 || loss.beta_anneal_steps < 0) {
    throw UsageError("loss weights must be non-negative");
  }
  if (!(optim.lr >= 0.0) || !(optim.finetune_lr >= 0.0) || optim.weight_decay < 0.0 || optim.warmup_epochs < 0.0 ||
      !(optim.clip_norm > 0.0)) {
    throw UsageError("invalid optimizer settings");
  }
  if (train.batch_size < 1 || train.epochs < 0 || train.val_fraction < 0.0 ||
      train.val_fraction >= 1.0) {
    throw UsageError("invalid training settings");
  }
  if (!(decode.nucleus_p > 0.0) || decode.nucleus_p > 1.0 || decode.max_len < 0) {
    throw UsageError("decode.nucleus_p must lie in (0, 1] and decode.max_len >= 0");
  }
  if (eval.k < 1) {
    throw UsageError("eval.k must be >= 1");
  }
  if (data.n_text < 1 || data.n_video < 1 || data.n_eval < 1) {
    throw UsageError("data.n_text, data.n_video and data.n_eval must be >= 1");
  }
  if (video_noise_sigma < 0.0) {
    throw UsageError("encoder.video_noise_sigma must be non-negative");
  }
}

json ExperimentConfig::to_json() const {
  const ModelDims& d = dims;
  return {
      {"preset", preset},
      {"model",
       {{"kind", model_kind_name(kind)},
        {"init_seed", init_seed},
        {"d_f", d.d_f},
        {"d_z", d.d_z},
        {"ctx_layers", d.ctx_layers},
        {"ctx_heads", d.ctx_heads},
        {"ctx_ff", d.ctx_ff},
        {"proj_blocks", d.proj_blocks},
        {"proj_hidden", d.proj_hidden},
        {"mlp_hidden", d.mlp_hidden},
        {"dec_layers", d.dec_layers},
        {"dec_hidden", d.dec_hidden},
        {"dec_embed", d.dec_embed},
        {"dropout", d.dropout},
        {"logvar_clamp", d.logvar_clamp}}},
      {"encoder", {{"seed", encoder_seed}, {"video_noise_sigma", video_noise_sigma}}},
      {"loss",
       {{"alpha", loss.alpha},
        {"beta_max", loss.beta_max},
        {"beta_anneal_steps", loss.beta_anneal_steps},
        {"gamma", loss.gamma},
        {"toggles",
         {{"l_pred", loss.toggles.l_pred},
          {"l_aux", loss.toggles.l_aux},
          {"l_rec", loss.toggles.l_rec}}}}},
      {"optim",
       {{"lr", optim.lr},
        {"finetune_lr", optim.finetune_lr},
        {"weight_decay", optim.weight_decay},
        {"warmup_epochs", optim.warmup_epochs},
        {"clip_norm", optim.clip_norm},
        {"beta1", optim.beta1},
        {"beta2", optim.beta2},
        {"eps", optim.eps}}},
      {"train",
       {{"batch_size", train.batch_size},
        {"epochs", train.epochs},
        {"seed", train.seed},
        {"val_fraction", train.val_fraction},
        {"log_every", train.log_every},
        {"log_path", train.log_path}}},
      {"decode", {{"nucleus_p", decode.nucleus_p}, {"max_len", decode.max_len}}},
      {"eval", {{"k", eval.k}, {"seed", eval.seed}, {"max_contexts", eval.max_contexts}}},
      {"metrics", {{"averaging", averaging_name(averaging)}}},
      {"data",
       {{"grammar", data.grammar},
        {"train_corpus", data.train_corpus},
        {"video_corpus", data.video_corpus},
        {"eval_corpus", data.eval_corpus},
        {"unseen_types", data.unseen_types},
        {"corpus_seed", data.corpus_seed},
        {"n_text", data.n_text},
        {"n_video", data.n_video},
        {"n_eval", data.n_eval}}},
      {"output_dir", output_dir},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) {
    throw UsageError("config must be a JSON object");
  }
  const std::string preset_name = j.value("preset", std::string("desk"));
  ExperimentConfig base;
  if (preset_name == "desk") {
    base = desk_preset();
  } else if (preset_name == "full") {
    base = full_preset();
  } else {
    throw UsageError("unknown preset '" + preset_name + "' (expected desk|full)");
  }
  json merged = base.to_json();
  reject_unknown(j, merged, "");
  merged.merge_patch(j);
  try {
    ExperimentConfig c;
    c.preset = merged.at("preset").get<std::string>();
    const json& m = merged.at("model");
    c.kind = parse_model_kind(m.at("kind").get<std::string>());
    c.init_seed = m.at("init_seed").get<std::uint64_t>();
    c.dims.d_f = m.at("d_f").get<int>();
    c.dims.d_z = m.at("d_z").get<int>();
    c.dims.ctx_layers = m.at("ctx_layers").get<int>();
    c.dims.ctx_heads = m.at("ctx_heads").get<int>();
    c.dims.ctx_ff = m.at("ctx_ff").get<int>();
    c.dims.proj_blocks = m.at("proj_blocks").get<int>();
    c.dims.proj_hidden = m.at("proj_hidden").get<int>();
    c.dims.mlp_hidden = m.at("mlp_hidden").get<int>();
    c.dims.dec_layers = m.at("dec_layers").get<int>();
    c.dims.dec_hidden = m.at("dec_hidden").get<int>();
    c.dims.dec_embed = m.at("dec_embed").get<int>();
    c.dims.dropout = m.at("dropout").get<double>();
    c.dims.logvar_clamp = m.at("logvar_clamp").get<double>();
    const json& e = merged.at("encoder");
    c.encoder_seed = e.at("seed").get<std::uint64_t>();
    c.video_noise_sigma = e.at("video_noise_sigma").get<double>();
    const json& l = merged.at("loss");
    c.loss.alpha = l.at("alpha").get<double>();
    c.loss.beta_max = l.at("beta_max").get<double>();
    c.loss.beta_anneal_steps = l.at("beta_anneal_steps").get<long>();
    c.loss.gamma = l.at("gamma").get<double>();
    c.loss.toggles.l_pred = l.at("toggles").at("l_pred").get<bool>();
    c.loss.toggles.l_aux = l.at("toggles").at("l_aux").get<bool>();
    c.loss.toggles.l_rec = l.at("toggles").at("l_rec").get<bool>();
    const json& o = merged.at("optim");
    c.optim.lr = o.at("lr").get<double>();
    c.optim.finetune_lr = o.at("finetune_lr").get<double>();
    c.optim.weight_decay = o.at("weight_decay").get<double>();
    c.optim.warmup_epochs = o.at("warmup_epochs").get<double>();
    c.optim.clip_norm = o.at("clip_norm").get<double>();
    c.optim.beta1 = o.at("beta1").get<double>();
    c.optim.beta2 = o.at("beta2").get<double>();
    c.optim.eps = o.at("eps").get<double>();
    const json& t = merged.at("train");
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.epochs = t.at("epochs").get<int>();
    c.train.seed = t.at("seed").get<std::uint64_t>();
    c.train.val_fraction = t.at("val_fraction").get<double>();
    c.train.log_every = t.at("log_every").get<int>();
    c.train.log_path = t.at("log_path").get<std::string>();
    c.decode.nucleus_p = merged.at("decode").at("nucleus_p").get<double>();
    c.decode.max_len = merged.at("decode").at("max_len").get<int>();
    c.eval.k = merged.at("eval").at("k").get<int>();
    c.eval.seed = merged.at("eval").at("seed").get<std::uint64_t>();
    c.eval.max_contexts = merged.at("eval").at("max_contexts").get<int>();
    c.averaging = parse_averaging(merged.at("metrics").at("averaging").get<std::string>());
    const json& d = merged.at("data");
    c.data.grammar = d.at("grammar").get<std::string>();
    c.data.train_corpus = d.at("train_corpus").get<std::string>();
    c.data.video_corpus = d.at("video_corpus").get<std::string>();
    c.data.eval_corpus = d.at("eval_corpus").get<std::string>();
    c.data.unseen_types = d.at("unseen_types").get<std::vector<std::string>>();
    c.data.corpus_seed = d.at("corpus_seed").get<std::uint64_t>();
    c.data.n_text = d.at("n_text").get<int>();
    c.data.n_video = d.at("n_video").get<int>();
    c.data.n_eval = d.at("n_eval").get<int>();
    c.output_dir = merged.at("output_dir").get<std::string>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw UsageError("cannot open config file " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json patch = json::object();
  json* cur = &patch;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (dot == std::string::npos) {
      (*cur)[part] = value;
      break;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
  json full = to_json();
  reject_unknown(patch, full, "");
  full.merge_patch(patch);
  *this = from_json(full);
}

}  // namespace stepcast
