// Command-line front end. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include "stepcast/checkpoint.hpp"
#include "stepcast/desk_grammar.hpp"
#include "stepcast/errors.hpp"
#include "stepcast/harness.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <map>

using namespace stepcast;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON); desk preset when omitted");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set optim.lr=0.001");
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? desk_preset() : ExperimentConfig::load(c.config);
  for (const auto& o : c.overrides) {
    cfg.apply_override(o);
  }
  cfg.validate();
  return cfg;
}

Grammar grammar_from(const std::string& spec) {
  return spec.empty() || spec == "builtin" ? desk_grammar() : Grammar::load(spec);
}

std::filesystem::path default_path(const ExperimentConfig& cfg, const std::string& out,
                                   const std::string& name) {
  return out.empty() ? std::filesystem::path(cfg.output_dir) / name : std::filesystem::path(out);
}

void save_last_good(const Checkpoint& c, const ExperimentConfig& cfg) {
  const auto path = std::filesystem::path(cfg.output_dir) / "last_good.ckpt.json";
  save_checkpoint(path, c);
  spdlog::error("numerical failure; last good state saved to {}", path.string());
}

int cmd_gen_corpus(const std::string& grammar, int n, std::uint64_t seed, const std::string& out,
                   const std::vector<std::string>& types, bool exclude,
                   const std::string& grammar_out) {
  Grammar g = grammar_from(grammar);
  if (!types.empty()) {
    g = g.restrict_to(types, exclude);
  }
  write_corpus(out, generate_corpus(g, n, seed));
  if (!grammar_out.empty()) {
    grammar_from(grammar).save(grammar_out);
  }
  spdlog::info("wrote {} procedures to {}", n, out);
  return 0;
}

int cmd_pretrain(const ExperimentConfig& cfg, const std::string& out, const std::string& resume,
                 long max_steps) {
  const ExperimentData data = prepare_data(cfg);
  Checkpoint ckpt = resume.empty() ? fresh_checkpoint(cfg, data.grammar) : load_checkpoint(resume);
  if (!resume.empty() && ckpt.progress.stage != "pretrain" && ckpt.progress.stage != "init") {
    throw UsageError("can only resume a pretraining checkpoint");
  }
  std::vector<Procedure> train, val;
  split_validation(data.text, ckpt.config.train.val_fraction, ckpt.config.train.seed, train, val);
  const Dataset tr = make_dataset(*ckpt.model, data.grammar, train, Modality::Text, 0.0, 0);
  const Dataset va = make_dataset(*ckpt.model, data.grammar, val, Modality::Text, 0.0, 0);
  Trainer t(ckpt, tr, &va, plan_stage(ckpt.config, tr.encoded.size(), "pretrain"));
  try {
    t.run(max_steps);
  } catch (const NumericalError&) {
    save_last_good(ckpt, cfg);
    throw;
  }
  const auto path = default_path(cfg, out, "pretrain.ckpt.json");
  save_checkpoint(path, ckpt);
  spdlog::info("checkpoint written to {}", path.string());
  return 0;
}

int cmd_finetune(const ExperimentConfig& cfg, const std::string& in, const std::string& out,
                 bool has_config) {
  Checkpoint ckpt = load_checkpoint(in);
  if (has_config) {
    if (cfg.encoder_seed != ckpt.config.encoder_seed) {
      throw DataError("encoder seed differs from the checkpoint's frozen encoder");
    }
    ckpt.config.optim = cfg.optim;
    ckpt.config.train = cfg.train;
    ckpt.config.loss = cfg.loss;
    ckpt.config.data = cfg.data;
    ckpt.config.video_noise_sigma = cfg.video_noise_sigma;
  }
  const ExperimentConfig& c = ckpt.config;
  const ExperimentData data = prepare_data(c);
  std::vector<Procedure> train, val;
  split_validation(data.video, c.train.val_fraction, c.train.seed, train, val);
  const std::uint64_t noise = derive_seed(c.data.corpus_seed, {0x7674});
  const Dataset tr =
      make_dataset(*ckpt.model, data.grammar, train, Modality::Video, c.video_noise_sigma, noise);
  const Dataset va = make_dataset(*ckpt.model, data.grammar, val, Modality::Video,
                                  c.video_noise_sigma, derive_seed(noise, {1}));
  try {
    train_stage(ckpt, tr, &va, "finetune");
  } catch (const NumericalError&) {
    save_last_good(ckpt, c);
    throw;
  }
  const auto path = default_path(c, out, "finetune.ckpt.json");
  save_checkpoint(path, ckpt);
  spdlog::info("checkpoint written to {}", path.string());
  return 0;
}

int cmd_transfer_eval(const ExperimentConfig& cfg, const std::string& in, const std::string& split,
                      double sigma, const std::string& out) {
  Checkpoint ckpt = load_checkpoint(in);
  ExperimentConfig data_cfg = ckpt.config;
  data_cfg.data = cfg.data;
  const ExperimentData data = prepare_data(data_cfg);
  const std::vector<Procedure>& procs = split == "unseen" ? data.eval_unseen : data.eval_seen;
  const double s = sigma >= 0.0 ? sigma : cfg.video_noise_sigma;
  const EvalOutcome res = transfer_eval(ckpt, cfg, procs, s);
  const json doc = report_document(res, std::string(model_kind_name(ckpt.model->kind)),
                                   ckpt.progress.stage == "finetune" ? "finetuned" : "zero-shot",
                                   split, Modality::Video, s);
  const auto path = default_path(cfg, out, "transfer_" + split + ".metrics.json");
  write_json(path, doc);
  std::cout << render_table({doc});
  return 0;
}

int cmd_predict(const std::string& in, const std::string& contexts, const std::string& mode,
                int k, bool all_prefixes, std::uint64_t seed, const std::string& out) {
  if (k < 1) {
    throw UsageError("--k must be >= 1");
  }
  Checkpoint ckpt = load_checkpoint(in);
  Model& model = *ckpt.model;
  const std::vector<Procedure> procs = read_corpus(contexts, ckpt.grammar.vocab, 0);
  const Dataset ds = make_dataset(model, ckpt.grammar, procs, Modality::Text, 0.0, 0);
  PredictRequest req;
  req.mode = parse_predict_mode(mode);
  req.k = k;
  req.nucleus_p = ckpt.config.decode.nucleus_p;
  req.max_len = model.decode_cap(ckpt.config.decode.max_len);
  req.seed = seed;

  std::ofstream os(out);
  if (!os) {
    throw DataError("cannot write " + out);
  }
  for (std::size_t i = 0; i < procs.size(); ++i) {
    const auto T = static_cast<int>(procs[i].steps.size());
    if (T > model.max_T) {
      throw DataError("context " + std::to_string(i) + " has " + std::to_string(T) +
                      " steps, more than max_T = " + std::to_string(model.max_T));
    }
    // Every prefix that has a next step, or only the full procedure.
    const int first = all_prefixes ? 0 : T;
    const int last = all_prefixes ? T - 1 : T;
    const Matrix R = context_vectors(model, ds.encoded[i], T);
    std::vector<std::uint64_t> keys;
    Matrix rows(last - first + 1, model.dims.d_f);
    for (int t = first; t <= last; ++t) {
      rows.row(t - first) = R.row(t);
      keys.push_back(context_key(i, static_cast<std::size_t>(t)));
    }
    const auto cands = predict_next(model, rows, keys, req);
    for (int t = first; t <= last; ++t) {
      const auto& list = cands[static_cast<std::size_t>(t - first)];
      for (std::size_t c = 0; c < list.size(); ++c) {
        const Step s = list[c].sentence.to_step(ckpt.grammar.vocab);
        std::vector<std::string> toks;
        for (const auto& tok : s.tokens) {
          toks.push_back(tok.surface);
        }
        json line = {{"context_id", context_id(i, static_cast<std::size_t>(t))},
                     {"candidate", c},
                     {"tokens", toks},
                     {"logprob", list[c].sentence.logprob},
                     {"terminated", list[c].sentence.terminated},
                     {"source", std::string(decode_source_name(list[c].sentence.source))},
                     {"latent_seed", list[c].sample_seed}};
        os << line.dump() << '\n';
      }
    }
  }
  return 0;
}

int cmd_eval(const std::string& predictions, const std::string& corpus, const std::string& grammar,
             const std::string& averaging, const std::string& label, const std::string& out) {
  const Grammar g = grammar_from(grammar);
  const std::vector<Procedure> procs = read_corpus(corpus, g.vocab);
  std::ifstream in(predictions);
  if (!in) {
    throw DataError("cannot open " + predictions);
  }
  std::vector<EvalPair> pairs;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const std::string where = predictions + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    std::string id;
    Step cand;
    try {
      id = j.at("context_id").get<std::string>();
      for (const auto& t : j.at("tokens")) {
        cand.tokens.push_back(g.vocab.make_token(t.get<std::string>()));
      }
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    auto it = index.find(id);
    if (it == index.end()) {
      const auto colon = id.find(':');
      std::size_t proc = 0, t = 0;
      try {
        proc = std::stoul(id.substr(0, colon));
        t = std::stoul(id.substr(colon + 1));
      } catch (const std::exception&) {
        throw DataError(where + ": malformed context_id '" + id + "'");
      }
      if (colon == std::string::npos || proc >= procs.size() || t >= procs[proc].steps.size()) {
        throw DataError(where + ": context '" + id + "' has no ground truth in " + corpus);
      }
      it = index.emplace(id, pairs.size()).first;
      pairs.push_back({id, procs[proc].steps[t], {}});
    }
    pairs[it->second].candidates.push_back(std::move(cand));
  }
  std::size_t max_k = 0;
  for (const auto& p : pairs) {
    max_k = std::max(max_k, p.candidates.size());
  }
  const MetricsReport r =
      evaluate_pairs(pairs, max_k <= 1 ? "S" : "M", 0, parse_averaging(averaging));
  const json doc = {{"model", label},     {"setting", "predictions"}, {"split", corpus},
                    {"modality", "text"}, {"sigma", 0.0},             {"rows", json::array({r.to_json()})},
                    {"best_of_k", json::array()}};
  if (!out.empty()) {
    write_json(out, doc);
  }
  std::cout << render_table({doc});
  return 0;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out) {
  std::vector<json> docs;
  for (const auto& f : files) {
    docs.push_back(read_json(f));
  }
  const std::string table = render_table(docs);
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream os(out);
    os << table;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("stepcast"));
  CLI::App app{"Generative next-step anticipation for procedural sequences"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  // gen-corpus
  std::string g_grammar = "builtin", g_out, g_grammar_out;
  int g_n = 1000;
  std::uint64_t g_seed = 0;
  std::vector<std::string> g_types;
  bool g_exclude = false;
  auto* gen = app.add_subcommand("gen-corpus", "Sample a corpus from a grammar");
  gen->add_option("--grammar", g_grammar, "Grammar file or 'builtin'");
  gen->add_option("--n", g_n, "Number of procedures")->check(CLI::PositiveNumber);
  gen->add_option("--seed", g_seed, "Random seed");
  gen->add_option("--out", g_out, "Output JSONL file")->required();
  gen->add_option("--types", g_types, "Keep only these recipe types");
  gen->add_flag("--exclude-types", g_exclude, "Drop --types instead of keeping them");
  gen->add_option("--write-grammar", g_grammar_out, "Also write the grammar document here");

  // pretrain
  Common pre_c;
  std::string pre_out, pre_resume;
  long pre_max = -1;
  auto* pre = app.add_subcommand("pretrain", "Train on the text corpus");
  add_common(pre, pre_c);
  pre->add_option("--out", pre_out, "Checkpoint path");
  pre->add_option("--resume", pre_resume, "Continue from this checkpoint");
  pre->add_option("--max-steps", pre_max, "Stop after this many steps");

  // finetune
  Common fin_c;
  std::string fin_in, fin_out;
  auto* fin = app.add_subcommand("finetune", "Continue training on the video corpus");
  add_common(fin, fin_c);
  fin->add_option("--checkpoint", fin_in, "Pretrained checkpoint")->required();
  fin->add_option("--out", fin_out, "Checkpoint path");

  // transfer-eval
  Common te_c;
  std::string te_in, te_split = "seen", te_out;
  double te_sigma = -1.0;
  auto* te = app.add_subcommand("transfer-eval", "Evaluate on video features without updates");
  add_common(te, te_c);
  te->add_option("--checkpoint", te_in, "Checkpoint")->required();
  te->add_option("--split", te_split, "seen|unseen")->check(CLI::IsMember({"seen", "unseen"}));
  te->add_option("--sigma", te_sigma, "Video noise (default: encoder.video_noise_sigma)");
  te->add_option("--out", te_out, "Report path");

  // predict
  std::string pr_in, pr_ctx, pr_mode = "single", pr_out;
  int pr_k = 5;
  bool pr_all = false;
  std::uint64_t pr_seed = 7;
  auto* pr = app.add_subcommand("predict", "Predict next steps for context procedures");
  pr->add_option("--checkpoint", pr_in, "Checkpoint")->required();
  pr->add_option("--contexts", pr_ctx, "JSONL file of observed procedures")->required();
  pr->add_option("--mode", pr_mode, "single|multi");
  pr->add_option("--k", pr_k, "Candidates per context in multi mode");
  pr->add_flag("--all-prefixes", pr_all, "Predict after every proper prefix (contexts with a known next step)");
  pr->add_option("--seed", pr_seed, "Sampling seed");
  pr->add_option("--out", pr_out, "Prediction JSONL file")->required();

  // eval
  std::string ev_pred, ev_corpus, ev_grammar = "builtin", ev_avg = "both", ev_label = "model",
                                   ev_out;
  auto* ev = app.add_subcommand("eval", "Score a prediction file against a corpus");
  ev->add_option("--predictions", ev_pred, "Prediction JSONL file")->required();
  ev->add_option("--corpus", ev_corpus, "Corpus holding the ground truth")->required();
  ev->add_option("--grammar", ev_grammar, "Grammar file or 'builtin'");
  ev->add_option("--averaging", ev_avg, "micro|macro|both");
  ev->add_option("--label", ev_label, "Model label in the report");
  ev->add_option("--out", ev_out, "Report path");

  // report
  std::vector<std::string> rp_files;
  std::string rp_out;
  auto* rp = app.add_subcommand("report", "Render metrics reports as one table");
  rp->add_option("files", rp_files, "Report files")->required();
  rp->add_option("--out", rp_out, "CSV output (stdout when omitted)");

  // ablate
  Common ab_c;
  auto* ab = app.add_subcommand("ablate", "Run the full experiment matrix");
  add_common(ab, ab_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (*gen) {
      return cmd_gen_corpus(g_grammar, g_n, g_seed, g_out, g_types, g_exclude, g_grammar_out);
    }
    if (*pre) {
      return cmd_pretrain(resolve_config(pre_c), pre_out, pre_resume, pre_max);
    }
    if (*fin) {
      const bool has = !fin_c.config.empty() || !fin_c.overrides.empty();
      return cmd_finetune(resolve_config(fin_c), fin_in, fin_out, has);
    }
    if (*te) {
      return cmd_transfer_eval(resolve_config(te_c), te_in, te_split, te_sigma, te_out);
    }
    if (*pr) {
      return cmd_predict(pr_in, pr_ctx, pr_mode, pr_k, pr_all, pr_seed, pr_out);
    }
    if (*ev) {
      return cmd_eval(ev_pred, ev_corpus, ev_grammar, ev_avg, ev_label, ev_out);
    }
    if (*rp) {
      return cmd_report(rp_files, rp_out);
    }
    if (*ab) {
      const json summary = run_ablation(resolve_config(ab_c));
      std::cout << summary.dump(2) << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
