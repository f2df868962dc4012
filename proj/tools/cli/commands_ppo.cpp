#include <ostream>

#include "context.hpp"
#include "vvlab/error.hpp"
#include "vvlab/io/hash.hpp"
#include "vvlab/io/kv_config.hpp"
#include "vvlab/ppo/evaluate.hpp"
#include "vvlab/ppo/trainer.hpp"

namespace vvlab::cli {

namespace {

struct PpoFlags {
  std::string ckpt, classifier, prompts, config, negset;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::vector<double> values = {0.0, 1e-5, 1e-4, 1e-3};
};

void add_ppo_inputs(CLI::App* a, PpoFlags& f) {
  a->add_option("--ckpt", f.ckpt, "Initial policy, also the KL reference")
      ->required()
      ->type_name("FILE");
  a->add_option("--classifier", f.classifier, "Frozen reward classifier")
      ->required()
      ->type_name("FILE");
  a->add_option("--prompts", f.prompts, "Training prompt file, one per line")
      ->required()
      ->type_name("FILE");
  a->add_option("--config", f.config, "key=value hyperparameter file")->type_name("FILE");
  a->add_option("--set", f.overrides, "Override one hyperparameter, key=value (repeatable)")
      ->type_name("KEY=VALUE")
      ->default_str("");
  a->add_option("--seed", f.seed, "Overrides the config seed when given");
  add_threads(a, f.threads);
}

ppo::PpoConfig resolve_config(RunContext& ctx, const PpoFlags& f) {
  io::KeyValueConfig kv;
  if (!f.config.empty()) {
    ctx.input(f.config);
    kv = io::KeyValueConfig::load(f.config);
  }
  for (const std::string& o : f.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("--set expects key=value, got '" + o + "'");
    }
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (f.seed) kv.set("seed", std::to_string(*f.seed));
  const ppo::PpoConfig cfg = ppo::PpoConfig::from_kv(kv);
  ctx.set_seed(cfg.seed);
  return cfg;
}

struct PpoInputs {
  lm::LoadedLm base;
  reward::SentimentClassifier classifier;
  std::vector<std::vector<lm::TokenId>> prompts;
};

PpoInputs load_ppo_inputs(RunContext& ctx, const PpoFlags& f) {
  PpoInputs in{load_model(ctx, f.ckpt, ""), {}, {}};
  in.classifier = load_classifier(ctx, f.classifier, in.base.tokenizer);
  in.prompts = load_text_prompts(ctx, f.prompts, in.base.tokenizer);
  return in;
}

std::optional<ppo::AnchorRegularizer> make_anchor(RunContext& ctx, const PpoFlags& f,
                                                  const ppo::PpoConfig& cfg,
                                                  const lm::TransformerLM& base) {
  if (f.negset.empty()) {
    if (cfg.anchor_coef != 0.0) throw ValidationError("anchor_coef needs --negset");
    return std::nullopt;
  }
  const auto set = load_negset(ctx, f.negset);
  const auto spec = scale_spec(set, 1.0, cfg.anchor_k);
  std::vector<lm::ValueVectorId> ids;
  for (const auto& e : spec.entries) ids.push_back(e.first);
  return ppo::AnchorRegularizer::snapshot(base, std::move(ids), cfg.anchor_coef, cfg.anchor_cap);
}

void add_ppo(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "ppo", "Align the language model against the classifier");
  auto f = std::make_shared<PpoFlags>();
  CLI::App* a = cmd.app;
  add_ppo_inputs(a, *f);
  a->add_option("--negset", f->negset, "Anchor set N; its distances are logged")
      ->type_name("FILE");
  cmd.action = [f](RunContext& ctx) {
    const ppo::PpoConfig cfg = resolve_config(ctx, *f);
    PpoInputs in = load_ppo_inputs(ctx, *f);
    const auto anchor = make_anchor(ctx, *f, cfg, in.base.model);

    lm::TransformerLM policy = in.base.model;
    std::vector<ppo::IterationMetrics> log;
    ppo::TrainOptions opts;
    opts.threads = f->threads;
    opts.on_iteration = [&](const ppo::IterationMetrics& m, const lm::TransformerLM&) {
      log.push_back(m);
    };
    ctx.write("ppo_config.cfg", cfg.to_kv().format());
    try {
      ppo::ppo_train(policy, in.base.model, in.classifier, in.prompts, cfg,
                     anchor ? &*anchor : nullptr, opts);
    } catch (const DivergenceError&) {
      ctx.write("ppo_metrics.csv", ppo::format_metrics_csv(log));
      throw;
    }
    ctx.write("ppo_metrics.csv", ppo::format_metrics_csv(log));
    const nlohmann::json provenance = {{"command", "ppo"},
                                       {"base_git_blob", io::git_blob_hash_file(f->ckpt)},
                                       {"seed", cfg.seed}};
    lm::save_lm(ctx.output_path("ppo.mchk"), policy, in.base.tokenizer, provenance);
    ctx.record_output(ctx.output_path("ppo.mchk"));
    if (!log.empty()) {
      const auto& last = log.back();
      ctx.out() << "iterations " << log.size() << " mean_reward " << num(last.mean_reward)
                << " mean_kl " << num(last.mean_kl) << "\n";
    }
  };
}

void add_sweep_lambda2(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "sweep-lambda2",
                              "PPO runs over anchor coefficients from one starting point");
  auto f = std::make_shared<PpoFlags>();
  CLI::App* a = cmd.app;
  add_ppo_inputs(a, *f);
  a->add_option("--negset", f->negset, "Anchor set N")->required()->type_name("FILE");
  a->add_option("--values", f->values, "Anchor coefficients, comma-separated")->delimiter(',');
  cmd.action = [f](RunContext& ctx) {
    ppo::PpoConfig cfg = resolve_config(ctx, *f);
    PpoInputs in = load_ppo_inputs(ctx, *f);
    std::string summary =
        "lambda2,status,iterations,final_mean_reward,final_mean_kl,final_anchor_distance_mean\n";
    std::string metrics = "lambda2," + ppo::format_metrics_csv({});
    for (double lambda2 : f->values) {
      cfg.anchor_coef = lambda2;
      cfg.validate();
      const auto anchor = make_anchor(ctx, *f, cfg, in.base.model);
      lm::TransformerLM policy = in.base.model;
      std::vector<ppo::IterationMetrics> log;
      ppo::TrainOptions opts;
      opts.threads = f->threads;
      opts.on_iteration = [&](const ppo::IterationMetrics& m, const lm::TransformerLM&) {
        log.push_back(m);
      };
      std::string status = "ok";
      try {
        ppo::ppo_train(policy, in.base.model, in.classifier, in.prompts, cfg, &*anchor, opts);
      } catch (const DivergenceError&) {
        status = "diverged";
      }
      const ppo::IterationMetrics last = log.empty() ? ppo::IterationMetrics{} : log.back();
      summary += num(lambda2) + "," + status + "," + std::to_string(log.size()) + "," +
                 num(last.mean_reward) + "," + num(last.mean_kl) + "," +
                 num(last.anchor_distance_mean) + "\n";
      const std::string body = ppo::format_metrics_csv(log);
      std::size_t pos = body.find('\n') + 1;
      while (pos < body.size()) {
        const std::size_t end = body.find('\n', pos);
        metrics += num(lambda2) + "," + body.substr(pos, end - pos) + "\n";
        pos = end + 1;
      }
      ctx.out() << "lambda2 " << num(lambda2) << " " << status << " anchor_distance_mean "
                << num(last.anchor_distance_mean) << "\n";
    }
    ctx.write("sweep_lambda2.csv", summary);
    ctx.write("sweep_lambda2_metrics.csv", metrics);
  };
}

struct EvalFlags {
  std::string ckpt, post, classifier, prompts, negset;
  double alpha = 10.0;
  std::size_t k = 0;
  ppo::EvalOptions eval;
};

void add_eval_inputs(CLI::App* a, EvalFlags& f) {
  a->add_option("--classifier", f.classifier, "Frozen sentiment classifier")
      ->required()
      ->type_name("FILE");
  a->add_option("--prompts", f.prompts, "Prompt file, one per line")->required()->type_name("FILE");
  a->add_option("--max-new", f.eval.max_new, "Tokens sampled per prompt")
      ->check(CLI::PositiveNumber);
  a->add_option("--seed", f.eval.seed, "Sampling seed");
  add_threads(a, f.eval.threads);
}

std::string scores_csv(const std::vector<const ppo::SentimentEval*>& evals,
                       const std::vector<std::string>& names) {
  std::string csv = "prompt";
  for (const auto& n : names) csv += "," + n;
  csv += "\n";
  for (std::size_t p = 0; p < evals.front()->scores.size(); ++p) {
    csv += std::to_string(p);
    for (const auto* e : evals) csv += "," + num(e->scores[p]);
    csv += "\n";
  }
  return csv;
}

void add_eval_sentiment(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "eval-sentiment",
                              "Sample continuations and histogram their sentiment");
  auto f = std::make_shared<EvalFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--ckpt", f->ckpt, "Model to evaluate (the pre column)")
      ->required()
      ->type_name("FILE");
  a->add_option("--post", f->post, "Second model, e.g. after PPO (the post column)")
      ->type_name("FILE");
  add_eval_inputs(a, *f);
  cmd.action = [f](RunContext& ctx) {
    ctx.set_seed(f->eval.seed);
    const auto pre = load_model(ctx, f->ckpt, "");
    const auto clf = load_classifier(ctx, f->classifier, pre.tokenizer);
    const auto prompts = load_text_prompts(ctx, f->prompts, pre.tokenizer);
    std::vector<ppo::SentimentEval> evals = {
        ppo::evaluate_sentiment(pre.model, clf, prompts, f->eval)};
    std::vector<std::string> names = {"pre"};
    if (!f->post.empty()) {
      const auto post = load_model(ctx, f->post, "");
      if (post.tokenizer.hash() != pre.tokenizer.hash()) {
        throw ValidationError("tokenizer mismatch between " + f->ckpt + " and " + f->post);
      }
      evals.push_back(ppo::evaluate_sentiment(post.model, clf, prompts, f->eval));
      names.push_back("post");
    }
    std::vector<const ppo::SentimentEval*> ptrs;
    for (const auto& e : evals) ptrs.push_back(&e);
    ctx.write("sentiment_scores.csv", scores_csv(ptrs, names));

    std::string hist = "bucket,low,high";
    for (const auto& n : names) hist += "," + n;
    hist += "\n";
    for (std::size_t b = 0; b < ppo::kHistogramBuckets; ++b) {
      const double w = 1.0 / ppo::kHistogramBuckets;
      hist += std::to_string(b) + "," + num(b * w) + "," + num((b + 1) * w);
      for (const auto& e : evals) hist += "," + std::to_string(e.histogram[b]);
      hist += "\n";
    }
    ctx.write("sentiment_histogram.csv", hist);

    const nlohmann::json plot = {{"kind", "bar"},
                                 {"data", "sentiment_histogram.csv"},
                                 {"x", "low"},
                                 {"bar_width", 1.0 / ppo::kHistogramBuckets},
                                 {"series", names},
                                 {"x_label", "classifier sentiment of prompt + continuation"},
                                 {"y_label", "prompts"}};
    ctx.write("sentiment_plot.json", plot.dump(2) + "\n");

    nlohmann::json summary = {{"prompts", prompts.size()}};
    for (std::size_t i = 0; i < evals.size(); ++i) summary[names[i] + "_mean"] = evals[i].mean;
    ctx.write("sentiment_summary.json", summary.dump(2) + "\n");
    for (std::size_t i = 0; i < evals.size(); ++i) {
      ctx.out() << names[i] << "_mean " << num(evals[i].mean) << "\n";
    }
  };
}

void add_intervene_eval(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "intervene-eval",
                              "Sentiment with the coefficients of a NegativeSet scaled by alpha");
  auto f = std::make_shared<EvalFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--ckpt", f->ckpt, "Model to evaluate")->required()->type_name("FILE");
  a->add_option("--negset", f->negset, "Vectors to scale")->required()->type_name("FILE");
  a->add_option("--alpha", f->alpha, "Coefficient multiplier");
  a->add_option("--k", f->k, "Use the first k vectors; 0 uses all");
  add_eval_inputs(a, *f);
  cmd.action = [f](RunContext& ctx) {
    ctx.set_seed(f->eval.seed);
    const auto loaded = load_model(ctx, f->ckpt, "");
    const auto clf = load_classifier(ctx, f->classifier, loaded.tokenizer);
    const auto prompts = load_text_prompts(ctx, f->prompts, loaded.tokenizer);
    const auto spec = scale_spec(load_negset(ctx, f->negset), f->alpha, f->k);
    spec.validate(loaded.model.config());
    ppo::EvalOptions opts = f->eval;
    opts.intervention = &spec;
    const auto eval = ppo::evaluate_sentiment(loaded.model, clf, prompts, opts);
    ctx.write("intervene_scores.csv", scores_csv({&eval}, {"intervened"}));
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& e : spec.entries) ids.push_back({{"layer", e.first.layer}, {"index", e.first.index}});
    const nlohmann::json summary = {
        {"prompts", prompts.size()}, {"alpha", f->alpha}, {"ids", ids}, {"mean", eval.mean}};
    ctx.write("intervene_eval.json", summary.dump(2) + "\n");
    ctx.out() << "intervened_mean " << num(eval.mean) << "\n";
  };
}

}  // namespace

void add_ppo_commands(CLI::App& app, Registry& registry) {
  add_ppo(app, registry);
  add_intervene_eval(app, registry);
  add_eval_sentiment(app, registry);
  add_sweep_lambda2(app, registry);
}

}  // namespace vvlab::cli
