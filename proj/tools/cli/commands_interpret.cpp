#include <map>
#include <ostream>

#include "context.hpp"
#include "vvlab/error.hpp"
#include "vvlab/interpret/diff.hpp"
#include "vvlab/interpret/lens.hpp"
#include "vvlab/interpret/probe.hpp"
#include "vvlab/io/corpus.hpp"
#include "vvlab/lm/training.hpp"

namespace vvlab::cli {

namespace {

// Exactly one of two alternative flags.
void require_one_of(CLI::App* app, CLI::Option* a, CLI::Option* b) {
  a->excludes(b);
  app->callback([a, b] {
    if (a->count() == 0 && b->count() == 0) {
      throw CLI::RequiredError(a->get_name() + " or " + b->get_name());
    }
  });
}

struct ProbeFlags {
  std::string ckpt, vocab, corpus;
  interpret::ProbeConfig probe;
};

void add_train_probe(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "train-probe",
                              "Fit the negative-sentiment direction on sentence representations");
  auto f = std::make_shared<ProbeFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--ckpt", f->ckpt, "Language model checkpoint")->required()->type_name("FILE");
  add_vocab(a, f->vocab);
  a->add_option("--corpus", f->corpus, "Labeled corpus (label<TAB>sentence)")
      ->required()
      ->type_name("FILE");
  a->add_option("--iterations", f->probe.iterations, "Gradient steps");
  a->add_option("--lr", f->probe.lr, "Step size");
  a->add_option("--l2", f->probe.l2, "Ridge penalty");
  cmd.action = [f](RunContext& ctx) {
    const auto loaded = load_model(ctx, f->ckpt, f->vocab);
    if (!loaded.tokenizer.can_encode()) {
      throw ValidationError("the vocabulary of " + f->ckpt + " cannot encode the corpus");
    }
    ctx.input(f->corpus);
    const auto corpus = io::read_corpus(f->corpus);
    std::vector<std::string> texts;
    for (const auto& line : corpus) texts.push_back(line.text);
    const auto reps = interpret::sentence_representations(
        loaded.model, lm::encode_corpus(loaded.tokenizer, texts));
    std::vector<interpret::ProbeSample> samples;
    samples.reserve(reps.size());
    for (std::size_t i = 0; i < reps.size(); ++i) {
      samples.push_back({reps[i], corpus[i].label == io::Sentiment::kNegative});
    }
    const auto probe = interpret::train_probe(samples, f->probe);
    probe.save(ctx.output_path("probe.json"));
    ctx.record_output(ctx.output_path("probe.json"));
    ctx.out() << "train_accuracy " << num(probe.train_accuracy) << " heldout_accuracy "
              << num(probe.heldout_accuracy) << "\n";
  };
}

struct RankFlags {
  std::string ckpt, vocab, probe;
  std::size_t k = 10;
};

void add_rank_negative(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "rank-negative",
                              "Rank value vectors by cosine with the probe direction");
  auto f = std::make_shared<RankFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--ckpt", f->ckpt, "Language model checkpoint")->required()->type_name("FILE");
  add_vocab(a, f->vocab);
  a->add_option("--probe", f->probe, "Probe file")->required()->type_name("FILE");
  a->add_option("--k", f->k, "Vectors to keep")->check(CLI::PositiveNumber);
  cmd.action = [f](RunContext& ctx) {
    const auto loaded = load_model(ctx, f->ckpt, f->vocab);
    ctx.input(f->probe);
    const auto probe = interpret::ProbeDirection::load(f->probe);
    const auto set = interpret::rank_negative_vectors(loaded.model, probe.w_neg, f->k);
    interpret::save_negative_set(ctx.output_path("negset.json"), set);
    ctx.record_output(ctx.output_path("negset.json"));
    std::vector<std::size_t> per_layer(loaded.model.config().n_layers, 0);
    for (const auto& r : set) ++per_layer[r.id.layer];
    std::string csv = "layer,count\n";
    for (std::size_t l = 0; l < per_layer.size(); ++l) {
      csv += std::to_string(l) + "," + std::to_string(per_layer[l]) + "\n";
    }
    ctx.write("negset_layers.csv", csv);
    for (const auto& r : set) {
      ctx.out() << lm::to_string(r.id) << " " << num(r.cosine) << "\n";
    }
  };
}

struct ProjectFlags {
  std::string ckpt, vocab, negset;
  std::size_t layer = 0, index = 0, top = 10;
};

void add_project_values(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "project-values",
                              "Project value vectors onto the vocabulary (top tokens)");
  auto f = std::make_shared<ProjectFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--ckpt", f->ckpt, "Language model checkpoint")->required()->type_name("FILE");
  add_vocab(a, f->vocab);
  auto* layer = a->add_option("--layer", f->layer, "Layer of a single vector");
  auto* index = a->add_option("--index", f->index, "Index of a single vector in its layer");
  auto* negset = a->add_option("--negset", f->negset, "Project every vector of a NegativeSet")
                     ->type_name("FILE");
  a->add_option("--top", f->top, "Tokens per vector")->check(CLI::PositiveNumber);
  layer->needs(index);
  index->needs(layer);
  require_one_of(a, layer, negset);
  index->excludes(negset);
  cmd.action = [f, negset](RunContext& ctx) {
    const auto loaded = load_model(ctx, f->ckpt, f->vocab);
    std::vector<lm::ValueVectorId> ids;
    if (negset->count() > 0) {
      ids = interpret::ids_of(load_negset(ctx, f->negset));
    } else {
      ids.push_back({f->layer, f->index});
    }
    std::string csv = "layer,index,rank,token_id,token,score\n";
    for (const auto& id : ids) {
      const auto proj = interpret::project_values(loaded.model, loaded.tokenizer, id, f->top);
      ctx.out() << lm::to_string(id) << ":";
      for (std::size_t r = 0; r < proj.top.size(); ++r) {
        const auto& t = proj.top[r];
        csv += std::to_string(id.layer) + "," + std::to_string(id.index) + "," +
               std::to_string(r + 1) + "," + std::to_string(t.id) + "," + csv_field(t.token) +
               "," + num(t.score) + "\n";
        ctx.out() << " " << t.token;
      }
      ctx.out() << "\n";
    }
    ctx.write("projection.csv", csv);
  };
}

struct LensFlags {
  std::string ckpt, vocab, prompts, prompt_ids, target, negset;
  lm::TokenId target_id = 0;
  std::int64_t position = -1;
  double alpha = 1.0;
  std::size_t k = 0;
};

void add_logit_lens(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "logit-lens",
                              "Probability of a target token at every layer boundary");
  auto f = std::make_shared<LensFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--ckpt", f->ckpt, "Language model checkpoint")->required()->type_name("FILE");
  add_vocab(a, f->vocab);
  auto* text = a->add_option("--prompts", f->prompts, "Prompt text file, one per line")
                   ->type_name("FILE");
  auto* ids = a->add_option("--prompt-ids", f->prompt_ids,
                            "Pre-tokenized prompts, space-separated ids per line")
                  ->type_name("FILE");
  auto* target = a->add_option("--target", f->target, "Target token text");
  auto* target_id = a->add_option("--target-id", f->target_id, "Target token id");
  a->add_option("--position", f->position, "Prompt position; negative counts from the end");
  a->add_option("--negset", f->negset, "Scale the coefficients of these vectors")
      ->type_name("FILE");
  a->add_option("--alpha", f->alpha, "Coefficient multiplier for --negset");
  a->add_option("--k", f->k, "Use the first k vectors of --negset; 0 uses all");
  text->excludes(ids);
  target->excludes(target_id);
  a->callback([text, ids, target, target_id] {
    if (text->count() + ids->count() == 0) throw CLI::RequiredError("--prompts or --prompt-ids");
    if (target->count() + target_id->count() == 0) {
      throw CLI::RequiredError("--target or --target-id");
    }
  });
  cmd.action = [f, text, target](RunContext& ctx) {
    const auto loaded = load_model(ctx, f->ckpt, f->vocab);
    const auto prompts = text->count() > 0
                             ? load_text_prompts(ctx, f->prompts, loaded.tokenizer)
                             : load_id_prompts(ctx, f->prompt_ids);
    lm::TokenId tid = f->target_id;
    if (target->count() > 0) {
      const auto found = loaded.tokenizer.find(f->target);
      if (!found) throw ValidationError("target '" + f->target + "' is not in the vocabulary");
      tid = *found;
    }
    std::optional<lm::InterventionSpec> spec;
    if (!f->negset.empty()) spec = scale_spec(load_negset(ctx, f->negset), f->alpha, f->k);

    std::string csv = "prompt,position,target_id,layer,probability\n";
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      const auto n = static_cast<std::int64_t>(prompts[p].size());
      const std::int64_t pos = f->position < 0 ? n + f->position : f->position;
      if (pos < 0) {
        throw IndexError("position " + std::to_string(f->position) + " is before prompt " +
                         std::to_string(p));
      }
      const auto track = interpret::logit_lens(loaded.model, prompts[p],
                                               static_cast<std::size_t>(pos), tid,
                                               spec ? &*spec : nullptr);
      for (std::size_t l = 0; l < track.probability.size(); ++l) {
        csv += std::to_string(p) + "," + std::to_string(pos) + "," + std::to_string(tid) + "," +
               std::to_string(l) + "," + num(track.probability[l]) + "\n";
      }
      ctx.out() << "prompt " << p << " final " << num(track.probability.back()) << "\n";
    }
    ctx.write("lens.csv", csv);
  };
}

struct WeightDiffFlags {
  std::string a, b, vocab;
};

std::string bucket_bounds(std::size_t b) {
  using H = interpret::CosineHistogram;
  if (b == 0) return "-1," + num(H::kLow);
  const double lo = H::kLow + static_cast<double>(b - 1) * H::kWidth;
  return num(lo) + "," + num(b + 1 == H::kBuckets ? 1.0 : lo + H::kWidth);
}

void add_weight_diff(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "weight-diff",
                              "Cosine between matching key and value vectors of two models");
  auto f = std::make_shared<WeightDiffFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--a", f->a, "First checkpoint (before)")->required()->type_name("FILE");
  a->add_option("--b", f->b, "Second checkpoint (after)")->required()->type_name("FILE");
  add_vocab(a, f->vocab);
  cmd.action = [f](RunContext& ctx) {
    const auto ma = load_model(ctx, f->a, f->vocab);
    const auto mb = load_model(ctx, f->b, f->vocab);
    const auto d = interpret::weight_diff(ma.model, mb.model);
    std::string hist = "bucket,low,high,value_count,key_count\n";
    for (std::size_t b = 0; b < interpret::CosineHistogram::kBuckets; ++b) {
      hist += std::to_string(b) + "," + bucket_bounds(b) + "," +
              std::to_string(d.value_histogram.counts[b]) + "," +
              std::to_string(d.key_histogram.counts[b]) + "\n";
    }
    ctx.write("weight_diff_histogram.csv", hist);
    std::string vec = "layer,index,value_cosine,key_cosine\n";
    for (const auto& v : d.vectors) {
      vec += std::to_string(v.id.layer) + "," + std::to_string(v.id.index) + "," +
             num(v.value_cosine) + "," + num(v.key_cosine) + "\n";
    }
    ctx.write("weight_diff_vectors.csv", vec);
    const nlohmann::json summary = {
        {"vectors", d.vectors.size()},
        {"value_fraction_at_least_0.999", d.value_fraction_at_least(0.999)},
        {"value_fraction_at_least_0.9998", d.value_fraction_at_least(0.9998)}};
    ctx.write("weight_diff.json", summary.dump(2) + "\n");
    ctx.out() << "vectors " << d.vectors.size() << " value_fraction_at_least_0.999 "
              << num(d.value_fraction_at_least(0.999)) << "\n";
  };
}

struct ActDiffFlags {
  std::string a, b, vocab, negset, prompts, prompt_ids;
  std::size_t k = 0;
};

void add_act_diff(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "act-diff",
                              "Mean coefficient of each NegativeSet vector under two models");
  auto f = std::make_shared<ActDiffFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--a", f->a, "First checkpoint (before)")->required()->type_name("FILE");
  a->add_option("--b", f->b, "Second checkpoint (after)")->required()->type_name("FILE");
  add_vocab(a, f->vocab);
  a->add_option("--negset", f->negset, "Vectors to compare")->required()->type_name("FILE");
  a->add_option("--k", f->k, "Use the first k vectors; 0 uses all");
  auto* text = a->add_option("--prompts", f->prompts, "Prompt text file, one per line")
                   ->type_name("FILE");
  auto* ids = a->add_option("--prompt-ids", f->prompt_ids,
                            "Pre-tokenized prompts, space-separated ids per line")
                  ->type_name("FILE");
  require_one_of(a, text, ids);
  cmd.action = [f, text](RunContext& ctx) {
    const auto ma = load_model(ctx, f->a, f->vocab);
    const auto mb = load_model(ctx, f->b, f->vocab);
    const auto prompts = text->count() > 0 ? load_text_prompts(ctx, f->prompts, ma.tokenizer)
                                           : load_id_prompts(ctx, f->prompt_ids);
    const auto spec = scale_spec(load_negset(ctx, f->negset), 1.0, f->k);
    std::vector<lm::ValueVectorId> vec_ids;
    for (const auto& e : spec.entries) vec_ids.push_back(e.first);
    const auto deltas = interpret::activation_diff(ma.model, ma.tokenizer, mb.model, mb.tokenizer,
                                                   prompts, vec_ids);
    std::string csv = "layer,index,mean_a,mean_b,delta,sign\n";
    std::size_t lower = 0;
    for (const auto& d : deltas) {
      const char* sign = d.delta > 0 ? "+" : d.delta < 0 ? "-" : "0";
      lower += d.delta < 0;
      csv += std::to_string(d.id.layer) + "," + std::to_string(d.id.index) + "," +
             num(d.mean_a) + "," + num(d.mean_b) + "," + num(d.delta) + "," + sign + "\n";
    }
    ctx.write("act_diff.csv", csv);
    ctx.out() << "vectors " << deltas.size() << " lower_after " << lower << "\n";
  };
}

}  // namespace

void add_interpret_commands(CLI::App& app, Registry& registry) {
  add_train_probe(app, registry);
  add_rank_negative(app, registry);
  add_project_values(app, registry);
  add_logit_lens(app, registry);
  add_weight_diff(app, registry);
  add_act_diff(app, registry);
}

}  // namespace vvlab::cli
