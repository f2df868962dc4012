#include <ostream>

#include "context.hpp"
#include "vvlab/error.hpp"
#include "vvlab/io/corpus.hpp"
#include "vvlab/io/hash.hpp"
#include "vvlab/lm/training.hpp"

namespace vvlab::cli {

namespace {

std::vector<std::string> texts_of(const std::vector<io::LabeledSentence>& corpus) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& line : corpus) texts.push_back(line.text);
  return texts;
}

std::vector<io::LabeledSentence> load_corpus(RunContext& ctx, const std::string& path) {
  ctx.input(path);
  auto corpus = io::read_corpus(path);
  if (corpus.empty()) throw ValidationError("corpus " + path + " is empty");
  return corpus;
}

std::string loss_csv(const std::vector<double>& curve) {
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) csv += std::to_string(i) + "," + num(curve[i]) + "\n";
  return csv;
}

void add_gen_corpus(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "gen-corpus",
                              "Write a labeled synthetic review corpus and prompt files");
  auto o = std::make_shared<io::CorpusOptions>();
  cmd.app->add_option("--seed", o->seed, "Random seed");
  cmd.app->add_option("--sentences", o->n_sentences, "Labeled sentences")->check(CLI::PositiveNumber);
  cmd.app->add_option("--prompts", o->n_prompts, "Training prompts");
  cmd.app->add_option("--heldout-prompts", o->n_heldout_prompts, "Heldout prompts");
  cmd.action = [o](RunContext& ctx) {
    ctx.set_seed(o->seed);
    const io::SyntheticCorpus c = io::generate_corpus(*o);
    ctx.write("corpus.tsv", io::format_corpus_tsv(c.lines));
    io::write_lines(ctx.output_path("prompts.txt"), c.prompts);
    ctx.record_output(ctx.output_path("prompts.txt"));
    io::write_lines(ctx.output_path("heldout_prompts.txt"), c.heldout_prompts);
    ctx.record_output(ctx.output_path("heldout_prompts.txt"));
    ctx.out() << "sentences " << c.lines.size() << " prompts " << c.prompts.size()
              << " heldout_prompts " << c.heldout_prompts.size() << "\n";
  };
}

struct TrainLmFlags {
  std::string corpus;
  lm::ModelConfig model;
  lm::LmTrainConfig train;
  std::size_t min_freq = 1;
};

void add_train_lm(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "train-lm", "Train the toy GPT-2 on a corpus");
  auto f = std::make_shared<TrainLmFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--corpus", f->corpus, "Corpus file (label<TAB>sentence)")
      ->required()
      ->type_name("FILE");
  a->add_option("--layers", f->model.n_layers, "Transformer blocks");
  a->add_option("--d-model", f->model.d_model, "Residual width");
  a->add_option("--heads", f->model.n_heads, "Attention heads");
  a->add_option("--d-mlp", f->model.d_mlp, "MLP width (value vectors per layer)");
  a->add_option("--max-seq", f->model.max_seq, "Context length");
  a->add_option("--min-freq", f->min_freq, "Minimum token count for the vocabulary");
  a->add_option("--epochs", f->train.epochs, "Passes over the training split");
  a->add_option("--batch-size", f->train.batch_size, "Sequences per step");
  a->add_option("--lr", f->train.lr, "Adam learning rate");
  a->add_option("--clip-norm", f->train.clip_norm, "Global gradient norm cap; 0 disables");
  a->add_option("--heldout-fraction", f->train.heldout_fraction, "Share of sequences held out");
  a->add_option("--seed", f->train.seed, "Seed for initialization and batching");
  cmd.action = [f](RunContext& ctx) {
    ctx.set_seed(f->train.seed);
    const auto corpus = load_corpus(ctx, f->corpus);
    const auto texts = texts_of(corpus);
    const lm::Tokenizer tok = lm::Tokenizer::build(texts, f->min_freq);
    lm::ModelConfig mc = f->model;
    mc.vocab_size = tok.size();
    lm::TransformerLM model = lm::TransformerLM::initialized(mc, f->train.seed);
    const auto report = lm::train_lm(model, lm::encode_corpus(tok, texts), f->train);

    const nlohmann::json provenance = {{"command", "train-lm"},
                                       {"corpus_git_blob", io::git_blob_hash_file(f->corpus)},
                                       {"seed", f->train.seed}};
    lm::save_lm(ctx.output_path("lm.mchk"), model, tok, provenance);
    ctx.record_output(ctx.output_path("lm.mchk"));
    tok.save(ctx.output_path("vocab.txt"));
    ctx.record_output(ctx.output_path("vocab.txt"));
    ctx.write("lm_loss.csv", loss_csv(report.loss_curve));
    std::string evals = "step,heldout_perplexity\n";
    for (const auto& e : report.evals) {
      evals += std::to_string(e.step) + "," + num(e.heldout_perplexity) + "\n";
    }
    ctx.write("lm_eval.csv", evals);
    const nlohmann::json summary = {{"vocab_size", tok.size()},
                                    {"train_sequences", report.train_sequences},
                                    {"heldout_sequences", report.heldout_sequences},
                                    {"heldout_perplexity", report.heldout_perplexity},
                                    {"unigram_perplexity", report.unigram_perplexity}};
    ctx.write("lm_report.json", summary.dump(2) + "\n");
    ctx.out() << "vocab " << tok.size() << " heldout_perplexity " << num(report.heldout_perplexity)
              << " unigram_perplexity " << num(report.unigram_perplexity) << "\n";
  };
}

struct TrainClassifierFlags {
  std::string corpus, vocab;
  reward::ClassifierTrainConfig train;
};

void add_train_classifier(CLI::App& app, Registry& registry) {
  Command& cmd = registry.add(app, "train-classifier",
                              "Train the frozen sentiment classifier used as reward");
  auto f = std::make_shared<TrainClassifierFlags>();
  CLI::App* a = cmd.app;
  a->add_option("--corpus", f->corpus, "Corpus file (label<TAB>sentence)")
      ->required()
      ->type_name("FILE");
  a->add_option("--vocab", f->vocab, "Vocabulary shared with the language model")
      ->required()
      ->type_name("FILE");
  a->add_option("--dim", f->train.dim, "Embedding width");
  a->add_option("--epochs", f->train.epochs, "Passes over the training split");
  a->add_option("--batch-size", f->train.batch_size, "Sentences per step");
  a->add_option("--lr", f->train.lr, "Adam learning rate");
  a->add_option("--heldout-fraction", f->train.heldout_fraction, "Share of sentences held out");
  a->add_option("--seed", f->train.seed, "Seed for initialization and batching");
  cmd.action = [f](RunContext& ctx) {
    ctx.set_seed(f->train.seed);
    const auto corpus = load_corpus(ctx, f->corpus);
    ctx.input(f->vocab);
    const lm::Tokenizer tok = lm::Tokenizer::load(f->vocab);
    if (!tok.can_encode()) throw ValidationError("vocabulary " + f->vocab + " cannot encode text");
    reward::ClassifierReport report;
    const auto clf = reward::train_classifier(corpus, tok, f->train, &report);
    clf.to_checkpoint(tok).save(ctx.output_path("classifier.mchk"));
    ctx.record_output(ctx.output_path("classifier.mchk"));
    ctx.write("classifier_loss.csv", loss_csv(report.loss_curve));
    const nlohmann::json summary = {{"train_accuracy", report.train_accuracy},
                                    {"heldout_accuracy", report.heldout_accuracy}};
    ctx.write("classifier_report.json", summary.dump(2) + "\n");
    ctx.out() << "train_accuracy " << num(report.train_accuracy) << " heldout_accuracy "
              << num(report.heldout_accuracy) << "\n";
  };
}

}  // namespace

void add_data_commands(CLI::App& app, Registry& registry) {
  add_gen_corpus(app, registry);
  add_train_lm(app, registry);
  add_train_classifier(app, registry);
}

}  // namespace vvlab::cli
