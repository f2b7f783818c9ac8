#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "dgsan/checkpoint.hpp"
#include "dgsan/cli.hpp"
#include "dgsan/corpus.hpp"
#include "dgsan/dgsan.hpp"
#include "dgsan/divergences.hpp"
#include "dgsan/errors.hpp"
#include "dgsan/metrics.hpp"
#include "dgsan/models.hpp"

namespace dgsan::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

struct TrainOptions {
  std::string mode;
  fs::path out = "out";
  fs::path corpus;
  fs::path init;
  int min_freq = 1;
  int domain_size = 16;
  std::optional<int> batch_size, iterations, max_len, inner_steps, max_epochs;
  std::optional<double> temperature, old_temperature, learning_rate;
  int d_emb = 128;
  int d_h = 64;
  int epochs = 10;
  int pretrain_epochs = 0;
  std::uint64_t seed = 1;
};

struct SampleOptions {
  fs::path checkpoint, vocab, lengths_from;
  fs::path out = "out";
  long count = 100;
  double temperature = 1.0;
  int max_len = 20;
  std::uint64_t seed = 1;
};

struct EvalOptions {
  fs::path checkpoint, vocab, test, generated;
  fs::path out = "out";
  double temperature = 1.0;
  int max_len = 100;
  int ffd_dim = 32;
  std::uint64_t seed = 1;
};

struct VerifyOptions {
  std::string suite;
  int trials = 1000;
  int dim = 8;
  fs::path out;
  std::uint64_t seed = 1;
};

struct InfoOptions {
  fs::path checkpoint, corpus;
  int max_len = 20;
};

void add_seed(CLI::App* cmd, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Root random seed")->envname("DGSAN_SEED")->capture_default_str();
}

fs::path prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  return f;
}

fs::path default_vocab(const fs::path& vocab, const fs::path& checkpoint) {
  return vocab.empty() ? checkpoint.parent_path() / "vocab.txt" : vocab;
}

RecurrentLM load_recurrent(const fs::path& path) {
  const ParameterValues values = load_checkpoint(path);
  try {
    return RecurrentLM::from_parameters(values);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

bool is_tabular(const ParameterValues& values) { return values.size() == 1 && values.front().first == "logits"; }

void require_vocab_match(const RecurrentLM& m, const Vocabulary& vocab) {
  if (m.vocab_size() != vocab.size())
    throw ConfigError("checkpoint vocabulary size " + std::to_string(m.vocab_size()) +
                      " does not match vocabulary file size " + std::to_string(vocab.size()));
}

Json config_json(const TrainConfig& c) {
  Json j;
  j["batch_size"] = c.batch_size;
  j["iterations"] = c.iterations;
  j["max_len"] = c.max_len;
  j["temperature"] = c.temperature;
  if (c.old_logprob_temperature) j["old_logprob_temperature"] = *c.old_logprob_temperature;
  j["inner_steps"] = c.inner_steps;
  j["learning_rate"] = c.learning_rate;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  return j;
}

/// Rolls out `lengths[i]` tokens per sample and cuts each at the first end token.
std::vector<Sentence> generate(const RecurrentLM& m, const std::vector<int>& lengths, double temperature,
                               Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < lengths.size(); ++i) by_length[lengths[i]].push_back(i);
  std::vector<Sentence> out(lengths.size());
  const RecurrentLM frozen = m.frozen_copy();
  for (const auto& [len, rows] : by_length) {
    const std::vector<Sentence> prefixes(rows.size());
    auto samples = seq_sample_batch(frozen, prefixes, len, temperature, rng);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      Sentence& s = samples[j];
      s.erase(std::find(s.begin(), s.end(), Vocabulary::kEnd), s.end());
      out[rows[j]] = std::move(s);
    }
  }
  return out;
}

std::vector<int> draw_lengths(std::size_t count, int max_len, const std::vector<Sentence>* reference, Rng& rng) {
  std::vector<int> lengths(count, max_len);
  if (!reference || reference->empty()) return lengths;
  for (auto& l : lengths) {
    const auto i = std::min(reference->size() - 1,
                            static_cast<std::size_t>(uniform01(rng) * static_cast<double>(reference->size())));
    l = std::min(max_len, static_cast<int>((*reference)[i].size()));
  }
  return lengths;
}

// ---------------------------------------------------------------------------

int cmd_train(const TrainOptions& o, std::ostream& out) {
  RunManifest manifest;
  manifest.command = "train";
  manifest.started = utc_timestamp();
  manifest.seed = o.seed;
  const fs::path dir = prepare_out(o.out);

  TrainConfig cfg = o.mode == "dgsan-tabular" ? tabular_defaults() : TrainConfig{};
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.iterations) cfg.iterations = *o.iterations;
  if (o.max_len) cfg.max_len = *o.max_len;
  if (o.inner_steps) cfg.inner_steps = *o.inner_steps;
  if (o.max_epochs) cfg.max_epochs = *o.max_epochs;
  if (o.temperature) cfg.temperature = *o.temperature;
  if (o.old_temperature) cfg.old_logprob_temperature = *o.old_temperature;
  if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
  cfg.seed = o.seed;
  cfg.validate();

  manifest.config = config_json(cfg);
  manifest.config["mode"] = o.mode;

  const fs::path reports_path = dir / "reports.jsonl";
  std::ofstream reports = open_out(reports_path);
  const ReportSink sink = [&](const IterationReport& r) { reports << to_json_line(r) << '\n' << std::flush; };
  manifest.artifacts.push_back(reports_path);
  const fs::path model_path = dir / "model.bin";

  if (o.mode == "dgsan-tabular") {
    if (o.domain_size < 2) throw ConfigError("domain-size must be >= 2");
    manifest.config["domain_size"] = o.domain_size;
    Rng target_rng = split_rng(o.seed, "tabular.target");
    Rng init_rng = split_rng(o.seed, "tabular.init");
    const Eigen::VectorXd target = random_distribution(o.domain_size, target_rng);
    TabularDistribution q = TabularDistribution::random(o.domain_size, init_rng);
    const auto trace = dgsan_tabular(target, q, cfg, sink);

    const fs::path target_path = dir / "target.bin";
    save_checkpoint(target_path, {{"target", target.transpose()}});
    save_checkpoint_from(model_path, q.named_parameters());
    manifest.artifacts.insert(manifest.artifacts.end(), {target_path, model_path});
    out << "final js " << trace.back().js.value_or(0.0) << '\n';
  } else {
    if (o.corpus.empty()) throw ConfigError("--corpus is required for mode " + o.mode);
    if (!fs::exists(o.corpus)) throw ConfigError("corpus not found: " + o.corpus.string());
    manifest.inputs.push_back(o.corpus);
    manifest.config["corpus"] = o.corpus.string();
    manifest.config["min_freq"] = o.min_freq;
    manifest.config["d_emb"] = o.d_emb;
    manifest.config["d_h"] = o.d_h;

    auto [corpus, vocab] = load_corpus(o.corpus, cfg.max_len, o.min_freq);
    const fs::path vocab_path = dir / "vocab.txt";
    vocab->save(vocab_path);
    manifest.artifacts.push_back(vocab_path);

    Rng init_rng = split_rng(o.seed, "model.init");
    std::optional<RecurrentLM> model;
    if (!o.init.empty()) {
      manifest.inputs.push_back(o.init);
      model.emplace(load_recurrent(o.init));
      require_vocab_match(*model, *vocab);
    } else {
      if (o.d_emb < 1 || o.d_h < 1) throw ConfigError("d-emb and d-h must be >= 1");
      model.emplace(RecurrentLMConfig{.vocab_size = vocab->size(), .d_emb = o.d_emb, .d_h = o.d_h}, init_rng);
    }

    if (o.mode == "mle") {
      manifest.config["epochs"] = o.epochs;
      train_mle(corpus, *model, cfg, o.epochs, sink);
    } else {
      manifest.config["pretrain_epochs"] = o.pretrain_epochs;
      if (o.pretrain_epochs > 0) train_mle(corpus, *model, cfg, o.pretrain_epochs, sink);
      SequenceHooks hooks;
      hooks.report = sink;
      hooks.length_done = [&](int l, const RecurrentLM& m) {
        const fs::path p = dir / ("ckpt-l" + std::to_string(l) + ".bin");
        save_checkpoint_from(p, m.named_parameters());
        manifest.artifacts.push_back(p);
      };
      const auto trace = dgsan_sequence(corpus, *model, cfg, hooks);
      if (!trace.empty()) out << "final loss " << trace.back().loss << '\n';
    }
    save_checkpoint_from(model_path, model->named_parameters());
    manifest.artifacts.push_back(model_path);
  }

  reports.close();
  manifest.finished = utc_timestamp();
  manifest.write(dir / "manifest.json");
  return kOk;
}

int cmd_sample(const SampleOptions& o, std::ostream& out) {
  if (o.count < 0) throw ConfigError("--count must be >= 0");
  if (!(o.temperature > 0.0)) throw ConfigError("--T must be > 0");
  if (o.max_len < 1) throw ConfigError("--max-len must be >= 1");
  RunManifest manifest;
  manifest.command = "sample";
  manifest.started = utc_timestamp();
  manifest.seed = o.seed;
  manifest.config = {{"checkpoint", o.checkpoint.string()}, {"count", o.count}, {"temperature", o.temperature},
                     {"max_len", o.max_len}};
  manifest.inputs.push_back(o.checkpoint);
  const fs::path dir = prepare_out(o.out);
  const fs::path samples_path = dir / "samples.txt";
  std::ofstream samples = open_out(samples_path);
  const auto n = static_cast<std::size_t>(o.count);

  const ParameterValues values = load_checkpoint(o.checkpoint);
  if (is_tabular(values)) {
    const TabularDistribution t(values.front().second.row(0).transpose());
    Rng rng = split_rng(o.seed, "sample.tokens");
    for (int x : t.sample(n, o.temperature, rng)) samples << x << '\n';
  } else {
    const RecurrentLM m = load_recurrent(o.checkpoint);
    const fs::path vocab_path = default_vocab(o.vocab, o.checkpoint);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    require_vocab_match(m, vocab);
    manifest.inputs.push_back(vocab_path);

    std::optional<TokenizedCorpus> reference;
    if (!o.lengths_from.empty()) {
      reference.emplace(load_corpus_with_vocab(o.lengths_from, o.max_len, std::make_shared<Vocabulary>(vocab)));
      manifest.inputs.push_back(o.lengths_from);
    }
    Rng length_rng = split_rng(o.seed, "sample.lengths");
    Rng token_rng = split_rng(o.seed, "sample.tokens");
    const auto lengths = draw_lengths(n, o.max_len, reference ? &reference->sentences() : nullptr, length_rng);
    for (const auto& s : generate(m, lengths, o.temperature, token_rng)) samples << vocab.decode(s) << '\n';
  }
  samples.close();
  manifest.artifacts.push_back(samples_path);
  manifest.finished = utc_timestamp();
  manifest.write(dir / "manifest.json");
  out << "wrote " << n << " samples to " << samples_path.string() << '\n';
  return kOk;
}

template <typename F>
Json metric_or_null(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument&) {
    return nullptr;
  }
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const RecurrentLM m = load_recurrent(o.checkpoint);
  const fs::path vocab_path = default_vocab(o.vocab, o.checkpoint);
  auto vocab = std::make_shared<const Vocabulary>(Vocabulary::load(vocab_path));
  require_vocab_match(m, *vocab);
  const TokenizedCorpus test = load_corpus_with_vocab(o.test, o.max_len, vocab);

  std::vector<Sentence> generated;
  if (!o.generated.empty()) {
    generated = load_corpus_with_vocab(o.generated, o.max_len, vocab).sentences();
  } else {
    Rng length_rng = split_rng(o.seed, "eval.lengths");
    Rng token_rng = split_rng(o.seed, "eval.tokens");
    const auto lengths = draw_lengths(test.size(), o.max_len, &test.sentences(), length_rng);
    for (auto& s : generate(m, lengths, o.temperature, token_rng))
      if (!s.empty()) generated.push_back(std::move(s));
  }
  if (generated.empty()) throw ConfigError("no generated sentences to evaluate");

  Json result;
  result["nll"] = nll(m, test);
  for (const char* key : {"bl", "bbl", "msj"}) result[key] = Json::object();
  for (int n : {3, 5, 7}) {
    const std::string k = std::to_string(n);
    result["bl"][k] = metric_or_null([&] { return bleu_n(generated, test.sentences(), n); });
    result["bbl"][k] = metric_or_null([&] { return backward_bleu_n(test.sentences(), generated, n); });
    result["msj"][k] = metric_or_null([&] { return msj_k(test.sentences(), generated, n); });
  }
  result["ffd"] = metric_or_null(
      [&] { return frechet_feature_distance(test.sentences(), generated, o.ffd_dim, split_rng(o.seed, "eval.ffd")()); });

  const fs::path dir = prepare_out(o.out);
  const fs::path eval_path = dir / "eval.json";
  open_out(eval_path) << result.dump(2) << '\n';
  out << result.dump() << '\n';
  return kOk;
}

int cmd_verify(const VerifyOptions& o, std::ostream& out, std::ostream& err) {
  std::optional<std::ofstream> log;
  if (!o.out.empty()) log.emplace(open_out(prepare_out(o.out) / "verify.jsonl"));

  const std::vector<std::string> suites = o.suite == "all" ? verify_suites() : std::vector<std::string>{o.suite};
  bool all_pass = true;
  for (const auto& name : suites) {
    const SuiteSummary s =
        run_verify_suite(name, o.trials, o.seed, o.dim, [&](const CheckRecord& r) {
      if (log) *log << to_json_line(r) << '\n';
    });
    out << name << ": " << (s.pass() ? "PASS" : "FAIL") << " (" << s.checks << " checks, " << s.failures
        << " failures)";
    if (s.worst)
      out << " worst " << s.worst->theorem << "/" << s.worst->f_name << " residual_or_delta=" << s.worst->residual_or_delta
          << " seed=" << s.worst->seed;
    out << '\n';
    if (!s.pass()) {
      all_pass = false;
      if (s.first_failure) err << "first failure: " << to_json_line(*s.first_failure) << '\n';
    }
  }
  return all_pass ? kOk : kVerifyFailed;
}

int cmd_info(const InfoOptions& o, std::ostream& out) {
  Json j;
  j["suites"] = verify_suites();
  j["generators"] = Json::array();
  for (const auto& f : builtin_generators<double>()) j["generators"].push_back(f.name);
  j["modes"] = {"dgsan-tabular", "dgsan-seq", "mle"};
  if (!o.checkpoint.empty()) {
    Json params = Json::array();
    for (const auto& [name, value] : load_checkpoint(o.checkpoint))
      params.push_back({{"name", name}, {"rows", value.rows()}, {"cols", value.cols()}});
    j["checkpoint"] = {{"path", o.checkpoint.string()}, {"parameters", params}};
  }
  if (!o.corpus.empty()) {
    const auto [corpus, vocab] = load_corpus(o.corpus, o.max_len, 1);
    std::size_t tokens = 0;
    for (const auto& s : corpus.sentences()) tokens += s.size();
    j["corpus"] = {{"path", o.corpus.string()},     {"sentences", corpus.size()},
                   {"tokens", tokens},              {"vocab_size", vocab->size()},
                   {"longest", corpus.longest()},   {"git_blob_sha1", git_blob_sha1(o.corpus)}};
  }
  out << j.dump(2) << '\n';
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-adversarial training of explicit discrete generators"};
  app.set_config("--config", "", "TOML config file; sections name subcommands, flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train a model and write reports, checkpoints and a manifest");
  t->add_option("--mode", train.mode, "Training algorithm")
      ->required()
      ->check(CLI::IsMember({"dgsan-tabular", "dgsan-seq", "mle"}));
  t->add_option("--out", train.out, "Output directory")->capture_default_str();
  t->add_option("--corpus", train.corpus, "Training corpus, one sentence per line");
  t->add_option("--init", train.init, "Start from this recurrent checkpoint");
  t->add_option("--min-freq", train.min_freq, "Rarer tokens map to <unk>")->capture_default_str();
  t->add_option("--domain-size", train.domain_size, "Domain size for dgsan-tabular")->capture_default_str();
  t->add_option("--B,--batch-size", train.batch_size, "Batch size");
  t->add_option("--D,--iterations", train.iterations, "Outer iterations (per length for dgsan-seq)");
  t->add_option("--M,--max-len", train.max_len, "Maximum sentence length");
  t->add_option("--T,--temperature", train.temperature, "Sampling temperature of Q_old");
  t->add_option("--old-logprob-temperature", train.old_temperature,
                "Temperature at which Q_old scores samples (default: --T)");
  t->add_option("--inner-steps", train.inner_steps, "Optimizer steps per outer iteration");
  t->add_option("--lr,--learning-rate", train.learning_rate, "Adam learning rate");
  t->add_option("--max-epochs", train.max_epochs, "Epoch budget for dgsan-seq (0: none)");
  t->add_option("--epochs", train.epochs, "Epochs for mle")->capture_default_str();
  t->add_option("--pretrain-epochs", train.pretrain_epochs, "MLE epochs before dgsan-seq")->capture_default_str();
  t->add_option("--d-emb", train.d_emb, "Embedding size")->capture_default_str();
  t->add_option("--d-h", train.d_h, "Hidden size")->capture_default_str();
  add_seed(t, train.seed);

  SampleOptions sample;
  auto* s = app.add_subcommand("sample", "Draw samples from a checkpoint");
  s->add_option("--checkpoint", sample.checkpoint, "Model checkpoint")->required();
  s->add_option("--vocab", sample.vocab, "Vocabulary file (default: vocab.txt next to the checkpoint)");
  s->add_option("--count", sample.count, "Number of samples")->capture_default_str();
  s->add_option("--T,--temperature", sample.temperature, "Sampling temperature")->capture_default_str();
  s->add_option("--max-len", sample.max_len, "Rollout length")->capture_default_str();
  s->add_option("--lengths-from", sample.lengths_from, "Draw rollout lengths from this corpus");
  s->add_option("--out", sample.out, "Output directory")->capture_default_str();
  add_seed(s, sample.seed);

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "Score a checkpoint against a test corpus");
  e->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required();
  e->add_option("--vocab", eval.vocab, "Vocabulary file (default: vocab.txt next to the checkpoint)");
  e->add_option("--test", eval.test, "Test corpus")->required();
  e->add_option("--generated", eval.generated, "Generated sentences (default: sample as many as the test set)");
  e->add_option("--T,--temperature", eval.temperature, "Sampling temperature")->capture_default_str();
  e->add_option("--max-len", eval.max_len, "Truncation length")->capture_default_str();
  e->add_option("--ffd-dim", eval.ffd_dim, "Feature dimension of the Fréchet distance")->capture_default_str();
  e->add_option("--out", eval.out, "Output directory")->capture_default_str();
  add_seed(e, eval.seed);

  VerifyOptions verify;
  auto* v = app.add_subcommand("verify", "Numerically verify the divergence identities and gradients");
  std::vector<std::string> suite_names = verify_suites();
  suite_names.push_back("all");
  v->add_option("suite", verify.suite, "Suite to run")->required()->check(CLI::IsMember(suite_names));
  v->add_option("--trials", verify.trials, "Random instances per check")->capture_default_str()->check(
      CLI::PositiveNumber);
  v->add_option("--dim", verify.dim, "Distribution dimension")->capture_default_str();
  v->add_option("--out", verify.out, "Write per-check JSON lines to <out>/verify.jsonl");
  add_seed(v, verify.seed);

  InfoOptions info;
  auto* i = app.add_subcommand("info", "Describe the build, a checkpoint or a corpus");
  i->add_option("--checkpoint", info.checkpoint, "Checkpoint to describe");
  i->add_option("--corpus", info.corpus, "Corpus to describe");
  i->add_option("--max-len", info.max_len, "Truncation length for corpus statistics")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& ex) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return kConfigError;
  }

  try {
    if (t->parsed()) return cmd_train(train, out);
    if (s->parsed()) return cmd_sample(sample, out);
    if (e->parsed()) return cmd_eval(eval, out);
    if (v->parsed()) return cmd_verify(verify, out, err);
    if (i->parsed()) return cmd_info(info, out);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kConfigError;
  } catch (const NumericDivergence& ex) {
    err << "numeric divergence: " << ex.what() << '\n';
    return kNumericDivergence;
  } catch (const std::invalid_argument& ex) {
    err << "invalid input: " << ex.what() << '\n';
    return kConfigError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return kConfigError;
}

}  // namespace dgsan::cli
