// sbd: train, apply and evaluate sentence boundary detectors.

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sbd/corpus.hpp"
#include "sbd/evaluation.hpp"
#include "sbd/features.hpp"
#include "sbd/model_io.hpp"
#include "sbd/training.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::uint64_t seed = 7;
  std::string config;
  std::size_t jobs = 1;
  std::string log_level = "info";
};

struct ModelOptions {
  std::string variant = "rcnn";
  std::string features;  // empty: all when the corpus has prosody, else emb+pos
  std::optional<double> alpha;
  std::string embeddings;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double eta = 0.001;
  std::size_t filters = 100;
  std::size_t units = 100;
  std::size_t prosodic_filters = 8;
  std::size_t prosodic_units = 100;
};

void add_model_options(CLI::App* cmd, ModelOptions& o) {
  cmd->add_option("--variant", o.variant, "Network: rcnn, cnn, rnn or mlp")
      ->check(CLI::IsMember({"rcnn", "cnn", "rnn", "mlp"}))
      ->capture_default_str();
  cmd->add_option("--features", o.features, "all, or a '+'-joined subset of emb, pos, prosody");
  cmd->add_option("--alpha", o.alpha, "Fix the fusion weight instead of tuning it")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--embeddings", o.embeddings, "Pretrained word vectors ('N dim' header, one word per line)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--eta", o.eta, "RMSProp learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--filters", o.filters, "Convolution filters of the lexical network")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--units", o.units, "LSTM units of the lexical network")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--prosodic-filters", o.prosodic_filters)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--prosodic-units", o.prosodic_units)->check(CLI::PositiveNumber)->capture_default_str();
}

sbd::FeatureSet resolve_features(const ModelOptions& o, const sbd::Corpus& corpus) {
  if (o.features.empty()) return corpus.has_prosody() ? sbd::FeatureSet{} : sbd::FeatureSet{true, true, false};
  auto f = sbd::parse_feature_set(o.features);
  if (!f) throw UsageError("unknown feature set '" + o.features + "'");
  return *f;
}

sbd::SegmenterConfig segmenter_config(const ModelOptions& o, const sbd::FeatureSet& features, std::uint64_t seed) {
  sbd::SegmenterConfig cfg;
  cfg.variant = *sbd::parse_variant(o.variant);
  cfg.features = features;
  cfg.fixed_alpha = o.alpha;
  for (auto* hp : {&cfg.lexical_hp, &cfg.prosodic_hp}) {
    hp->eta = o.eta;
    hp->epochs = o.epochs;
  }
  cfg.lexical_hp.n_f = o.filters;
  cfg.lexical_hp.n_r = o.units;
  cfg.prosodic_hp.n_f = o.prosodic_filters;
  cfg.prosodic_hp.n_r = o.prosodic_units;
  cfg.train.epochs = o.epochs;
  cfg.train.batch_size = o.batch_size;
  cfg.train.seed = seed;
  return cfg;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::uint32_t corpus_checksum(const sbd::Corpus& corpus) {
  std::ostringstream ss;
  sbd::write_tsv(ss, corpus);
  const std::string s = ss.str();
  return sbd::io_detail::crc32_of(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

std::string real(double v) { return sbd::detail::format_real(v); }

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  sbd::SynthSpec spec;
  std::string group = "CTL";
  std::string out;
};

void add_synth(CLI::App& app, SynthOptions& o) {
  auto* cmd = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  cmd->add_option("--texts", o.spec.n_texts)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--mean-sentence-len", o.spec.mean_sentence_len)
      ->check(CLI::Range(2.0, 1e6))
      ->capture_default_str();
  cmd->add_option("--sentences-per-text", o.spec.sentences_per_text)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--cue-token", o.spec.boundary_cue_token)->capture_default_str();
  cmd->add_option("--cue-reliability", o.spec.cue_reliability)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  cmd->add_option("--cue-offset", o.spec.cue_offset, "Cue position before the boundary word")->capture_default_str();
  cmd->add_option("--prosody-strength", o.spec.prosody_cue_strength)->capture_default_str();
  cmd->add_option("--vocab-size", o.spec.vocab_size)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--group", o.group)->check(CLI::IsMember({"CTL", "MCI", "AD", "OTHER"}))->capture_default_str();
  cmd->add_option("--prefix", o.spec.id_prefix, "Text id prefix")->capture_default_str();
  cmd->add_option("--out", o.out, "Output directory")->required();
}

int run_synth(SynthOptions o, const GlobalOptions& g) {
  o.spec.seed = g.seed;
  o.spec.group = *sbd::parse_group(o.group);
  const sbd::Corpus corpus = sbd::synth_generate(o.spec);
  sbd::write_corpus(corpus, o.out);

  std::ofstream m(fs::path(o.out) / "manifest.conf");
  if (!m) throw sbd::DataError("cannot write manifest into '" + o.out + "'");
  const auto& s = o.spec;
  m << "# synthetic corpus; regenerate with: sbd synth --config manifest.conf --out <dir>\n"
    << "texts = " << s.n_texts << "\nmean-sentence-len = " << real(s.mean_sentence_len)
    << "\nsentences-per-text = " << s.sentences_per_text << "\ncue-token = \"" << s.boundary_cue_token
    << "\"\ncue-reliability = " << real(s.cue_reliability) << "\ncue-offset = " << s.cue_offset
    << "\nprosody-strength = " << real(s.prosody_cue_strength) << "\nvocab-size = " << s.vocab_size
    << "\ngroup = " << o.group << "\nprefix = \"" << s.id_prefix << "\"\nseed = " << g.seed << '\n';

  const auto st = sbd::corpus_stats(corpus);
  spdlog::info("wrote {} texts, {} words, {} sentences to {}", st.n_texts, st.n_words, st.n_sentences, o.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string corpus;
  std::string out;
  ModelOptions model;
};

void add_train(CLI::App& app, TrainOptions& o) {
  auto* cmd = app.add_subcommand("train", "Train a segmenter and write the model file");
  cmd->add_option("--corpus", o.corpus, "Corpus file or directory")->required()->check(CLI::ExistingPath);
  cmd->add_option("--out", o.out, "Model file to write")->required();
  add_model_options(cmd, o.model);
}

int run_train(const TrainOptions& o, const GlobalOptions& g) {
  const sbd::Corpus corpus = sbd::read_corpus(o.corpus);
  const sbd::FeatureSet features = resolve_features(o.model, corpus);
  sbd::check_features_available(corpus, features);
  sbd::SegmenterConfig cfg = segmenter_config(o.model, features, g.seed);

  std::optional<sbd::EmbeddingTable> pretrained;
  if (!o.model.embeddings.empty()) {
    pretrained = sbd::load_embeddings(fs::path(o.model.embeddings));
    cfg.pretrained_words = &*pretrained;
  }

  const fs::path out(o.out);
  fs::path log_path = out;
  log_path.replace_extension(".log");
  std::ofstream log(log_path);
  if (!log) throw sbd::DataError("cannot write '" + log_path.string() + "'");
  log << "epoch\tmean_loss\telapsed_ms\n";
  cfg.train.on_epoch = [&log](const sbd::EpochLog& e) {
    log << e.epoch << '\t' << real(e.mean_loss) << '\t' << sbd::format_fixed(e.elapsed_ms, 1) << '\n';
    spdlog::debug("epoch {} loss {:.6f}", e.epoch, e.mean_loss);
  };

  spdlog::info("training {} on {} ({} texts, features {})", o.model.variant, corpus.name, corpus.texts.size(),
               sbd::to_string(features));
  sbd::Rng rng(g.seed);
  const sbd::TrainedSegmenter seg = sbd::fit_segmenter(corpus.texts, cfg, rng);
  sbd::save_model(seg, out);

  fs::path manifest_path = out;
  manifest_path.replace_extension(".manifest");
  std::ofstream m(manifest_path);
  if (!m) throw sbd::DataError("cannot write '" + manifest_path.string() + "'");
  const auto& mo = o.model;
  m << "corpus = \"" << o.corpus << "\"\ncorpus-crc32 = " << hex32(corpus_checksum(corpus)) << "\nvariant = "
    << mo.variant << "\nfeatures = " << sbd::to_string(features) << "\nalpha = " << real(seg.alpha)
    << "\nalpha-tuned = " << (mo.alpha ? "false" : "true") << "\nepochs = " << mo.epochs
    << "\nbatch-size = " << mo.batch_size << "\neta = " << real(mo.eta) << "\nfilters = " << mo.filters
    << "\nunits = " << mo.units << "\nprosodic-filters = " << mo.prosodic_filters
    << "\nprosodic-units = " << mo.prosodic_units << "\nseed = " << g.seed << '\n';
  if (pretrained) {
    const std::string raw = sbd::read_file(mo.embeddings);
    m << "embeddings = \"" << mo.embeddings << "\"\nembeddings-crc32 = "
      << hex32(sbd::io_detail::crc32_of(reinterpret_cast<const unsigned char*>(raw.data()), raw.size())) << '\n';
  }
  spdlog::info("wrote {} (alpha {})", out.string(), sbd::format_fixed(seg.alpha, 2));
  return kOk;
}

// ---------------------------------------------------------------------------
// segment

struct SegmentOptions {
  std::string model;
  std::string input;
  std::string emit = "text";
  std::optional<double> alpha;
};

void add_segment(CLI::App& app, SegmentOptions& o) {
  auto* cmd = app.add_subcommand("segment", "Insert sentence boundaries into a token stream");
  cmd->add_option("--model", o.model)->required()->check(CLI::ExistingFile);
  cmd->add_option("--input", o.input, "Tokens file, or a .tsv corpus file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--emit", o.emit)->check(CLI::IsMember({"text", "tsv"}))->capture_default_str();
  cmd->add_option("--alpha", o.alpha, "Override the model's fusion weight")->check(CLI::Range(0.0, 1.0));
}

int run_segment(const SegmentOptions& o, const GlobalOptions&) {
  sbd::TrainedSegmenter seg = sbd::load_model(o.model);
  if (o.alpha) seg.alpha = *o.alpha;

  std::vector<sbd::LabeledText> texts;
  if (fs::path(o.input).extension() == ".tsv") {
    std::ifstream in(o.input);
    texts = sbd::parse_tsv(in, o.input);
  } else {
    const std::string raw = sbd::read_file(o.input);
    if (raw.find_first_not_of(" \t\r\n") == std::string::npos) return kOk;
    texts.push_back(sbd::labels_from_punctuation(raw, fs::path(o.input).stem().string()));
  }

  for (const auto& text : texts) {
    if (seg.needs_prosody() && !text.has_prosody())
      throw sbd::UnsupportedInput("model fuses prosodic predictions (alpha " + sbd::format_fixed(seg.alpha, 2) +
                                  ") but '" + o.input + "' has no prosody; rerun with --alpha 1.0");
    const sbd::Fused out = seg.predict(text);
    if (o.emit == "tsv") {
      for (std::size_t t = 0; t < text.size(); ++t) {
        std::cout << text.tokens[t] << '\t' << sbd::format_fixed(out.probs(t, 1), 6) << '\t'
                  << sbd::to_string(out.labels[t]) << '\n';
      }
    } else {
      for (std::size_t t = 0; t < text.size(); ++t) {
        if (t) std::cout << ' ';
        std::cout << text.tokens[t];
        if (out.labels[t] == sbd::Label::B) std::cout << " .";
      }
      std::cout << '\n';
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string corpus;
  std::string train_corpus;
  std::string test_corpus;
  std::size_t folds = 5;
  bool per_fold_alpha = false;
  std::string report;
  ModelOptions model;
};

void add_eval(CLI::App& app, EvalOptions& o) {
  auto* cmd = app.add_subcommand("eval", "Cross-validate, or train on one corpus and test on another");
  auto* corpus = cmd->add_option("--corpus", o.corpus, "Corpus for k-fold cross validation")->check(CLI::ExistingPath);
  auto* train = cmd->add_option("--train-corpus", o.train_corpus)->check(CLI::ExistingPath);
  auto* test = cmd->add_option("--test-corpus", o.test_corpus)->check(CLI::ExistingPath);
  corpus->excludes(train)->excludes(test);
  train->needs(test);
  test->needs(train);
  cmd->add_option("--folds", o.folds)->check(CLI::Range(2, 1000))->capture_default_str();
  cmd->add_flag("--per-fold-alpha", o.per_fold_alpha, "Tune alpha on each fold separately");
  cmd->add_option("--report", o.report, "Also write the report to this file");
  add_model_options(cmd, o.model);
}

int run_eval(const EvalOptions& o, const GlobalOptions& g) {
  if (o.corpus.empty() && o.train_corpus.empty())
    throw UsageError("eval needs --corpus, or --train-corpus with --test-corpus");
  sbd::EvalReport report;
  std::optional<sbd::EmbeddingTable> pretrained;
  auto config_for = [&](const sbd::Corpus& c) {
    sbd::EvalConfig cfg;
    cfg.segmenter = segmenter_config(o.model, resolve_features(o.model, c), g.seed);
    if (!o.model.embeddings.empty()) {
      pretrained = sbd::load_embeddings(fs::path(o.model.embeddings));
      cfg.segmenter.pretrained_words = &*pretrained;
    }
    cfg.folds = o.folds;
    cfg.jobs = g.jobs;
    cfg.per_fold_alpha = o.per_fold_alpha;
    return cfg;
  };

  if (!o.corpus.empty()) {
    const sbd::Corpus corpus = sbd::read_corpus(o.corpus);
    spdlog::info("{}-fold cross validation on {} ({} texts)", o.folds, corpus.name, corpus.texts.size());
    report = sbd::cross_validated_eval(corpus, config_for(corpus));
  } else {
    const sbd::Corpus train = sbd::read_corpus(o.train_corpus);
    const sbd::Corpus test = sbd::read_corpus(o.test_corpus);
    spdlog::info("training on {}, testing on {}", train.name, test.name);
    report = sbd::robustness_eval(train, test, config_for(train));
  }

  const std::string text = sbd::format_report_table(report) + "\ncorpus\tvariant\tfeatures\talpha\tP\tR\tF1\n" +
                           sbd::format_report_line(report) + '\n';
  std::cout << text;
  if (!o.report.empty()) {
    std::ofstream out(o.report);
    if (!out) throw sbd::DataError("cannot write '" + o.report + "'");
    out << text;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// config files

/// `key = value` lines of the --config file as `--key=value` arguments.
std::vector<std::string> config_arguments(const std::string& path) {
  std::vector<std::string> args;
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty()) throw UsageError(path + ": sections are not supported ('" + item.fullname() + "')");
    for (const auto& v : item.inputs) args.push_back("--" + item.name + "=" + v);
    if (item.inputs.empty()) args.push_back("--" + item.name);
  }
  return args;
}

/// Splices config-file arguments in right after the subcommand so that
/// explicit flags, which come later, take precedence.
std::vector<std::string> with_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  if (!fs::is_regular_file(path)) throw UsageError("config file '" + path + "' does not exist");
  const auto extra = config_arguments(path);
  std::size_t at = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "train" || args[i] == "segment" || args[i] == "eval" || args[i] == "synth") {
      at = i + 1;
      break;
    }
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_logger_st("sbd");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);

  CLI::App app{"Sentence boundary detection for speech transcripts"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Master random seed")->capture_default_str();
  app.add_option("--config", g.config, "File of 'key = value' lines; flags override it");
  app.add_option("--jobs", g.jobs, "Folds trained in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--log-level", g.log_level)
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  SynthOptions synth;
  TrainOptions train;
  SegmentOptions segment;
  EvalOptions eval;
  add_synth(app, synth);
  add_train(app, train);
  add_segment(app, segment);
  add_eval(app, eval);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = with_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  spdlog::set_level(spdlog::level::from_str(g.log_level));
  const auto* active = app.get_subcommands().front();
  spdlog::info("{} seed={} jobs={}\n{}", active->get_name(), g.seed, g.jobs, active->config_to_str(true, false));

  try {
    if (app.got_subcommand("synth")) return run_synth(synth, g);
    if (app.got_subcommand("train")) return run_train(train, g);
    if (app.got_subcommand("segment")) return run_segment(segment, g);
    return run_eval(eval, g);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const sbd::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
