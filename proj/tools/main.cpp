#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hermit/hermit.hpp"
#include "hermit/nlubm_json.hpp"

namespace {

using nlohmann::json;

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  hermit::check_data(in.is_open(), "cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0')
      << hermit::fnv1a64(bytes.data(), bytes.size());
  return hex.str();
}

// What a command read, wrote, and measured, written as JSON so runs can be
// compared byte for byte. Deliberately carries no timestamps.
struct RunManifest {
  std::string command;
  json settings = json::object();
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  json metrics = json::object();

  void add_input(const std::string& path) { inputs[path] = file_checksum(path); }
  void add_output(const std::string& path) { outputs[path] = file_checksum(path); }

  json to_json() const {
    json j;
    j["command"] = command;
    j["settings"] = settings;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["metrics"] = metrics;
    return j;
  }

  void write(const std::string& path) const {
    std::ofstream os(path);
    hermit::check_data(os.is_open(), "cannot write manifest: " + path);
    os << to_json().dump(2) << "\n";
  }
};

hermit::Corpus load_conll(const std::string& path) {
  std::ifstream in(path);
  hermit::check_data(in.is_open(), "cannot open corpus file: " + path);
  return hermit::parse_conll(in, path);
}

json flat_metrics(const hermit::MetricsReport& report) {
  json j = json::object();
  for (const auto& [key, value] : report.flatten()) j[key] = value;
  return j;
}

void print_report(std::ostream& os, const hermit::MetricsReport& r) {
  auto line = [&](const std::string& name, const hermit::ConfusionCounts& c,
                  double em, bool has_em) {
    os << std::left << std::setw(14) << name << std::right << std::fixed
       << std::setprecision(4) << std::setw(10) << c.precision()
       << std::setw(10) << c.recall() << std::setw(10) << c.f1();
    if (has_em)
      os << std::setw(10) << em;
    os << "\n";
  };
  os << std::left << std::setw(14) << "task" << std::right << std::setw(10)
     << "P" << std::setw(10) << "R" << std::setw(10) << "F1" << std::setw(10)
     << "EM" << "\n";
  line("da", r.da.spans, r.da.exact, true);
  line("fr", r.fr.spans, r.fr.exact, true);
  line("ar", r.ar.spans, r.ar.exact, true);
  line("combined", r.combined.spans, r.combined.exact, true);
  line("intent", r.intent, 0, false);
  line("entity", r.entity, 0, false);
  line("intent+entity", r.intent_entity, 0, false);
}

struct ModelFlags {
  std::string embedding_mode = "trainable";
  std::size_t embedding_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t attn_dim = 0;
  std::string preset = "full";
  std::uint64_t seed = 1;
  std::string embeddings_file;

  void attach(CLI::App* cmd) {
    cmd->add_option("--embedding-mode", embedding_mode,
                    "trainable, precomputed, or fixed-random")
        ->capture_default_str();
    cmd->add_option("--embedding-dim", embedding_dim, "embedding width")
        ->capture_default_str();
    cmd->add_option("--hidden-dim", hidden_dim, "LSTM hidden width per direction")
        ->capture_default_str();
    cmd->add_option("--attn-dim", attn_dim,
                    "attention projection width (0 uses hidden-dim)")
        ->capture_default_str();
    cmd->add_option("--preset", preset,
                    "full, no-sa, no-sa-cn, no-sa-crf, or no-sa-cn-crf")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "parameter initialization seed")
        ->capture_default_str();
    cmd->add_option("--embeddings", embeddings_file,
                    "embedding file for precomputed mode");
  }

  hermit::HermitConfig to_config() const {
    hermit::HermitConfig cfg;
    cfg.embedding_mode = hermit::embedding_mode_from_string(embedding_mode);
    cfg.embedding_dim = embedding_dim;
    cfg.hidden_dim = hidden_dim;
    cfg.attn_dim = attn_dim;
    cfg.seed = seed;
    cfg.apply(hermit::ablation_preset_from_string(preset));
    return cfg;
  }

  json to_json() const {
    json j;
    j["embedding_mode"] = embedding_mode;
    j["embedding_dim"] = embedding_dim;
    j["hidden_dim"] = hidden_dim;
    j["attn_dim"] = attn_dim;
    j["preset"] = preset;
    j["seed"] = seed;
    return j;
  }
};

struct TrainFlags {
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;
  std::string monitor = "combined-f1";
  double target_metric = 1.0;
  bool no_shuffle = false;
  std::uint64_t shuffle_seed = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", learning_rate, "Adam learning rate")
        ->capture_default_str();
    cmd->add_option("--clip-norm", clip_norm,
                    "global gradient norm ceiling (0 disables)")
        ->capture_default_str();
    cmd->add_option("--batch-size", batch_size, "sentences per update")
        ->capture_default_str();
    cmd->add_option("--epochs", max_epochs, "maximum training epochs")
        ->capture_default_str();
    cmd->add_option("--patience", patience,
                    "epochs without improvement before stopping (0 disables)")
        ->capture_default_str();
    cmd->add_option("--monitor", monitor,
                    "combined-f1, combined-em, or dev-loss")
        ->capture_default_str();
    cmd->add_option("--target", target_metric,
                    "stop once the monitored metric reaches this (0 disables)")
        ->capture_default_str();
    cmd->add_flag("--no-shuffle", no_shuffle, "keep corpus order every epoch");
    cmd->add_option("--shuffle-seed", shuffle_seed, "epoch shuffling seed")
        ->capture_default_str();
  }

  hermit::TrainConfig to_config() const {
    hermit::TrainConfig cfg;
    cfg.learning_rate = learning_rate;
    cfg.clip_norm = clip_norm;
    cfg.batch_size = batch_size;
    cfg.max_epochs = max_epochs;
    cfg.patience = patience;
    cfg.monitor = hermit::monitor_from_string(monitor);
    cfg.target_metric = target_metric;
    cfg.shuffle = !no_shuffle;
    cfg.shuffle_seed = shuffle_seed;
    return cfg;
  }

  json to_json() const {
    json j;
    j["lr"] = learning_rate;
    j["clip_norm"] = clip_norm;
    j["batch_size"] = batch_size;
    j["epochs"] = max_epochs;
    j["patience"] = patience;
    j["monitor"] = monitor;
    j["target"] = target_metric;
    j["shuffle"] = !no_shuffle;
    j["shuffle_seed"] = shuffle_seed;
    return j;
  }
};

struct TrainArgs {
  std::string data_path;
  std::string dev_path;
  std::string out_path = "model.bin";
  std::string manifest_path;
  bool quiet = false;
  ModelFlags model;
  TrainFlags train;
};

int cmd_train(const TrainArgs& args) {
  hermit::Corpus train_set = load_conll(args.data_path);
  hermit::Corpus dev_set =
      args.dev_path.empty() ? train_set : load_conll(args.dev_path);

  hermit::Corpus label_source = train_set;
  if (!args.dev_path.empty())
    label_source.insert(label_source.end(), dev_set.begin(), dev_set.end());
  hermit::LabelVocabularies labels = hermit::collect_labels(label_source);

  const hermit::HermitConfig cfg = args.model.to_config();
  hermit::HermitModel model =
      hermit::HermitModel::build(cfg, labels.da, labels.fr, labels.ar,
                                 hermit::collect_tokens(label_source));

  if (cfg.embedding_mode == hermit::EmbeddingMode::precomputed) {
    hermit::check_data(!args.model.embeddings_file.empty(),
                       "precomputed embedding mode needs --embeddings");
    model.embeddings().load_embedding_file(args.model.embeddings_file);
  }

  const hermit::TrainConfig train_cfg = args.train.to_config();
  hermit::EpochCallback on_epoch;
  if (!args.quiet) {
    on_epoch = [](const hermit::EpochRecord& rec) {
      std::cout << "epoch " << std::setw(4) << rec.epoch << "  loss "
                << std::fixed << std::setprecision(4) << rec.train_loss
                << "  dev-f1 " << rec.dev_f1 << "  dev-em " << rec.dev_em
                << "\n";
    };
  }
  const hermit::TrainHistory history = fit(model, train_set, dev_set,
                                           train_cfg, on_epoch);
  hermit::save_checkpoint(args.out_path, model);

  const hermit::MetricsReport report =
      hermit::evaluate(dev_set, [&] {
        hermit::Corpus preds;
        for (const auto& s : dev_set) preds.push_back(model.annotate(s.tokens, s.id));
        return preds;
      }());
  std::cout << "best epoch " << history.best_epoch << " ("
            << to_string(train_cfg.monitor) << " " << std::fixed
            << std::setprecision(4) << history.best_metric << ")\n";
  print_report(std::cout, report);
  std::cout << "model written to " << args.out_path << "\n";

  if (!args.manifest_path.empty()) {
    RunManifest m;
    m.command = "train";
    m.settings["model"] = args.model.to_json();
    m.settings["train"] = args.train.to_json();
    m.add_input(args.data_path);
    if (!args.dev_path.empty()) m.add_input(args.dev_path);
    if (!args.model.embeddings_file.empty())
      m.add_input(args.model.embeddings_file);
    m.add_output(args.out_path);
    m.metrics = flat_metrics(report);
    m.metrics["best_epoch"] = history.best_epoch;
    m.write(args.manifest_path);
  }
  return 0;
}

struct TagArgs {
  std::string model_path;
  std::string data_path;
  std::string text_path;
  std::string out_path;
  std::string embeddings_file;
  std::string manifest_path;
};

void write_merged(std::ostream& os, const hermit::AnnotatedSentence& gold,
                  const hermit::TriPrediction& pred) {
  os << "# id: " << gold.id << "\n";
  for (std::size_t t = 0; t < gold.tokens.size(); ++t) {
    os << gold.tokens[t] << "\t" << gold.da_tags[t] << "\t" << gold.fr_tags[t]
       << "\t" << gold.ar_tags[t] << "\t" << pred.da_tags[t] << "\t"
       << pred.fr_tags[t] << "\t" << pred.ar_tags[t] << "\n";
  }
  os << "\n";
}

int cmd_tag(const TagArgs& args) {
  hermit::check_data(args.data_path.empty() != args.text_path.empty(),
                     "tag needs exactly one of --data or --text");
  hermit::HermitModel model = hermit::load_checkpoint(args.model_path);
  if (model.config().embedding_mode == hermit::EmbeddingMode::precomputed) {
    hermit::check_data(!args.embeddings_file.empty(),
                       "this model needs --embeddings at tagging time");
    model.embeddings().load_embedding_file(args.embeddings_file);
  }

  std::ofstream file_out;
  if (!args.out_path.empty()) {
    file_out.open(args.out_path);
    hermit::check_data(file_out.is_open(),
                       "cannot open output file: " + args.out_path);
  }
  std::ostream& os = args.out_path.empty() ? std::cout : file_out;

  if (!args.data_path.empty()) {
    const hermit::Corpus gold = load_conll(args.data_path);
    for (const auto& s : gold)
      write_merged(os, s, model.predict(s.tokens, s.id));
  } else {
    std::ifstream in(args.text_path);
    hermit::check_data(in.is_open(), "cannot open text file: " + args.text_path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      const auto tokens = hermit::tokenize_whitespace(line);
      if (tokens.empty()) continue;
      const std::string id = "t" + std::to_string(n++);
      serialize_conll(os, model.annotate(tokens, id));
    }
  }

  if (!args.manifest_path.empty()) {
    RunManifest m;
    m.command = "tag";
    m.add_input(args.model_path);
    if (!args.data_path.empty()) m.add_input(args.data_path);
    if (!args.text_path.empty()) m.add_input(args.text_path);
    if (!args.embeddings_file.empty()) m.add_input(args.embeddings_file);
    if (!args.out_path.empty()) m.add_output(args.out_path);
    m.write(args.manifest_path);
  }
  return 0;
}

struct EvalArgs {
  std::string gold_path;
  std::string pred_path;
  std::string merged_path;
  std::string compare_path;
  std::string report_path;
  std::string manifest_path;
};

double sentence_combined_f1(const hermit::AnnotatedSentence& gold,
                            const hermit::AnnotatedSentence& pred) {
  hermit::ConfusionCounts c;
  c += hermit::span_counts_row(gold.da_tags, pred.da_tags);
  c += hermit::span_counts_row(gold.fr_tags, pred.fr_tags);
  c += hermit::span_counts_row(gold.ar_tags, pred.ar_tags);
  return c.f1();
}

int cmd_eval(const EvalArgs& args) {
  hermit::Corpus gold, pred;
  if (!args.merged_path.empty()) {
    hermit::check_data(args.gold_path.empty() && args.pred_path.empty(),
                       "--merged excludes --gold and --pred");
    std::ifstream in(args.merged_path);
    hermit::check_data(in.is_open(),
                       "cannot open corpus file: " + args.merged_path);
    hermit::ParsedConll parsed = hermit::parse_conll_full(in, args.merged_path);
    hermit::check_data(parsed.has_predictions,
                       args.merged_path + ": expected 7-column input");
    gold = std::move(parsed.gold);
    pred = std::move(parsed.predicted);
  } else {
    hermit::check_data(!args.gold_path.empty() && !args.pred_path.empty(),
                       "eval needs --gold and --pred (or --merged)");
    gold = load_conll(args.gold_path);
    pred = load_conll(args.pred_path);
  }

  const hermit::MetricsReport report = hermit::evaluate(gold, pred);
  print_report(std::cout, report);

  json extra = json::object();
  if (!args.compare_path.empty()) {
    const hermit::Corpus other = load_conll(args.compare_path);
    hermit::check_aligned(gold, other);
    std::vector<hermit::PairedSample> pairs;
    for (std::size_t i = 0; i < gold.size(); ++i)
      pairs.push_back({sentence_combined_f1(gold[i], other[i]),
                       sentence_combined_f1(gold[i], pred[i])});
    const hermit::WilcoxonResult w = hermit::wilcoxon_signed_rank(pairs);
    std::cout << "paired test vs " << args.compare_path << ": n=" << w.n
              << " W=" << w.w << " Z=" << std::fixed << std::setprecision(3)
              << w.z << " p=" << std::setprecision(5) << w.p
              << (w.exact ? " (exact)" : " (normal approximation)") << "\n";
    extra["wilcoxon"] = {{"n", w.n},         {"w", w.w},
                         {"z", w.z},         {"p", w.p},
                         {"exact", w.exact}, {"p_normal", w.p_normal}};
  }

  if (!args.report_path.empty()) {
    std::ofstream os(args.report_path);
    hermit::check_data(os.is_open(),
                       "cannot write report: " + args.report_path);
    json j = flat_metrics(report);
    for (auto& [k, v] : extra.items()) j[k] = v;
    os << j.dump(2) << "\n";
  }

  if (!args.manifest_path.empty()) {
    RunManifest m;
    m.command = "eval";
    if (!args.merged_path.empty()) m.add_input(args.merged_path);
    if (!args.gold_path.empty()) m.add_input(args.gold_path);
    if (!args.pred_path.empty()) m.add_input(args.pred_path);
    if (!args.compare_path.empty()) m.add_input(args.compare_path);
    if (!args.report_path.empty()) m.add_output(args.report_path);
    m.metrics = flat_metrics(report);
    m.write(args.manifest_path);
  }
  return 0;
}

struct CrossvalArgs {
  std::string data_path;
  std::size_t k = 10;
  std::uint64_t split_seed = 1;
  std::size_t jobs = 1;
  std::string records_path;
  std::string report_path;
  std::string manifest_path;
  bool quiet = false;
  ModelFlags model;
  TrainFlags train;
};

int cmd_crossval(const CrossvalArgs& args) {
  const hermit::Corpus corpus = load_conll(args.data_path);

  hermit::CrossvalConfig cfg;
  cfg.k = args.k;
  cfg.split_seed = args.split_seed;
  cfg.jobs = args.jobs;
  cfg.model = args.model.to_config();
  cfg.train = args.train.to_config();
  if (cfg.model.embedding_mode == hermit::EmbeddingMode::precomputed) {
    hermit::check_data(!args.model.embeddings_file.empty(),
                       "precomputed embedding mode needs --embeddings");
    const std::string path = args.model.embeddings_file;
    cfg.prepare_model = [path](hermit::HermitModel& m) {
      m.embeddings().load_embedding_file(path);
    };
  }

  std::function<void(const hermit::FoldResult&)> on_fold;
  if (!args.quiet) {
    on_fold = [](const hermit::FoldResult& fr) {
      std::cout << "fold " << fr.fold << "  combined-f1 " << std::fixed
                << std::setprecision(4) << fr.report.combined.spans.f1()
                << "  combined-em " << fr.report.combined.exact << "\n";
    };
  }
  const hermit::CrossvalResult result =
      hermit::run_crossval(corpus, cfg, on_fold);

  std::cout << std::left << std::setw(26) << "metric" << std::right
            << std::setw(10) << "mean" << std::setw(10) << "std" << "\n";
  for (const auto& [name, mean, std_dev] : result.aggregate) {
    std::cout << std::left << std::setw(26) << name << std::right << std::fixed
              << std::setprecision(4) << std::setw(10) << mean << std::setw(10)
              << std_dev << "\n";
  }

  if (!args.records_path.empty()) {
    std::ofstream os(args.records_path);
    hermit::check_data(os.is_open(),
                       "cannot write records: " + args.records_path);
    for (const auto& [name, mean, std_dev] : result.aggregate) {
      std::string task = name, metric = name;
      const auto dot = name.find('.');
      task = name.substr(0, dot);
      metric = name.substr(dot + 1);
      os << task << " " << metric << " " << std::fixed << std::setprecision(6)
         << mean << " " << std_dev << "\n";
    }
  }

  if (!args.report_path.empty()) {
    json j;
    j["k"] = args.k;
    json folds = json::array();
    for (const auto& fr : result.folds) {
      json f = flat_metrics(fr.report);
      f["fold"] = fr.fold;
      f["best_epoch"] = fr.history.best_epoch;
      folds.push_back(f);
    }
    j["folds"] = folds;
    json agg = json::object();
    for (const auto& [name, mean, std_dev] : result.aggregate)
      agg[name] = {{"mean", mean}, {"std", std_dev}};
    j["aggregate"] = agg;
    std::ofstream os(args.report_path);
    hermit::check_data(os.is_open(), "cannot write report: " + args.report_path);
    os << j.dump(2) << "\n";
  }

  if (!args.manifest_path.empty()) {
    RunManifest m;
    m.command = "crossval";
    m.settings["model"] = args.model.to_json();
    m.settings["train"] = args.train.to_json();
    m.settings["k"] = args.k;
    m.settings["split_seed"] = args.split_seed;
    m.add_input(args.data_path);
    if (!args.model.embeddings_file.empty())
      m.add_input(args.model.embeddings_file);
    if (!args.records_path.empty()) m.add_output(args.records_path);
    if (!args.report_path.empty()) m.add_output(args.report_path);
    json agg = json::object();
    for (const auto& [name, mean, std_dev] : result.aggregate)
      agg[name] = {{"mean", mean}, {"std", std_dev}};
    m.metrics = agg;
    m.write(args.manifest_path);
  }
  return 0;
}

struct ConvertArgs {
  std::string in_path;
  std::string out_path;
  bool strip_final_punct = false;
  std::string manifest_path;
};

int cmd_convert(const ConvertArgs& args) {
  std::ifstream in(args.in_path);
  hermit::check_data(in.is_open(), "cannot open input file: " + args.in_path);
  const auto records = hermit::parse_nlubm_jsonl(in, args.in_path);
  hermit::check_data(!records.empty(), args.in_path + ": no records found");

  std::ofstream os(args.out_path);
  hermit::check_data(os.is_open(), "cannot open output file: " + args.out_path);
  for (const auto& r : records)
    serialize_conll(os, hermit::convert_nlubm(r, args.strip_final_punct));
  os.close();
  std::cout << "converted " << records.size() << " records to "
            << args.out_path << "\n";

  if (!args.manifest_path.empty()) {
    RunManifest m;
    m.command = "convert";
    m.settings["strip_final_punct"] = args.strip_final_punct;
    m.add_input(args.in_path);
    m.add_output(args.out_path);
    m.metrics["records"] = records.size();
    m.write(args.manifest_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical multi-task tagger for dialogue acts, frames, "
               "and frame arguments"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model");
  train->set_config("--config");
  train->add_option("--data", train_args.data_path, "training corpus (4-column)")
      ->required();
  train->add_option("--dev", train_args.dev_path,
                    "dev corpus for early stopping (defaults to --data)");
  train->add_option("--out", train_args.out_path, "checkpoint output path")
      ->capture_default_str();
  train->add_option("--manifest", train_args.manifest_path, "run manifest path");
  train->add_flag("--quiet", train_args.quiet, "suppress per-epoch lines");
  train_args.model.attach(train);
  train_args.train.attach(train);

  TagArgs tag_args;
  CLI::App* tag = app.add_subcommand("tag", "tag sentences with a trained model");
  tag->set_config("--config");
  tag->add_option("--model", tag_args.model_path, "model checkpoint")->required();
  tag->add_option("--data", tag_args.data_path,
                  "annotated corpus; output keeps gold columns");
  tag->add_option("--text", tag_args.text_path,
                  "plain text, one whitespace-tokenized sentence per line");
  tag->add_option("--out", tag_args.out_path, "output path (default stdout)");
  tag->add_option("--embeddings", tag_args.embeddings_file,
                  "embedding file for precomputed-mode models");
  tag->add_option("--manifest", tag_args.manifest_path, "run manifest path");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "score predictions against gold");
  eval->set_config("--config");
  eval->add_option("--gold", eval_args.gold_path, "gold corpus (4-column)");
  eval->add_option("--pred", eval_args.pred_path, "predicted corpus (4-column)");
  eval->add_option("--merged", eval_args.merged_path,
                   "single 7-column gold+prediction file");
  eval->add_option("--compare", eval_args.compare_path,
                   "second prediction file for a paired significance test");
  eval->add_option("--report", eval_args.report_path, "JSON metrics output");
  eval->add_option("--manifest", eval_args.manifest_path, "run manifest path");

  CrossvalArgs cv_args;
  CLI::App* crossval =
      app.add_subcommand("crossval", "k-fold cross-validation");
  crossval->set_config("--config");
  crossval->add_option("--data", cv_args.data_path, "corpus (4-column)")
      ->required();
  crossval->add_option("--k", cv_args.k, "number of folds")->capture_default_str();
  crossval->add_option("--split-seed", cv_args.split_seed, "fold shuffling seed")
      ->capture_default_str();
  crossval->add_option("--jobs", cv_args.jobs, "folds trained in parallel")
      ->capture_default_str();
  crossval->add_option("--records", cv_args.records_path,
                       "aggregate text output: task metric mean std");
  crossval->add_option("--report", cv_args.report_path, "JSON per-fold output");
  crossval->add_option("--manifest", cv_args.manifest_path, "run manifest path");
  crossval->add_flag("--quiet", cv_args.quiet, "suppress per-fold lines");
  cv_args.model.attach(crossval);
  cv_args.train.attach(crossval);

  ConvertArgs convert_args;
  CLI::App* convert =
      app.add_subcommand("convert", "convert JSONL utterances to the corpus format");
  convert->add_option("--in", convert_args.in_path, "JSONL input")->required();
  convert->add_option("--out", convert_args.out_path, "corpus output")->required();
  convert->add_flag("--strip-final-punct", convert_args.strip_final_punct,
                    "leave a trailing punctuation token outside the "
                    "scenario and action spans");
  convert->add_option("--manifest", convert_args.manifest_path,
                      "run manifest path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(train)) return cmd_train(train_args);
    if (app.got_subcommand(tag)) return cmd_tag(tag_args);
    if (app.got_subcommand(eval)) return cmd_eval(eval_args);
    if (app.got_subcommand(crossval)) return cmd_crossval(cv_args);
    if (app.got_subcommand(convert)) return cmd_convert(convert_args);
  } catch (const hermit::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "internal contract violation: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
