#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "xmodal/atomic_file.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/embedding_store.hpp"
#include "xmodal/error.hpp"
#include "xmodal/gradcheck.hpp"
#include "xmodal/retrieval.hpp"
#include "xmodal/synthetic.hpp"
#include "xmodal/tagging.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal::cli {

namespace fs = std::filesystem;

namespace {

// Marks failures of the tool's own checks on user input (exit code 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void require_file(const std::string& flag, const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": no such file '" + path + "'");
}

void emit(const std::string& out_path, const std::string& data, std::ostream& out) {
  if (out_path.empty()) {
    out << data;
  } else {
    write_file_atomically(out_path, data);
  }
}

EmbeddingTable load_embeddings(const std::string& path, Modality tsv_modality, bool normalize) {
  auto table = load_table_auto(path, tsv_modality);
  if (table.modality() != tsv_modality) {
    throw Error(ErrorCode::ModalityMismatch, path + " holds " + std::string(to_string(table.modality())) +
                                                 " embeddings, expected " + std::string(to_string(tsv_modality)));
  }
  return normalize ? l2_normalized(table) : table;
}

TableFormat format_for(const std::string& path) {
  return fs::path(path).extension() == ".tsv" ? TableFormat::tsv : TableFormat::binary;
}

EmbeddingTable project_table(const ProjectionParams<float>& params, const EmbeddingTable& texts) {
  if (texts.dim() != params.input_dim) {
    throw Error(ErrorCode::DimensionMismatch, "text embeddings are " + std::to_string(texts.dim()) +
                                                  "-d, checkpoint expects " + std::to_string(params.input_dim));
  }
  return EmbeddingTable(texts.ids(), project(params, texts.vectors()), Modality::text, texts.language());
}

struct TrainArgs {
  std::string pairs, text_emb, image_emb, loss, config, out, resume, history, language;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, log_every;
  bool l2_normalize = false;
};

int cmd_train(const TrainArgs& a, std::ostream& err) {
  require_file("--pairs", a.pairs);
  require_file("--text-emb", a.text_emb);
  require_file("--image-emb", a.image_emb);
  TrainConfig config;
  if (!a.config.empty()) {
    require_file("--config", a.config);
    apply_config_file(config, a.config);
  }
  if (!a.loss.empty()) apply_config_value(config, "loss", a.loss);
  if (a.seed) apply_config_value(config, "seed", std::to_string(*a.seed));
  if (a.epochs) config.epochs = *a.epochs;
  if (a.batch_size) config.batch_size = *a.batch_size;
  if (a.log_every) config.log_every = *a.log_every;
  config.checkpoint_path = a.out;

  const auto manifest = load_manifest(a.pairs);
  const auto texts = load_embeddings(a.text_emb, Modality::text, a.l2_normalize);
  const auto images = load_embeddings(a.image_emb, Modality::image, false);
  std::optional<std::string> language;
  if (!a.language.empty()) language = a.language;
  const auto dataset = assemble_dataset(manifest, texts, images, Split::train, language);
  config.projection.input_dim = dataset.texts.cols();

  auto log = [&err](std::string_view line) { err << "[train] " << line << '\n'; };
  log("pairs=" + std::to_string(dataset.size()) + " loss=" + std::string(to_string(config.loss)) +
      " epochs=" + std::to_string(config.epochs) + " batch=" + std::to_string(config.batch_size));
  const auto result = a.resume.empty() ? train(dataset, config, log) : resume(a.resume, dataset, config, log);
  // train() writes the final checkpoint to config.checkpoint_path; a resume
  // that had nothing left to do still has to produce the output file.
  if (result.history.epochs.empty()) save_checkpoint(a.out, result.params, &result.optimizer);

  std::ostringstream history;
  write_history_tsv(history, result.history);
  write_file_atomically(a.history.empty() ? a.out + ".history.tsv" : a.history, history.str());
  log("degenerate denominators: " + std::to_string(result.history.degenerate_events));
  return 0;
}

int cmd_project(const std::string& checkpoint, const std::string& text_emb, const std::string& out_path,
                bool normalize) {
  require_file("--checkpoint", checkpoint);
  require_file("--text-emb", text_emb);
  const auto ck = load_checkpoint(checkpoint);
  const auto projected = project_table(ck.params, load_embeddings(text_emb, Modality::text, normalize));
  save_table(projected, out_path, format_for(out_path));
  return 0;
}

struct RetrieveArgs {
  std::string checkpoint, image_emb, query_emb, metric = "cosine", out;
  std::optional<std::size_t> top_k;
  std::optional<double> threshold;
  bool l2_normalize = false;
};

Metric metric_flag(const std::string& s) {
  auto m = parse_metric(s);
  if (!m) throw UsageError("--metric must be cosine or sqdist, got '" + s + "'");
  return *m;
}

int cmd_retrieve(const RetrieveArgs& a, std::ostream& out, std::ostream& err) {
  require_file("--checkpoint", a.checkpoint);
  require_file("--image-emb", a.image_emb);
  require_file("--query-emb", a.query_emb);
  const auto metric = metric_flag(a.metric);
  const auto ck = load_checkpoint(a.checkpoint);
  const auto images = load_embeddings(a.image_emb, Modality::image, false);
  const auto queries = project_table(ck.params, load_embeddings(a.query_emb, Modality::text, a.l2_normalize));
  const auto index = RetrievalIndex::build(images);
  if (index.empty()) err << "[retrieve] warning: image table is empty\n";

  std::string data = "query_id\trank\timage_id\tscore\n";
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto ranked = rank(queries.row(q), index, metric, a.top_k, a.threshold);
    for (std::size_t r = 0; r < ranked.entries.size(); ++r) {
      data += queries.ids()[q] + '\t' + std::to_string(r + 1) + '\t' + ranked.entries[r].image_id + '\t' +
              shortest(ranked.entries[r].score) + '\n';
    }
  }
  emit(a.out, data, out);
  return 0;
}

struct EvalArgs {
  std::string checkpoint, pairs, text_emb, image_emb, metric = "cosine", split = "test", out;
  std::size_t k = 10;
  bool l2_normalize = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_file("--checkpoint", a.checkpoint);
  require_file("--pairs", a.pairs);
  require_file("--text-emb", a.text_emb);
  require_file("--image-emb", a.image_emb);
  const auto metric = metric_flag(a.metric);
  const auto split = parse_split(a.split);
  if (!split) throw UsageError("--split must be train, dev or test");
  if (a.k == 0) throw UsageError("--k must be positive");
  const auto ck = load_checkpoint(a.checkpoint);
  const auto texts = load_embeddings(a.text_emb, Modality::text, a.l2_normalize);
  const auto images = load_embeddings(a.image_emb, Modality::image, false);
  const auto dataset = assemble_dataset(load_manifest(a.pairs), texts, images, *split);
  if (texts.dim() != ck.params.input_dim) {
    throw Error(ErrorCode::DimensionMismatch, "text embeddings do not match the checkpoint input width");
  }
  const auto report = evaluate(ck.params, dataset, images, a.k, metric);
  std::ostringstream s;
  write_recall_report(s, report);
  emit(a.out, s.str(), out);
  return 0;
}

struct TagArgs {
  std::string checkpoint, image_emb, image_id, source_tags, vocab_emb, source_emb, out;
  double w1 = 0.65, w2 = 0.35;
  bool l2_normalize = false;
};

std::vector<std::pair<std::string, std::string>> read_source_tags(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> tags;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw Error(ErrorCode::MalformedRow, path + " line " + std::to_string(ln) + ": expected source_tag<TAB>embedding_id");
    }
    tags.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return tags;
}

int cmd_tag(const TagArgs& a, std::ostream& out) {
  require_file("--checkpoint", a.checkpoint);
  require_file("--image-emb", a.image_emb);
  require_file("--source-tags", a.source_tags);
  require_file("--vocab-emb", a.vocab_emb);
  if (!a.source_emb.empty()) require_file("--source-emb", a.source_emb);
  const auto ck = load_checkpoint(a.checkpoint);
  const auto images = load_embeddings(a.image_emb, Modality::image, false);
  const auto image_row = images.find(a.image_id);
  if (!image_row) throw Error(ErrorCode::UnresolvedId, a.image_id);

  const auto vocab_raw = load_embeddings(a.vocab_emb, Modality::text, a.l2_normalize);
  const auto vocab = TagVocab::from_table(project_table(ck.params, vocab_raw));
  const auto source_table = a.source_emb.empty()
                                ? project_table(ck.params, vocab_raw)
                                : project_table(ck.params, load_embeddings(a.source_emb, Modality::text, a.l2_normalize));
  std::vector<SourceTag> sources;
  for (const auto& [tag, emb_id] : read_source_tags(a.source_tags)) {
    auto row = source_table.find(emb_id);
    if (!row) throw Error(ErrorCode::UnresolvedId, emb_id);
    auto v = source_table.row(*row);
    sources.push_back({tag, std::vector<float>(v.begin(), v.end())});
  }
  const auto assignment = assign_tags(images.row(*image_row), sources, vocab, TaggingWeights{a.w1, a.w2});
  std::string data = "source_tag\ttarget_tag\tscore\trank_considered\n";
  for (const auto& p : assignment.pairs) {
    data += p.source_tag + '\t' + p.target_tag + '\t' + shortest(p.score) + '\t' + std::to_string(p.rank_considered) + '\n';
  }
  emit(a.out, data, out);
  return 0;
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string loss = "both";
  std::optional<std::size_t> epochs;
  std::size_t concepts = 500;
  std::size_t k = 10;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<LossKind> losses;
  if (a.loss == "m3l" || a.loss == "both") losses.push_back(LossKind::m3l);
  if (a.loss == "patr" || a.loss == "both") losses.push_back(LossKind::patr);
  if (losses.empty()) throw UsageError("--loss must be m3l, patr or both");
  SyntheticConfig data_config;
  data_config.concepts = a.concepts;
  data_config.seed = a.seed;
  const auto data = make_synthetic_data(data_config);
  std::string table = "loss\trecall@" + std::to_string(a.k) + "_A_heldout\trecall@" + std::to_string(a.k) +
                      "_B_unseen\ttext_dispersion\n";
  for (auto kind : losses) {
    auto config = synthetic_train_config(data_config, kind, a.seed);
    if (a.epochs) config.epochs = *a.epochs;
    const auto result = run_synthetic_benchmark(data, config, a.k, Metric::cosine);
    err << "[synth-bench] " << to_string(kind) << " finished in " << std::fixed << std::setprecision(1)
        << result.seconds << " s\n";
    table += std::string(to_string(kind)) + '\t' + shortest(result.recall_heldout_a) + '\t' +
             shortest(result.recall_unseen_b) + '\t' + shortest(result.dispersion) + '\n';
  }
  emit(a.out, table, out);
  return 0;
}

int cmd_gradcheck(std::size_t trials, std::uint64_t seed, std::ostream& out) {
  GradcheckOptions options;
  options.trials = trials;
  options.seed = seed;
  const auto report = run_gradcheck(options);
  out << "suite\ttrials\tfailures\tmax_rel_error\n";
  for (const auto& s : report.suites) {
    out << s.name << '\t' << s.trials << '\t' << s.failures << '\t' << shortest(s.max_error) << '\n';
  }
  out << (report.passed() ? "PASS" : "FAIL") << '\n';
  return report.passed() ? 0 : 2;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NumericalFailure:
    case ErrorCode::TraceMismatch:
      return 2;
    default:
      return 1;
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal text projection training, retrieval and tagging"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train the text projection head");
  train_cmd->add_option("--pairs", train_args.pairs, "Caption/image manifest TSV")->required();
  train_cmd->add_option("--text-emb", train_args.text_emb, "Caption embeddings")->required();
  train_cmd->add_option("--image-emb", train_args.image_emb, "Image embeddings")->required();
  train_cmd->add_option("--loss", train_args.loss, "m3l or patr");
  train_cmd->add_option("--config", train_args.config, "key = value config file");
  train_cmd->add_option("--seed", train_args.seed);
  train_cmd->add_option("--epochs", train_args.epochs);
  train_cmd->add_option("--batch-size", train_args.batch_size);
  train_cmd->add_option("--log-every", train_args.log_every, "Log every N batches");
  train_cmd->add_option("--language", train_args.language, "Only train on records of this language");
  train_cmd->add_option("--resume", train_args.resume, "Continue from a checkpoint with optimizer state");
  train_cmd->add_option("--history", train_args.history, "History TSV path (default <out>.history.tsv)");
  train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();
  train_cmd->add_flag("--l2-normalize", train_args.l2_normalize, "l2-normalize caption embeddings on load");

  std::string ckpt, text_emb, out_path;
  bool project_norm = false;
  auto* project_cmd = app.add_subcommand("project", "Project text embeddings into the image space");
  project_cmd->add_option("--checkpoint", ckpt)->required();
  project_cmd->add_option("--text-emb", text_emb)->required();
  project_cmd->add_option("--out", out_path, "Output table (.tsv for TSV, binary otherwise)")->required();
  project_cmd->add_flag("--l2-normalize", project_norm);

  RetrieveArgs retrieve_args;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Rank images for text queries");
  retrieve_cmd->add_option("--checkpoint", retrieve_args.checkpoint)->required();
  retrieve_cmd->add_option("--image-emb", retrieve_args.image_emb)->required();
  retrieve_cmd->add_option("--query-emb", retrieve_args.query_emb)->required();
  retrieve_cmd->add_option("--metric", retrieve_args.metric, "cosine or sqdist");
  retrieve_cmd->add_option("--top-k", retrieve_args.top_k);
  retrieve_cmd->add_option("--threshold", retrieve_args.threshold, "Drop results scoring below this");
  retrieve_cmd->add_option("--out", retrieve_args.out);
  retrieve_cmd->add_flag("--l2-normalize", retrieve_args.l2_normalize);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval-retrieval", "Recall@k per language");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--pairs", eval_args.pairs)->required();
  eval_cmd->add_option("--text-emb", eval_args.text_emb)->required();
  eval_cmd->add_option("--image-emb", eval_args.image_emb)->required();
  eval_cmd->add_option("--k", eval_args.k);
  eval_cmd->add_option("--metric", eval_args.metric, "cosine or sqdist");
  eval_cmd->add_option("--split", eval_args.split, "Manifest split to evaluate (default test)");
  eval_cmd->add_option("--out", eval_args.out);
  eval_cmd->add_flag("--l2-normalize", eval_args.l2_normalize);

  TagArgs tag_args;
  auto* tag_cmd = app.add_subcommand("tag", "Translate source-language tags for an image");
  tag_cmd->add_option("--checkpoint", tag_args.checkpoint)->required();
  tag_cmd->add_option("--image-emb", tag_args.image_emb)->required();
  tag_cmd->add_option("--image-id", tag_args.image_id)->required();
  tag_cmd->add_option("--source-tags", tag_args.source_tags, "TSV of source_tag, embedding_id")->required();
  tag_cmd->add_option("--vocab-emb", tag_args.vocab_emb, "Target vocabulary embeddings (ids are tags)")->required();
  tag_cmd->add_option("--source-emb", tag_args.source_emb, "Source tag embeddings (default: --vocab-emb)");
  tag_cmd->add_option("--w1", tag_args.w1);
  tag_cmd->add_option("--w2", tag_args.w2);
  tag_cmd->add_option("--out", tag_args.out);
  tag_cmd->add_flag("--l2-normalize", tag_args.l2_normalize);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth-bench", "Synthetic zero-shot train/evaluate benchmark");
  synth_cmd->add_option("--seed", synth_args.seed);
  synth_cmd->add_option("--loss", synth_args.loss, "m3l, patr or both");
  synth_cmd->add_option("--epochs", synth_args.epochs);
  synth_cmd->add_option("--concepts", synth_args.concepts);
  synth_cmd->add_option("--k", synth_args.k);
  synth_cmd->add_option("--out", synth_args.out);

  std::size_t trials = 100;
  std::uint64_t gc_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of all analytic gradients");
  grad_cmd->add_option("--trials", trials);
  grad_cmd->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* asked = &app;
    for (auto* sub : app.get_subcommands()) asked = sub;
    out << asked->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    return 1;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, err);
    if (*project_cmd) return cmd_project(ckpt, text_emb, out_path, project_norm);
    if (*retrieve_cmd) return cmd_retrieve(retrieve_args, out, err);
    if (*eval_cmd) return cmd_eval(eval_args, out);
    if (*tag_cmd) return cmd_tag(tag_args, out);
    if (*synth_cmd) return cmd_synth(synth_args, out, err);
    if (*grad_cmd) return cmd_gradcheck(trials, gc_seed, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace xmodal::cli
