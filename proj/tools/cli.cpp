#include "cli.hpp"

#include "bilearn/detect.hpp"
#include "bilearn/plot.hpp"
#include "bilearn/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

namespace bilearn::cli {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    if (!c.empty() && c.back() == '\r') c.pop_back();
  }
  return cells;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& path) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw RuntimeError(path.string() + ": missing column '" + name + "'");
  }
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw RuntimeError(path.string() + " is empty");
  t.header = split_csv(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != t.header.size()) {
      throw RuntimeError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                         std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

template <typename T>
T parse_number(const std::string& s, const std::string& where) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw RuntimeError(where + ": cannot parse '" + s + "'");
  return v;
}

void guard_outputs(const std::vector<fs::path>& outputs, bool force) {
  for (const auto& p : outputs) {
    if (fs::exists(p) && !force) {
      throw ValidationError(p.string() + " already exists; pass --force to overwrite");
    }
  }
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  bool force = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--run-dir", c.run_dir, "Run directory");
  sub->add_flag("--force", c.force, "Overwrite existing outputs");
  sub->add_option("--set", c.sets, "Config override key=value (repeatable)");
}

fs::path require_run_dir(const Common& c) {
  if (c.run_dir.empty()) throw ValidationError("--run-dir is required");
  if (!fs::is_directory(c.run_dir)) throw RuntimeError("run directory " + c.run_dir + " does not exist");
  return c.run_dir;
}

// -- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<int> epochs;
  bool resume = false;
  bool dump_weights = false;
  std::optional<int> stop_after;
};

int cmd_train(const Common& c, const TrainArgs& a, std::ostream& out) {
  FlatConfig flat;
  if (a.resume) {
    if (c.run_dir.empty()) throw ValidationError("--resume needs --run-dir");
    flat = load_flat_config((fs::path(c.run_dir) / "config_snapshot").string());
  } else {
    if (a.config.empty()) throw ValidationError("--config is required");
    flat = load_flat_config(a.config);
  }
  if (!a.resume) {
    for (const auto& s : c.sets) apply_override(flat, s);
    if (c.seed) apply_override(flat, "seed=" + std::to_string(*c.seed));
    if (a.epochs) apply_override(flat, "train.epochs=" + std::to_string(*a.epochs));
    if (a.dump_weights) apply_override(flat, "output.dump_weights=true");
  } else if (!c.sets.empty() || c.seed || a.epochs) {
    throw ValidationError("--resume takes its configuration from the run directory; drop --set/--seed/--epochs");
  }
  const RunConfig config = from_flat(flat);

  RunOptions opts;
  opts.run_dir = c.run_dir.empty() ? fs::path("runs") / config.name : fs::path(c.run_dir);
  opts.force = c.force;
  opts.resume = a.resume;
  opts.stop_after_epoch = a.stop_after;
  opts.quiet = false;
  const Datasets data = build_datasets(config);
  const RunArtifacts art = run(config, data, opts);
  out << (art.completed ? "completed " : "stopped ") << art.history.size() << " epochs; manifest "
      << (opts.run_dir / "manifest.json").string() << "\n";
  return 0;
}

// -- detect / sweep ---------------------------------------------------------

int cmd_detect(const Common& c, double h, std::ostream& out) {
  const fs::path dir = require_run_dir(c);
  const ProbabilityDump dump = read_probability_dump(dir / "probs_final.csv");
  const fs::path target = dir / "detection.json";
  guard_outputs({target}, c.force);
  if (!(h > 0.0 && h < 1.0)) throw ValidationError("--h must be in (0, 1)");

  const NoiseMask flags = classify_noise(dump.neg_probs, h);
  nlohmann::json j;
  j["h"] = h;
  j["flagged"] = flags.flagged();
  j["total"] = flags.size();
  j["estimated_noise_ratio"] = static_cast<double>(flags.flagged()) / static_cast<double>(flags.size());
  out << "h = " << h << ": flagged " << flags.flagged() << " of " << flags.size() << " (estimated r = "
      << j["estimated_noise_ratio"].get<double>() << ")\n";
  if (dump.clean_labels) {
    const auto m = precision_recall_f1(flags, truth_mask(dump.noisy_labels, *dump.clean_labels));
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["fn"] = m.fn;
    j["tn"] = m.tn;
    out << "precision " << m.precision << "  recall " << m.recall << "  f1 " << m.f1 << "\n";
  } else {
    out << "no clean labels in this run; precision/recall/F1 not available\n";
  }
  write_text_file(target, j.dump(2) + "\n");
  return 0;
}

int cmd_sweep(const Common& c, double h_min, double h_max, int steps, std::ostream& out) {
  const fs::path dir = require_run_dir(c);
  const ProbabilityDump dump = read_probability_dump(dir / "probs_final.csv");
  if (!dump.clean_labels) throw RuntimeError("sweep needs clean labels, and this run has none");
  const fs::path csv = dir / "sweep.csv", svg = dir / "sweep_f1.svg";
  guard_outputs({csv, svg}, c.force);
  const auto grid = threshold_grid(h_min, h_max, steps);
  const auto points = threshold_sweep(dump.neg_probs, truth_mask(dump.noisy_labels, *dump.clean_labels), grid);
  write_sweep_csv(csv, points);

  Series f1{"F1", {}, {}}, prec{"precision", {}, {}}, rec{"recall", {}, {}};
  for (const auto& p : points) {
    out << "h " << p.threshold << "  f1 " << p.metrics.f1 << "\n";
    for (auto* s : {&f1, &prec, &rec}) s->x.push_back(p.threshold);
    f1.y.push_back(p.metrics.f1);
    prec.y.push_back(p.metrics.precision);
    rec.y.push_back(p.metrics.recall);
  }
  const std::vector<Series> series{f1, prec, rec};
  write_text_file(svg, line_plot_svg(series, {"Detection quality vs threshold", "threshold h", "score"}));
  return 0;
}

// -- report -----------------------------------------------------------------

int cmd_report(const Common& c, std::ostream& out) {
  const fs::path dir = require_run_dir(c);
  for (const char* name : {"metrics.csv", "probs_final.csv"}) {
    if (!fs::exists(dir / name)) throw RuntimeError("run directory lacks " + std::string(name) + "; is the run complete?");
  }
  const fs::path report = dir / "report";
  const fs::path hist = report / "neg_prob_hist.svg", loss = report / "loss_curves.svg",
                 acc = report / "accuracy_curves.svg", summary = report / "summary.md";
  guard_outputs({hist, loss, acc, summary}, c.force);
  fs::create_directories(report);

  const ProbabilityDump dump = read_probability_dump(dir / "probs_final.csv");
  std::vector<Series> groups;
  double clean_mean = 0.0, noisy_mean = 0.0;
  std::size_t clean_n = 0, noisy_n = 0;
  if (dump.clean_labels) {
    Series clean{"clean", {}, {}}, noisy{"noisy", {}, {}};
    for (std::size_t i = 0; i < dump.neg_probs.size(); ++i) {
      const bool is_noisy = dump.noisy_labels[i] != (*dump.clean_labels)[i];
      (is_noisy ? noisy : clean).y.push_back(dump.neg_probs[i]);
      (is_noisy ? noisy_mean : clean_mean) += dump.neg_probs[i];
      ++(is_noisy ? noisy_n : clean_n);
    }
    groups = {clean, noisy};
  } else {
    groups = {{"all", {}, dump.neg_probs}};
  }
  write_text_file(hist, histogram_svg(groups, 0.0, 1.0, 40,
                                      {"Negative-head probability on the given label", "probability", "count"}));

  const CsvTable metrics = read_csv(dir / "metrics.csv");
  const fs::path mpath = dir / "metrics.csv";
  Series total{"total", {}, {}}, pl{"positive", {}, {}}, nl{"negative", {}, {}}, sd{"distillation", {}, {}};
  Series train_acc{"train (noisy labels)", {}, {}}, test_acc{"test", {}, {}};
  const std::size_t ce = metrics.column("epoch", mpath), ct = metrics.column("loss_total", mpath),
                    cp = metrics.column("loss_pl", mpath), cn = metrics.column("loss_nl", mpath),
                    cs = metrics.column("loss_sd", mpath), ca = metrics.column("train_acc", mpath),
                    cv = metrics.column("test_acc", mpath);
  for (const auto& row : metrics.rows) {
    const double e = parse_number<double>(row[ce], mpath.string());
    const std::pair<Series*, std::size_t> cols[] = {{&total, ct}, {&pl, cp}, {&nl, cn}, {&sd, cs}, {&train_acc, ca}};
    for (const auto& [s, col] : cols) {
      s->x.push_back(e);
      s->y.push_back(parse_number<double>(row[col], mpath.string()));
    }
    if (!row[cv].empty()) {
      test_acc.x.push_back(e);
      test_acc.y.push_back(parse_number<double>(row[cv], mpath.string()));
    }
  }
  const std::vector<Series> losses{total, pl, nl, sd};
  write_text_file(loss, line_plot_svg(losses, {"Training losses", "epoch", "loss"}));
  std::vector<Series> accs{train_acc};
  if (!test_acc.x.empty()) accs.push_back(test_acc);
  write_text_file(acc, line_plot_svg(accs, {"Accuracy", "epoch", "accuracy"}));

  std::ostringstream md;
  md << "# Run report\n\n";
  md << "| epoch | loss_total | train_acc | test_acc |\n|---|---|---|---|\n";
  for (const auto& row : metrics.rows) {
    md << "| " << row[ce] << " | " << row[ct] << " | " << row[ca] << " | " << (row[cv].empty() ? "-" : row[cv])
       << " |\n";
  }
  md << "\nSamples: " << dump.neg_probs.size() << "\n";
  if (dump.clean_labels) {
    md << "\nMean negative-head probability on the given label: clean "
       << (clean_n ? clean_mean / static_cast<double>(clean_n) : 0.0) << " (" << clean_n << " samples), noisy "
       << (noisy_n ? noisy_mean / static_cast<double>(noisy_n) : 0.0) << " (" << noisy_n << " samples)\n";
  }
  md << "\nPlots: neg_prob_hist.svg, loss_curves.svg, accuracy_curves.svg\n";
  write_text_file(summary, md.str());
  out << "wrote " << report.string() << "\n";
  return 0;
}

// -- convert-sidecar --------------------------------------------------------

struct ConvertArgs {
  std::string input;
  std::string column = "noisy_label";
  std::string output;
  int num_classes = 10;
};

int cmd_convert(const Common& c, const ConvertArgs& a, std::ostream& out) {
  if (a.input.empty() || a.output.empty()) throw ValidationError("--input and --output are required");
  if (a.num_classes < 2) throw ValidationError("--num-classes must be at least 2");
  guard_outputs({a.output}, c.force);
  const CsvTable t = read_csv(a.input);
  const std::size_t col = t.column(a.column, a.input);
  std::vector<Label> labels;
  labels.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto where = a.input + " row " + std::to_string(i + 1);
    const Label y = parse_number<Label>(t.rows[i][col], where);
    if (y < 0 || y >= a.num_classes) {
      throw RuntimeError(where + ": label " + std::to_string(y) + " outside [0, " + std::to_string(a.num_classes) + ")");
    }
    labels.push_back(y);
  }
  write_sidecar(a.output, labels);
  out << "wrote " << labels.size() << " labels to " << a.output << "\n";
  return 0;
}

}  // namespace

ProbabilityDump read_probability_dump(const fs::path& path) {
  if (!fs::exists(path)) throw RuntimeError("missing probability dump " + path.string());
  const CsvTable t = read_csv(path);
  if (t.rows.empty()) throw RuntimeError(path.string() + " has no rows");
  const auto where = path.string();
  const std::size_t cy = t.column("noisy_label", path), cc = t.column("clean_label", path),
                    cn = t.column("neg_prob", path), cp = t.column("pos_prob", path),
                    ck = t.column("corrected_label", path);
  ProbabilityDump d;
  const bool has_clean = !t.rows.front()[cc].empty();
  if (has_clean) d.clean_labels.emplace();
  for (const auto& row : t.rows) {
    d.noisy_labels.push_back(parse_number<Label>(row[cy], where));
    d.neg_probs.push_back(parse_number<double>(row[cn], where));
    d.pos_probs.push_back(parse_number<double>(row[cp], where));
    d.corrected.push_back(parse_number<Label>(row[ck], where));
    if (has_clean) d.clean_labels->push_back(parse_number<Label>(row[cc], where));
  }
  return d;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bidirectional noisy-label training and detection"};
  app.set_help_flag("--help", "Print help");
  app.require_subcommand(1);
  Common common;

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model and write a run directory");
  add_common(train, common);
  train->add_option("--config", train_args.config, "Preset name or config file");
  train->add_option("--epochs", train_args.epochs, "Override train.epochs");
  train->add_flag("--resume", train_args.resume, "Continue from the run directory's last checkpoint");
  train->add_flag("--dump-weights", train_args.dump_weights, "Write per-epoch weight tables");
  train->add_option("--stop-after", train_args.stop_after, "Stop after this many epochs (resumable)");

  double h = 0.3;
  auto* detect = app.add_subcommand("detect", "Flag noisy labels in a finished run");
  add_common(detect, common);
  detect->add_option("--h", h, "Threshold on the negative-head probability");

  double h_min = 0.05, h_max = 0.95;
  int steps = 19;
  auto* sweep = app.add_subcommand("sweep", "Detection metrics over a threshold grid");
  add_common(sweep, common);
  sweep->add_option("--h-min", h_min);
  sweep->add_option("--h-max", h_max);
  sweep->add_option("--steps", steps);

  auto* report = app.add_subcommand("report", "Histogram, curves and summary for a finished run");
  add_common(report, common);

  ConvertArgs convert_args;
  auto* convert = app.add_subcommand("convert-sidecar", "Extract a label column from a CSV into a sidecar file");
  add_common(convert, common);
  convert->add_option("--input", convert_args.input, "CSV file with a header row");
  convert->add_option("--column", convert_args.column, "Column holding integer labels");
  convert->add_option("--output", convert_args.output, "Sidecar file to write");
  convert->add_option("--num-classes", convert_args.num_classes, "Number of classes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train) return cmd_train(common, train_args, out);
    if (*detect) return cmd_detect(common, h, out);
    if (*sweep) return cmd_sweep(common, h_min, h_max, steps, out);
    if (*report) return cmd_report(common, out);
    if (*convert) return cmd_convert(common, convert_args, out);
  } catch (const ValidationError& e) {
    err << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace bilearn::cli
