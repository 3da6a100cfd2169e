#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "nrsfm/checkpoint.hpp"
#include "nrsfm/errors.hpp"
#include "nrsfm/eval.hpp"

namespace nrsfm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::map<std::string, std::set<std::string>> kSchema = {
    {"run", {"seed"}},
    {"synth", {"points", "k", "frames", "sparsity", "code_scale"}},
    {"model", {"k"}},
    {"train", {"steps", "batch_size", "learning_rate", "beta1", "beta2", "eps", "checkpoint_every"}},
    {"sweep", {"ratios"}},
};

template <class T>
T number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("config: " + key + ": bad value '" + text + "'");
  return v;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (double v : parse_list(text)) {
    if (v != static_cast<int>(v)) throw ConfigError("config: " + key + ": expected integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    const std::string tok = trim(text.substr(pos, comma - pos));
    if (tok.empty()) throw ConfigError("list '" + text + "' has an empty entry");
    out.push_back(number<double>("list", tok));
    pos = comma + 1;
  }
  return out;
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.synth.dict_seed = derive_seed(seed, 1);
  cfg.synth.camera_seed = derive_seed(seed, 2);
  cfg.train.seed = derive_seed(seed, 3);
}

RunConfig load_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }

  RunConfig cfg;
  cfg.synth.sparsity = 1;
  for (const auto& [section, entries] : tree) {
    const auto known = kSchema.find(section);
    if (known == kSchema.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, node] : entries) {
      if (!known->second.count(key)) throw ConfigError("config: unknown key " + section + "." + key);
      const std::string name = section + "." + key;
      const std::string v = trim(node.get_value<std::string>());
      if (section == "run") {
        cfg.seed = number<std::uint64_t>(name, v);
      } else if (section == "synth") {
        if (key == "points") cfg.synth.sizes.points = number<int>(name, v);
        if (key == "k") cfg.synth.sizes.k = parse_int_list(name, v);
        if (key == "frames") cfg.synth.frame_count = number<int>(name, v);
        if (key == "sparsity") cfg.synth.sparsity = number<int>(name, v);
        if (key == "code_scale") cfg.synth.code_scale = number<double>(name, v);
      } else if (section == "model") {
        cfg.model = LayerSizes{0, parse_int_list(name, v)};
      } else if (section == "train") {
        if (key == "steps") cfg.train.steps = number<int>(name, v);
        if (key == "batch_size") cfg.train.batch_size = number<int>(name, v);
        if (key == "learning_rate") cfg.train.learning_rate = number<double>(name, v);
        if (key == "beta1") cfg.train.adam_beta1 = number<double>(name, v);
        if (key == "beta2") cfg.train.adam_beta2 = number<double>(name, v);
        if (key == "eps") cfg.train.adam_eps = number<double>(name, v);
        if (key == "checkpoint_every") cfg.train.checkpoint_every = number<int>(name, v);
      } else if (section == "sweep") {
        cfg.ratios = parse_list(v);
      }
    }
  }
  apply_seed(cfg, cfg.seed);
  return cfg;
}

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string tracks;
  std::string checkpoint;
  std::string checkpoints;
  std::string ratios;
  std::optional<std::uint64_t> seed;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool center = false;
  bool deterministic = false;
  bool identity = false;
};

RunConfig resolve_config(const Flags& f) {
  RunConfig cfg = load_config(f.config);
  if (f.seed) apply_seed(cfg, *f.seed);
  cfg.train.threads = f.threads;
  cfg.train.deterministic = f.deterministic;
  if (!f.ratios.empty()) cfg.ratios = parse_list(f.ratios);
  for (double r : cfg.ratios)
    if (!(r >= 0.0)) throw ConfigError("config: noise ratios must be >= 0");
  return cfg;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what);
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

// Output file whose parent directory must already exist.
void require_output_file(const std::string& path) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) throw ConfigError("output directory does not exist: " + parent.string());
}

void require_output_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec || !fs::is_directory(path)) throw ConfigError("cannot create output directory: " + path);
  const fs::path probe = fs::path(path) / ".nrsfm_write_probe";
  {
    std::ofstream os(probe);
    if (!os) throw ConfigError("output directory is not writable: " + path);
  }
  fs::remove(probe);
}

LayerSizes model_sizes(const RunConfig& cfg, int points) {
  if (!cfg.model) throw ConfigError("config: [model] k is required");
  LayerSizes sizes = *cfg.model;
  sizes.points = points;
  sizes.validate();
  return sizes;
}

bool is_centered(const TrackSet& ts) {
  for (const auto& fr : ts.frames) {
    Eigen::RowVector2d sum = Eigen::RowVector2d::Zero();
    double scale = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < fr.points.rows(); ++i) {
      if (!fr.visibility[i]) continue;
      sum += fr.points.row(i);
      scale = std::max(scale, fr.points.row(i).cwiseAbs().maxCoeff());
      ++n;
    }
    if (n > 0 && (sum / n).cwiseAbs().maxCoeff() > 1e-9 * std::max(scale, 1.0)) return false;
  }
  return true;
}

TrackSet prepare_tracks(const TrackSet& raw, bool center) {
  if (center) return zero_fill_missing(center_frames(raw)).tracks;
  if (!is_centered(raw)) throw ConfigError("tracks are not centered; pass --center");
  return zero_fill_missing(raw).tracks;
}

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

int cmd_generate(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve_config(f);
  cfg.synth.validate();
  if (f.out.empty()) throw ConfigError("missing --out");
  require_output_file(f.out);

  const SyntheticData data = generate_synthetic(cfg.synth);
  save_tracks(data.tracks, f.out);
  out << json{{"points", data.tracks.points},
              {"frames", data.tracks.size()},
              {"gt", data.tracks.has_ground_truth() ? 1 : 0},
              {"path", f.out}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(f);
  cfg.train.validate();
  require_file(f.tracks, "--tracks");
  if (f.out.empty()) throw ConfigError("missing --out");
  if (!cfg.model) throw ConfigError("config: [model] k is required");
  require_output_dir(f.out);

  const TrackSet ts = prepare_tracks(load_tracks(f.tracks), f.center);
  const LayerSizes sizes = model_sizes(cfg, ts.points);
  try {
    const TrainResult result = train(ts, sizes, cfg.train, TrainOutput{f.out, &err});
    const CheckpointRecord& best = select_checkpoint(result.records);
    out << json{{"selected_checkpoint", best.path.string()},
                {"step", best.step},
                {"coherence", best.coherence},
                {"mean_loss", best.mean_loss},
                {"checkpoints", result.records.size()},
                {"skipped_frames", result.skipped_frames}}
               .dump()
        << '\n';
  } catch (const TrainingCollapse& e) {
    err << "error: " << e.what() << '\n';
    if (!e.last_checkpoint().empty()) err << "last checkpoint: " << e.last_checkpoint() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

void write_per_frame_csv(const std::string& path, const EvalReport& rep) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  os << std::setprecision(17) << "frame,error\n";
  for (std::size_t i = 0; i < rep.per_frame_errors.size(); ++i) os << i << ',' << rep.per_frame_errors[i] << '\n';
}

int cmd_eval(const Flags& f, std::ostream& out, std::ostream& err) {
  require_file(f.tracks, "--tracks");
  if (!f.identity) require_file(f.checkpoint, "--checkpoint");
  if (!f.out.empty()) require_output_file(f.out);

  TrackSet ts = load_tracks(f.tracks);
  if (!ts.has_ground_truth()) {
    err << "error: " << f.tracks << " carries no ground truth; refusing to evaluate\n";
    return kExitFailure;
  }
  ts = prepare_tracks(ts, f.center);

  EvalReport rep;
  std::optional<double> coherence;
  if (f.identity) {
    const auto gt = ground_truth_shapes(ts);
    rep = normalized_3d_error(gt, gt);
  } else {
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    rep = evaluate_model(ts, ck.params);
    coherence = rep.coherence;
  }
  std::optional<double> rigid;
  try {
    rigid = evaluate_rigid_baseline(ts).mean_error;
  } catch (const InsufficientData& e) {
    err << "warning: " << e.what() << '\n';
  }
  if (!f.out.empty()) write_per_frame_csv(f.out, rep);
  out << json{{"mean_error", rep.mean_error},
              {"coherence", nullable(coherence)},
              {"rigid_baseline_error", nullable(rigid)},
              {"noise_ratio", rep.noise_ratio},
              {"frames", rep.per_frame_errors.size()}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_sweep(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  cfg.train.validate();
  require_file(f.tracks, "--tracks");
  if (!f.out.empty()) require_output_file(f.out);
  if (!cfg.model) throw ConfigError("config: [model] k is required");

  const TrackSet ts = prepare_tracks(load_tracks(f.tracks), f.center);
  if (!ts.has_ground_truth()) throw ConfigError("sweep needs tracks with ground truth");
  const LayerSizes sizes = model_sizes(cfg, ts.points);
  const auto curve = noise_sweep(ts, sizes, cfg.train, cfg.ratios, derive_seed(cfg.seed, 4));

  std::ostringstream csv;
  csv << std::setprecision(17) << "ratio,mean_error,error\n";
  for (const auto& p : curve) {
    std::string msg = p.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    csv << p.ratio << ',' << p.mean_error << ',' << msg << '\n';
  }
  if (!f.out.empty()) {
    std::ofstream os(f.out, std::ios::binary);
    os << csv.str();
    if (!os) throw Error("cannot write " + f.out);
  }
  out << csv.str();
  const bool all_ok = std::all_of(curve.begin(), curve.end(), [](const auto& p) { return p.error.empty(); });
  return all_ok ? kExitOk : kExitFailure;
}

int cmd_coherence_report(const Flags& f, std::ostream& out) {
  require_file(f.tracks, "--tracks");
  if (f.checkpoints.empty() || !fs::is_directory(f.checkpoints)) {
    throw ConfigError("--checkpoints must name a training output directory");
  }
  if (!f.out.empty()) require_output_file(f.out);

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(f.checkpoints)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("checkpoint_", 0) == 0 && entry.path().extension() == ".bin") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  TrackSet ts = load_tracks(f.tracks);
  if (!ts.has_ground_truth()) throw ConfigError("coherence-report needs tracks with ground truth");
  ts = prepare_tracks(ts, f.center);

  std::vector<CheckpointRecord> records;
  for (const auto& p : files) {
    Checkpoint ck = load_checkpoint(p);
    CheckpointRecord rec;
    rec.step = ck.step;
    rec.path = p;
    rec.coherence = ck.coherence;
    rec.params = std::make_shared<const ModelParams>(std::move(ck.params));
    records.push_back(std::move(rec));
  }
  const CoherenceSeries series = coherence_error_series(records, ts);
  if (!f.out.empty()) {
    std::ofstream os(f.out, std::ios::binary);
    os << std::setprecision(17) << "step,coherence,mean_error\n";
    for (std::size_t i = 0; i < records.size(); ++i)
      os << records[i].step << ',' << series.points[i].first << ',' << series.points[i].second << '\n';
    if (!os) throw Error("cannot write " + f.out);
  }
  out << json{{"checkpoints", records.size()}, {"pearson", nullable(series.correlation)}}.dump() << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep sparse-coding non-rigid structure from motion"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&f](CLI::App* sub) {
    sub->add_option("--seed", f.seed, "Master seed for every random component");
    sub->add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", f.deterministic, "Ordered reductions and zero wall time in logs");
    sub->add_flag("--center", f.center, "Center each frame on its visible points first");
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic track file");
  gen->add_option("--config", f.config, "INI config")->required();
  gen->add_option("--out", f.out, "Output track file")->required();
  common(gen);

  auto* tr = app.add_subcommand("train", "Train and checkpoint a model");
  tr->add_option("--tracks", f.tracks, "Input track file")->required();
  tr->add_option("--config", f.config, "INI config")->required();
  tr->add_option("--out", f.out, "Output directory")->required();
  common(tr);

  auto* ev = app.add_subcommand("eval", "Score a checkpoint against ground truth");
  ev->add_option("--tracks", f.tracks, "Track file with ground truth")->required();
  auto* ck_opt = ev->add_option("--checkpoint", f.checkpoint, "Checkpoint file");
  auto* id_flag = ev->add_flag("--identity", f.identity, "Score the ground truth against itself");
  ck_opt->excludes(id_flag);
  ev->add_option("--out", f.out, "Per-frame CSV");
  common(ev);

  auto* sw = app.add_subcommand("sweep", "Retrain across noise ratios");
  sw->add_option("--tracks", f.tracks, "Track file with ground truth")->required();
  sw->add_option("--config", f.config, "INI config")->required();
  sw->add_option("--ratios", f.ratios, "Comma-separated noise ratios");
  sw->add_option("--out", f.out, "Curve CSV");
  common(sw);

  auto* cr = app.add_subcommand("coherence-report", "Coherence against 3D error over checkpoints");
  cr->add_option("--tracks", f.tracks, "Track file with ground truth")->required();
  cr->add_option("--checkpoints", f.checkpoints, "Training output directory")->required();
  cr->add_option("--out", f.out, "Series CSV");
  common(cr);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(f, out);
    if (tr->parsed()) return cmd_train(f, out, err);
    if (ev->parsed()) {
      if (!f.identity && f.checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --identity");
      return cmd_eval(f, out, err);
    }
    if (sw->parsed()) return cmd_sweep(f, out);
    if (cr->parsed()) return cmd_coherence_report(f, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace nrsfm::cli
