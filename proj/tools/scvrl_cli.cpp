// scvrl command-line driver.
//
// Exit codes: 0 success, 2 input or config error, 3 numerical failure.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "scvrl/scvrl.hpp"

namespace fs = std::filesystem;
using namespace scvrl;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "scvrl 0.1.0";
constexpr std::uint64_t kSplitKey = 0x5B117ULL;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Advisory lock on a run directory, held for the life of the command.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw InputError("run directory " + dir.string() + " is locked by another run");
  }
  ~RunLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct Run {
  fs::path dir;
  json manifest;
  RunLock lock;

  Run(const fs::path& out, const std::string& command, const Config& cfg) : dir(out), lock(out) {
    manifest["command"] = command;
    manifest["config_hash"] = hex64(config_hash(cfg));
    manifest["seed"] = cfg.seed;
    manifest["version"] = kVersion;
    manifest["started"] = utc_now();
    manifest["outputs"] = json::array();
  }

  fs::path output(const std::string& name) {
    manifest["outputs"].push_back(name);
    return dir / name;
  }

  void finish() {
    manifest["finished"] = utc_now();
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(1) << "\n";
  }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw InputError("failed writing " + p.string());
}

Config load_config_file(const std::string& path) { return path.empty() ? Config{} : parse_config(io::read_text(path)); }

void require_valid(const Config& cfg) {
  const auto v = validate_config(cfg);
  if (!v.empty()) {
    std::string all;
    for (const auto& s : v) all += (all.empty() ? "" : "; ") + s;
    throw InputError("invalid config: " + all);
  }
}

TrainState require_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw InputError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

/// Train/test split of a dataset, fixed by the seed.
std::pair<Dataset, Dataset> eval_split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  return split_stratified(d, test_fraction, Rng(seed).derive(kSplitKey));
}

std::vector<double> parse_fractions(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(detail::parse_double(detail::trim(item)));
  if (out.empty()) throw InputError("no fractions given");
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a) {
  DatasetSpec spec = parse_dataset_spec(io::read_text(a.spec));
  if (a.seed) spec.seed = *a.seed;
  validate_dataset_spec(spec);
  RunLock lock(a.out);
  const auto d = generate(spec);
  save_dataset(d, a.out);
  // The dataset manifest doubles as the run manifest; it carries no
  // timestamps so that equal spec and seed give byte-identical directories.
  auto m = json::parse(io::read_text(fs::path(a.out) / "manifest.json"));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_dataset_spec(spec)) h = (h ^ ch) * 0x100000001b3ULL;
  m["run"] = json{{"command", "gen-data"}, {"config_hash", hex64(h)}, {"seed", spec.seed}, {"version", kVersion}};
  write_file(fs::path(a.out) / "manifest.json", m.dump(1) + "\n");
  std::cout << "wrote " << d.size() << " videos to " << a.out << "\n";
  return 0;
}

struct PretrainArgs {
  std::string config, data, out, resume;
  std::optional<std::string> objective, heads, pooling;
  std::optional<double> beta;
  std::optional<int> temporal_kernel;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
};

int cmd_pretrain(const PretrainArgs& a) {
  TrainState s;
  if (!a.resume.empty()) {
    if (!a.config.empty() || a.objective || a.heads || a.pooling || a.beta || a.temporal_kernel || a.seed)
      throw InputError("--resume takes its configuration from the checkpoint; only --steps may be given");
    s = require_checkpoint(a.resume);
  } else {
    Config cfg = load_config_file(a.config);
    if (a.objective) cfg.objective = parse_objective(*a.objective);
    if (a.heads) cfg.heads_mode = parse_heads(*a.heads);
    if (a.pooling) cfg.pooling_mode = parse_pooling(*a.pooling);
    if (a.beta) cfg.beta = *a.beta;
    if (a.temporal_kernel) cfg.temporal_kernel = *a.temporal_kernel;
    if (a.seed) cfg.seed = *a.seed;
    require_valid(cfg);
    s = init_train_state(cfg);
  }
  const long target = a.steps.value_or(s.cfg.total_steps);
  if (target < s.step) throw InputError("checkpoint is already past step " + std::to_string(target));
  const auto dataset = load_dataset(a.data);
  Run run(a.out, "pretrain", s.cfg);
  write_file(run.output("config.txt"), serialize_config(s.cfg));
  fs::create_directories(run.dir / "checkpoints");
  std::ofstream metrics(run.output("metrics.jsonl"));
  const TrainingData data(dataset, s.cfg);
  RunHooks hooks;
  hooks.on_metrics = [&](const StepMetrics& m) { metrics << m.to_json().dump() << "\n"; };
  hooks.on_checkpoint = [&](const TrainState& st) {
    char name[48];
    std::snprintf(name, sizeof name, "checkpoints/step_%06ld.ckpt", st.step);
    save_checkpoint(st, run.output(name));
  };
  run_steps(s, data, target - s.step, hooks);
  save_checkpoint(s, run.output("final.ckpt"));
  run.manifest["checkpoint_id"] = checkpoint_id(s);
  run.manifest["steps"] = s.step;
  run.finish();
  std::cout << "final checkpoint " << (run.dir / "final.ckpt").string() << " id " << checkpoint_id(s) << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, out;
  double test_fraction = 0.25;
  std::optional<std::uint64_t> seed;
  std::optional<int> probe_epochs;
};

Config eval_config(const TrainState& s, const EvalArgs& a) {
  Config cfg = s.cfg;
  if (a.seed) cfg.seed = *a.seed;
  if (a.probe_epochs) cfg.probe_epochs = *a.probe_epochs;
  if (!(a.test_fraction > 0 && a.test_fraction < 1)) throw InputError("--test-fraction must lie in (0, 1)");
  return cfg;
}

std::string probe_table(const ProbeResult& r, const Dataset& d) {
  std::ostringstream os;
  os << "class\taccuracy\tn\n";
  for (int k = 0; k < d.n_classes(); ++k)
    os << d.spec.classes[k] << "\t" << fmt_pct(r.per_class[k]) << "\t" << r.per_class_count[k] << "\n";
  os << "top1\t" << fmt_pct(r.top1) << "\t" << r.n_eval << "\n";
  return os.str();
}

int cmd_probe(const EvalArgs& a) {
  const auto s = require_checkpoint(a.checkpoint);
  const auto cfg = eval_config(s, a);
  const auto [train, test] = eval_split(load_dataset(a.data), a.test_fraction, cfg.seed);
  Run run(a.out, "probe", cfg);
  const auto out = linear_probe(s.online, train, test, cfg);
  const auto text = report_header(cfg, checkpoint_id(s)) + probe_table(out.result, test);
  write_file(run.output("probe.tsv"), text);
  run.finish();
  std::cout << text;
  return 0;
}

int cmd_eval_shuffle(const EvalArgs& a) {
  const auto s = require_checkpoint(a.checkpoint);
  const auto cfg = eval_config(s, a);
  const auto [train, test] = eval_split(load_dataset(a.data), a.test_fraction, cfg.seed);
  Run run(a.out, "eval-shuffle", cfg);
  const auto probe = linear_probe(s.online, train, test, cfg);
  const auto r = shuffle_eval(s.online, probe.probe, test, cfg, Rng(cfg.seed).derive(0x5F0FFULL));
  std::ostringstream os;
  os << report_header(cfg, checkpoint_id(s)) << "objective\t" << to_string(s.cfg.objective) << "\n"
     << "normal\tshuffled\tdrop\n"
     << fmt_pct(r.acc_normal) << "\t" << fmt_pct(r.acc_shuffled) << "\t" << fmt_pct(r.drop) << "\n";
  write_file(run.output("shuffle.tsv"), os.str());
  write_file(run.output("probe.tsv"), report_header(cfg, checkpoint_id(s)) + probe_table(probe.result, test));
  run.finish();
  std::cout << os.str();
  return 0;
}

struct RetrieveArgs {
  std::string checkpoint, data, out;
  int query = 0;
  int k = 3;
};

int cmd_retrieve(const RetrieveArgs& a) {
  const auto s = require_checkpoint(a.checkpoint);
  const auto d = load_dataset(a.data);
  if (a.query < 0 || a.query >= static_cast<int>(d.size())) throw InputError("query index out of range");
  if (a.k < 1) throw InputError("k must be >= 1");
  Run run(a.out, "retrieve", s.cfg);
  auto clips = center_clips(d, s.cfg);
  const auto query = clips[a.query];
  std::vector<std::size_t> ids;
  std::vector<VideoTensor> gallery;
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (static_cast<int>(i) != a.query) {
      ids.push_back(i);
      gallery.push_back(std::move(clips[i]));
    }
  const auto hits = retrieve_topk(s.online, query, gallery, static_cast<std::size_t>(a.k));
  std::ostringstream os;
  os << report_header(s.cfg, checkpoint_id(s)) << "query\t" << d.samples[a.query].id << "\t"
     << d.spec.classes[d.samples[a.query].label] << "\n"
     << "rank\tvideo\tclass\tsimilarity\n";
  for (std::size_t r = 0; r < hits.size(); ++r) {
    const auto& smp = d.samples[ids[hits[r].index]];
    os << r + 1 << "\t" << smp.id << "\t" << d.spec.classes[smp.label] << "\t" << std::setprecision(6)
       << hits[r].similarity << "\n";
  }
  write_file(run.output("retrieval.tsv"), os.str());
  run.finish();
  std::cout << os.str();
  return 0;
}

struct LowshotArgs {
  EvalArgs eval;
  std::string fractions = "0.1,0.25,0.5,1";
  std::string baseline;
};

int cmd_lowshot(const LowshotArgs& a) {
  const auto s = require_checkpoint(a.eval.checkpoint);
  const auto cfg = eval_config(s, a.eval);
  const auto fr = parse_fractions(a.fractions);
  const auto [train, test] = eval_split(load_dataset(a.eval.data), a.eval.test_fraction, cfg.seed);
  std::optional<TrainState> base;
  if (!a.baseline.empty()) base = require_checkpoint(a.baseline);
  Run run(a.eval.out, "lowshot", cfg);
  const auto rows = lowshot_eval(s.online, train, test, fr, cfg);
  std::vector<double> delta;
  if (base) delta = relative_delta_percent(rows, lowshot_eval(base->online, train, test, fr, cfg));
  std::ostringstream os;
  os << report_header(cfg, checkpoint_id(s)) << "fraction\tn_train\taccuracy" << (base ? "\trelative_delta" : "")
     << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << rows[i].fraction << "\t" << rows[i].n_train << "\t" << fmt_pct(rows[i].accuracy);
    if (base) os << "\t" << std::fixed << std::setprecision(2) << delta[i] << std::defaultfloat;
    os << "\n";
  }
  write_file(run.output("lowshot.tsv"), os.str());
  run.finish();
  std::cout << os.str();
  return 0;
}

struct MotionProfileArgs {
  std::string data, out, config;
  int video = 0;
  std::optional<double> beta;
  std::optional<int> top_k;
};

int cmd_motion_profile(const MotionProfileArgs& a) {
  Config cfg = load_config_file(a.config);
  if (a.beta) cfg.beta = *a.beta;
  if (a.top_k) cfg.top_k = *a.top_k;
  const auto d = load_dataset(a.data);
  if (a.video < 0 || a.video >= static_cast<int>(d.size())) throw InputError("video index out of range");
  const auto& v = d.samples[a.video].video;
  const auto prof = profile(v, resolved_top_k(cfg, v.height, v.width), cfg.beta);
  Run run(a.out, "motion-profile", cfg);
  std::ostringstream os;
  os << "# video\t" << d.samples[a.video].id << "\n# beta\t" << prof.beta_used << "\n# top_k\t" << prof.top_k_used
     << "\n";
  for (const auto& w : prof.warnings) os << "# warning\t" << w << "\n";
  os << "window\tamplitude\tprobability\n";
  for (int i = 0; i < prof.windows(); ++i)
    os << i << "\t" << std::setprecision(8) << prof.amplitudes[i] << "\t" << prof.probabilities[i] << "\n";
  write_file(run.output("motion_profile.tsv"), os.str());
  run.finish();
  for (const auto& w : prof.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << os.str();
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out, data, config;
};

/// Parses the numeric rows of a results table, keyed by their first column.
std::map<std::string, std::vector<std::string>> read_table(const fs::path& p) {
  std::map<std::string, std::vector<std::string>> rows;
  std::istringstream is(io::read_text(p));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    if (!cols.empty()) rows[cols[0]] = cols;
  }
  return rows;
}

int cmd_report(const ReportArgs& a) {
  if (a.runs.size() < 2) throw InputError("report needs at least two --run directories");
  struct Entry {
    std::string objective, normal, shuffled, drop;
    std::map<std::string, std::vector<std::string>> probe;
  };
  std::vector<Entry> entries;
  for (const auto& r : a.runs) {
    const fs::path dir(r);
    if (!fs::exists(dir / "shuffle.tsv")) throw InputError("no shuffle.tsv in " + r + "; run eval-shuffle first");
    std::istringstream is(io::read_text(dir / "shuffle.tsv"));
    std::string line, objective;
    std::vector<std::string> lines;
    while (std::getline(is, line))
      if (!line.empty() && line[0] != '#') lines.push_back(line);
    if (lines.size() < 3) throw InputError("malformed shuffle.tsv in " + r);
    objective = lines[0].substr(lines[0].find('\t') + 1);
    std::stringstream ss(lines[2]);
    Entry e;
    e.objective = objective;
    std::getline(ss, e.normal, '\t');
    std::getline(ss, e.shuffled, '\t');
    std::getline(ss, e.drop, '\t');
    e.probe = read_table(dir / "probe.tsv");
    entries.push_back(std::move(e));
  }
  Config cfg = load_config_file(a.config);
  Run run(a.out, "report", cfg);
  std::ostringstream os;
  os << "Method\tTop-1\tShuffled\tDrop\n";
  for (const auto& e : entries) os << e.objective << "\t" << e.normal << "\t" << e.shuffled << "\t" << e.drop << "\n";
  if (!a.data.empty()) {
    const auto d = load_dataset(a.data);
    const auto motion = class_motion_scores(d, cfg);
    std::vector<MotionClassRow> rows;
    for (int k = 0; k < d.n_classes(); ++k) {
      const auto& name = d.spec.classes[k];
      const auto ia = entries[0].probe.find(name), ib = entries[1].probe.find(name);
      if (ia == entries[0].probe.end() || ib == entries[1].probe.end())
        throw InputError("class " + name + " missing from probe results");
      const double acc_a = detail::parse_double(ia->second.at(1)) / 100, acc_b = detail::parse_double(ib->second.at(1)) / 100;
      rows.push_back({name, motion[k], acc_a, acc_b, acc_a - acc_b});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.delta > y.delta; });
    os << "\n" << format_motion_table(rows);
  }
  write_file(run.output("report.tsv"), os.str());
  run.finish();
  std::cout << os.str();
  return 0;
}

void add_eval_options(CLI::App* c, EvalArgs& a) {
  c->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required();
  c->add_option("--data", a.data, "dataset directory")->required();
  c->add_option("--out", a.out, "run directory")->required();
  c->add_option("--test-fraction", a.test_fraction, "held-out fraction per class");
  c->add_option("--seed", a.seed, "seed for split and probe");
  c->add_option("--probe-epochs", a.probe_epochs, "linear probe epochs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shuffled contrastive video representation learning"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  c_gen->add_option("--spec", gen.spec, "dataset spec file")->required();
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_option("--seed", gen.seed, "override the spec seed");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  c_pre->add_option("--config", pre.config, "config file (defaults if omitted)");
  c_pre->add_option("--data", pre.data, "dataset directory")->required();
  c_pre->add_option("--out", pre.out, "run directory")->required();
  c_pre->add_option("--objective", pre.objective, "scvrl|cvrl|shuffled-only|pretext");
  c_pre->add_option("--heads", pre.heads, "separate|shared");
  c_pre->add_option("--pooling", pre.pooling, "cls|avg");
  c_pre->add_option("--beta", pre.beta, "window sampling temperature (inf: uniform)");
  c_pre->add_option("--temporal-kernel", pre.temporal_kernel, "cube projection temporal extent (2 or 3)");
  c_pre->add_option("--seed", pre.seed, "seed");
  c_pre->add_option("--steps", pre.steps, "train until this global step (default total_steps)");
  c_pre->add_option("--resume", pre.resume, "checkpoint to resume from");

  EvalArgs probe;
  auto* c_probe = app.add_subcommand("probe", "linear probe on frozen features");
  add_eval_options(c_probe, probe);

  EvalArgs shuf;
  auto* c_shuf = app.add_subcommand("eval-shuffle", "probe accuracy on ordered vs group-shuffled clips");
  add_eval_options(c_shuf, shuf);

  RetrieveArgs ret;
  auto* c_ret = app.add_subcommand("retrieve", "nearest-neighbour retrieval");
  c_ret->add_option("--checkpoint", ret.checkpoint, "checkpoint file")->required();
  c_ret->add_option("--data", ret.data, "dataset directory")->required();
  c_ret->add_option("--out", ret.out, "run directory")->required();
  c_ret->add_option("--query", ret.query, "query video index");
  c_ret->add_option("--k", ret.k, "neighbours to return");

  LowshotArgs low;
  auto* c_low = app.add_subcommand("lowshot", "linear probe on stratified training fractions");
  add_eval_options(c_low, low.eval);
  c_low->add_option("--fractions", low.fractions, "comma-separated fractions in (0, 1]");
  c_low->add_option("--baseline", low.baseline, "second checkpoint for relative deltas");

  MotionProfileArgs mp;
  auto* c_mp = app.add_subcommand("motion-profile", "window amplitudes and sampling probabilities");
  c_mp->add_option("--data", mp.data, "dataset directory")->required();
  c_mp->add_option("--out", mp.out, "run directory")->required();
  c_mp->add_option("--video", mp.video, "video index");
  c_mp->add_option("--config", mp.config, "config file");
  c_mp->add_option("--beta", mp.beta, "temperature");
  c_mp->add_option("--top-k", mp.top_k, "pixels per frame");

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "compare eval-shuffle runs");
  c_rep->add_option("--run", rep.runs, "eval-shuffle run directory (repeatable)")->required();
  c_rep->add_option("--out", rep.out, "run directory")->required();
  c_rep->add_option("--data", rep.data, "dataset for the per-class motion table");
  c_rep->add_option("--config", rep.config, "config file for motion scoring");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_gen) return cmd_gen_data(gen);
    if (*c_pre) return cmd_pretrain(pre);
    if (*c_probe) return cmd_probe(probe);
    if (*c_shuf) return cmd_eval_shuffle(shuf);
    if (*c_ret) return cmd_retrieve(ret);
    if (*c_low) return cmd_lowshot(low);
    if (*c_mp) return cmd_motion_profile(mp);
    if (*c_rep) return cmd_report(rep);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
