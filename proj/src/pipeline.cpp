#include "beamsense/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "beamsense/error.hpp"
#include "beamsense/tracker.hpp"

namespace beamsense {

namespace fs = std::filesystem;
using oj = nlohmann::ordered_json;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

oj opt_json(const std::optional<double>& v) { return v ? oj(*v) : oj(nullptr); }

std::string window_tag(const WindowSpec& w) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g_%g", w.start_ms, w.end_ms);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Rows of a CSV file after checking its header.
std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& expected_header) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != expected_header)
    throw ValidationError(path.string() + ": expected header '" + expected_header + "'");
  const std::size_t cols = split_csv(expected_header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != cols) throw ValidationError(path.string() + ": malformed row '" + line + "'");
    rows.push_back(std::move(cells));
  }
  return rows;
}

double parse_double(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(path.string() + ": bad number '" + s + "'");
  }
}

template <class J = json>
J read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open " + path.string());
  try {
    return J::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const oj& j) { write_text(path, j.dump(2) + "\n"); }

const ApplicationProfile& profile_named(const std::vector<ApplicationProfile>& profiles, const std::string& app) {
  for (const auto& p : profiles)
    if (p.name == app) return p;
  throw ValidationError("no profile named '" + app + "'");
}

std::pair<BeamCenterTrace, PowerTrace> corpus_trace(const ApplicationProfile& p, const GainModel& gain,
                                                    const WalkOptions& walk, double duration_ms, double dt_ms,
                                                    std::uint64_t seed, std::size_t i) {
  auto beam = synth_walk(p, duration_ms, dt_ms, derive_seed(seed, "corpus-walk:" + p.name, i), walk);
  auto power = to_power_trace(beam, gain, derive_seed(seed, "corpus-noise:" + p.name, i));
  return {std::move(beam), std::move(power)};
}

ScoreStats stats_of(const std::vector<double>& v) {
  ScoreStats s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(v.size()));
  return s;
}

oj stats_json(const ScoreStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

}  // namespace

// ------------------------------------------------------------ building blocks

CalibratedSetup calibrated_setup(const ExperimentConfig& cfg, const CalibrationResult& cal) {
  CalibratedSetup s{cfg.profiles, cfg.channel};
  apply_calibration(cal, s.profiles, s.gain);
  return s;
}

CalibrationResult uncalibrated_result(const ExperimentConfig& cfg) {
  CalibrationResult r;
  r.hpbw_deg = cfg.channel.hpbw_deg;
  for (const auto& p : cfg.profiles) {
    ProfileCalibration pc;
    pc.app = p.name;
    pc.plane_to_angle = p.plane_to_angle;
    r.profiles.push_back(pc);
  }
  return r;
}

oj calibration_to_json(const CalibrationResult& cal, bool fitted) {
  oj j;
  j["fitted"] = fitted;
  j["hpbw_deg"] = cal.hpbw_deg;
  j["selection_cost"] = cal.selection_cost;
  oj ps = oj::array();
  for (const auto& p : cal.profiles) {
    ps.push_back({{"app", p.app},
                  {"plane_to_angle", p.plane_to_angle},
                  {"restricted_mean_3db", p.restricted_mean_3db},
                  {"restricted_mean_10db", p.restricted_mean_10db},
                  {"crossing_fraction_3db", p.crossing_fraction_3db},
                  {"crossing_fraction_10db", p.crossing_fraction_10db},
                  {"residual", p.residual},
                  {"constraint", p.constraint.empty() ? oj(nullptr) : oj(p.constraint)},
                  {"constraint_binding", p.constraint_binding}});
  }
  j["profiles"] = ps;
  return j;
}

CalibrationResult calibration_from_json(const json& j) {
  CalibrationResult r;
  try {
    r.hpbw_deg = j.at("hpbw_deg").get<double>();
    r.selection_cost = j.at("selection_cost").get<double>();
    for (const auto& jp : j.at("profiles")) {
      ProfileCalibration p;
      p.app = jp.at("app").get<std::string>();
      p.plane_to_angle = jp.at("plane_to_angle").get<double>();
      p.restricted_mean_3db = jp.at("restricted_mean_3db").get<double>();
      p.restricted_mean_10db = jp.at("restricted_mean_10db").get<double>();
      p.crossing_fraction_3db = jp.at("crossing_fraction_3db").get<double>();
      p.crossing_fraction_10db = jp.at("crossing_fraction_10db").get<double>();
      p.residual = jp.at("residual").get<double>();
      if (!jp.at("constraint").is_null()) p.constraint = jp.at("constraint").get<std::string>();
      p.constraint_binding = jp.at("constraint_binding").get<bool>();
      r.profiles.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed calibration document: ") + e.what());
  }
  BEAMSENSE_REQUIRE(r.hpbw_deg > 0.0, "calibration hpbw must be > 0");
  return r;
}

std::vector<LabeledTraces> synth_corpus(const std::vector<ApplicationProfile>& profiles, const GainModel& gain,
                                        const WalkOptions& walk, const CorpusConfig& corpus, double dt_ms,
                                        std::uint64_t seed) {
  std::vector<LabeledTraces> out;
  for (const auto& p : profiles) {
    LabeledTraces g{p.name, {}};
    for (std::size_t i = 0; i < corpus.traces_per_app; ++i)
      g.traces.push_back(corpus_trace(p, gain, walk, corpus.duration_ms, dt_ms, seed, i).second);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<LabeledTraces> group_by_class(const std::vector<LabeledTraces>& apps,
                                          const std::vector<ApplicationProfile>& profiles) {
  std::vector<LabeledTraces> out;
  for (const auto& g : apps) {
    const std::string cls(to_string(profile_named(profiles, g.label).class_label));
    auto it = std::find_if(out.begin(), out.end(), [&](const LabeledTraces& o) { return o.label == cls; });
    if (it == out.end()) {
      out.push_back({cls, {}});
      it = out.end() - 1;
    }
    it->traces.insert(it->traces.end(), g.traces.begin(), g.traces.end());
  }
  return out;
}

Dataset feature_dataset(const std::vector<LabeledTraces>& apps, const std::vector<ApplicationProfile>& profiles,
                        const WindowSpec& window, const StftParams& stft, LabelLevel level) {
  Dataset d;
  for (const char* n : FeatureVector::names()) d.feature_names.push_back(n);
  for (const auto& g : apps) {
    std::string label = g.label;
    if (level == LabelLevel::cls) label = std::string(to_string(profile_named(profiles, g.label).class_label));
    auto it = std::find(d.class_names.begin(), d.class_names.end(), label);
    if (it == d.class_names.end()) {
      d.class_names.push_back(label);
      it = d.class_names.end() - 1;
    }
    const int idx = static_cast<int>(it - d.class_names.begin());
    for (const auto& tr : g.traces) {
      const auto fv = extract_features(tr, window, stft).as_array();
      d.rows.emplace_back(fv.begin(), fv.end());
      d.labels.push_back(idx);
    }
  }
  return d;
}

std::vector<std::vector<std::size_t>> stratified_splits(const std::vector<int>& strata, std::size_t repetitions,
                                                        double train_fraction, std::uint64_t seed) {
  BEAMSENSE_REQUIRE(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must be in (0, 1)");
  std::map<int, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < strata.size(); ++i) by[strata[i]].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t r = 0; r < repetitions; ++r) {
    Rng rng(derive_seed(seed, "split", r));
    std::vector<std::size_t> train;
    for (auto [label, idx] : by) {
      BEAMSENSE_REQUIRE(idx.size() >= 2, "every stratum needs at least 2 samples to split");
      std::shuffle(idx.begin(), idx.end(), rng);
      const auto n_train = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size()))), 1, idx.size() - 1);
      train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    }
    std::sort(train.begin(), train.end());
    out.push_back(std::move(train));
  }
  return out;
}

ClassificationReport run_classification(const Dataset& d, const std::vector<std::vector<std::size_t>>& splits,
                                        const ClassifyConfig& cfg, std::uint64_t seed, const std::string& level) {
  validate(d);
  BEAMSENSE_REQUIRE(!splits.empty(), "no splits given");
  ClassificationReport rep;
  rep.level = level;
  rep.class_names = d.class_names;
  const char* names[] = {"tree", "forest", "knn", "gnb"};
  struct Acc {
    std::vector<double> acc, prec, rec, f1;
  };
  std::vector<Acc> acc(4);
  rep.importance.assign(d.n_features(), 0.0);
  for (std::size_t r = 0; r < splits.size(); ++r) {
    const auto& train_idx = splits[r];
    std::vector<std::size_t> test_idx;
    std::size_t k = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (k < train_idx.size() && train_idx[k] == i) {
        ++k;
        continue;
      }
      test_idx.push_back(i);
    }
    BEAMSENSE_REQUIRE(!test_idx.empty(), "split leaves no test samples");
    const Dataset train = d.subset(train_idx);
    const Dataset test = d.subset(test_idx);

    ForestParams fp;
    fp.n_trees = cfg.forest_trees;
    fp.aggregation = cfg.forest_aggregation;
    const auto forest = train_forest(train, fp, derive_seed(seed, "classify-forest:" + level, r));
    const auto imp = feature_importance(forest);
    for (std::size_t f = 0; f < imp.size(); ++f) rep.importance[f] += imp[f] / static_cast<double>(splits.size());

    const std::vector<std::vector<int>> preds{
        predict_all(train_tree(train, cfg.tree_depth), test.rows), predict_all(forest, test.rows),
        // k is capped at the largest odd value the training split allows.
        predict_all(train_knn(train, std::min(cfg.knn_k, train.size() - (train.size() % 2 == 0))), test.rows),
        predict_all(train_gnb(train), test.rows)};
    for (std::size_t c = 0; c < 4; ++c) {
      const auto m = evaluate(preds[c], test.labels, d.n_classes());
      acc[c].acc.push_back(m.accuracy);
      acc[c].prec.push_back(m.macro_precision);
      acc[c].rec.push_back(m.macro_recall);
      acc[c].f1.push_back(m.macro_f1);
    }
  }
  for (std::size_t c = 0; c < 4; ++c) {
    ClassifierScores s;
    s.classifier = names[c];
    s.accuracy_runs = acc[c].acc;
    s.accuracy = stats_of(acc[c].acc);
    s.precision = stats_of(acc[c].prec);
    s.recall = stats_of(acc[c].rec);
    s.f1 = stats_of(acc[c].f1);
    rep.scores.push_back(std::move(s));
  }
  return rep;
}

double EnsembleDynamics::mean_drop_at(double t) const {
  BEAMSENSE_REQUIRE(!t_ms.empty(), "empty ensemble");
  std::size_t best = 0;
  for (std::size_t i = 1; i < t_ms.size(); ++i)
    if (std::abs(t_ms[i] - t) < std::abs(t_ms[best] - t)) best = i;
  return mean_db.front() - mean_db[best];
}

EnsembleDynamics simulate_dynamics(const ApplicationProfile& profile, const GainModel& gain, const WalkOptions& walk,
                                   double dt_ms, std::size_t n_traces, double duration_ms, double grid_step_ms,
                                   const std::vector<double>& thresholds_db, double gamma, std::uint64_t seed) {
  BEAMSENSE_REQUIRE(n_traces >= 1, "need at least one trace");
  BEAMSENSE_REQUIRE(grid_step_ms >= dt_ms, "grid step must be >= dt");
  EnsembleDynamics out;
  out.app = profile.name;
  const auto stride = static_cast<std::size_t>(std::llround(grid_step_ms / dt_ms));
  std::vector<double> sum, sumsq;
  double horizon = 0.0;
  std::vector<std::vector<std::optional<double>>> per(thresholds_db.size());
  for (std::size_t i = 0; i < n_traces; ++i) {
    const auto beam =
        synth_walk(profile, duration_ms, dt_ms, derive_seed(seed, "dynamics-walk:" + profile.name, i), walk);
    const auto tr = to_power_trace(beam, gain, derive_seed(seed, "dynamics-noise:" + profile.name, i));
    if (sum.empty()) {
      for (std::size_t k = 0; k < tr.samples.size(); k += stride) out.t_ms.push_back(tr.time_at(k));
      sum.assign(out.t_ms.size(), 0.0);
      sumsq.assign(out.t_ms.size(), 0.0);
      horizon = tr.duration_ms();
    }
    for (std::size_t g = 0; g < out.t_ms.size(); ++g) {
      const double v = tr.samples[g * stride];
      sum[g] += v;
      sumsq[g] += v * v;
    }
    FallDetector det(thresholds_db, gamma, dt_ms);
    for (double x : tr.samples)
      if (det.push(x)) break;
    for (std::size_t t = 0; t < thresholds_db.size(); ++t) per[t].push_back(det.crossings()[t]);
  }
  const double n = static_cast<double>(n_traces);
  for (std::size_t g = 0; g < out.t_ms.size(); ++g) {
    const double m = sum[g] / n;
    out.mean_db.push_back(m);
    out.std_db.push_back(std::sqrt(std::max(0.0, sumsq[g] / n - m * m)));
  }
  out.falls.label = profile.name;
  for (std::size_t t = 0; t < thresholds_db.size(); ++t)
    out.falls.rows.push_back(fall_time_row(per[t], thresholds_db[t], horizon));
  return out;
}

// ------------------------------------------------------------ stage runner

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"calibrate", "synth", "features", "mwtest", "classify", "track", "report"};
  return s;
}

std::vector<std::string> parse_stage_list(const std::string& list) {
  std::set<std::string> want;
  for (auto name : split_csv(list)) {
    name.erase(0, name.find_first_not_of(' '));
    name.erase(name.find_last_not_of(' ') + 1);
    if (name.empty()) continue;
    if (name == "all") {
      want.insert(pipeline_stages().begin(), pipeline_stages().end());
      continue;
    }
    if (std::find(pipeline_stages().begin(), pipeline_stages().end(), name) == pipeline_stages().end())
      throw ValidationError("unknown stage '" + name + "'");
    want.insert(name);
  }
  BEAMSENSE_REQUIRE(!want.empty(), "no stages selected");
  std::vector<std::string> out;
  for (const auto& s : pipeline_stages())
    if (want.count(s)) out.push_back(s);
  return out;
}

namespace {

// Files are written under a staging directory and moved into place when the
// stage finishes, so a failed stage leaves nothing behind.
class Outputs {
 public:
  Outputs(fs::path out, bool force) : out_(std::move(out)), staging_(out_ / ".staging"), force_(force) {}

  fs::path file(const std::string& rel) {
    pending_.push_back(rel);
    const fs::path p = staging_ / rel;
    fs::create_directories(p.parent_path());
    return p;
  }

  bool exists(const std::string& rel) const { return fs::exists(out_ / rel); }
  fs::path final_path(const std::string& rel) const { return out_ / rel; }

  void commit(const std::string& stage) {
    if (!force_)
      for (const auto& rel : pending_)
        if (fs::exists(out_ / rel))
          throw StageError(stage, "refusing to overwrite " + (out_ / rel).string() + " (use --force)");
    for (const auto& rel : pending_) {
      const fs::path dst = out_ / rel;
      fs::create_directories(dst.parent_path());
      fs::rename(staging_ / rel, dst);
      written_.push_back(rel);
    }
    pending_.clear();
    fs::remove_all(staging_);
  }

  void discard_pending() {
    pending_.clear();
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }

  void rollback() {
    discard_pending();
    std::error_code ec;
    std::set<fs::path> dirs;
    for (const auto& rel : written_) {
      fs::remove(out_ / rel, ec);
      for (fs::path d = (out_ / rel).parent_path(); d != out_ && !d.empty(); d = d.parent_path()) dirs.insert(d);
    }
    for (auto it = dirs.rbegin(); it != dirs.rend(); ++it)
      if (fs::is_directory(*it, ec) && fs::is_empty(*it, ec)) fs::remove(*it, ec);
    written_.clear();
  }

 private:
  fs::path out_, staging_;
  bool force_;
  std::vector<std::string> pending_, written_;
};

struct Ctx {
  const ExperimentConfig& cfg;
  Outputs& out;
  std::string stage;
};

std::string corpus_name(const std::string& kind, const std::string& app, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return "corpus/" + kind + "_" + app + "_" + buf + ".csv";
}

CalibratedSetup load_setup(const Ctx& c) {
  if (c.out.exists("calibration.json"))
    return calibrated_setup(c.cfg, calibration_from_json(read_json_file(c.out.final_path("calibration.json"))));
  if (!c.cfg.calibrate) return calibrated_setup(c.cfg, uncalibrated_result(c.cfg));
  throw StageError(c.stage, "calibration.json not found; run the calibrate stage first");
}

std::vector<LabeledTraces> load_corpus(const Ctx& c) {
  if (!c.out.exists("corpus/manifest.csv")) throw StageError(c.stage, "corpus/manifest.csv not found; run synth first");
  const auto rows = read_csv(c.out.final_path("corpus/manifest.csv"), "app,class,index,beam_file,power_file");
  std::vector<LabeledTraces> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const LabeledTraces& g) { return g.label == r[0]; });
    if (it == groups.end()) {
      groups.push_back({r[0], {}});
      it = groups.end() - 1;
    }
    auto tr = read_power_csv(c.out.final_path(r[4]).string(), r[0]);
    BEAMSENSE_REQUIRE(std::abs(tr.dt_ms - c.cfg.dt_ms) < 1e-9, r[4] + " was written with a different dt");
    it->traces.push_back(std::move(tr));
  }
  return groups;
}

void stage_calibrate(Ctx& c) {
  const auto& cfg = c.cfg;
  CalibrationResult cal;
  if (cfg.calibrate) {
    auto cc = cfg.calibration;
    cc.dt_ms = cfg.dt_ms;
    cc.seed = derive_seed(cfg.seed, "calibration");
    cal = calibrate_channel(cfg.profiles, cfg.targets, cfg.channel, cfg.walk, cc);
  } else {
    cal = uncalibrated_result(cfg);
  }
  write_json(c.out.file("calibration.json"), calibration_to_json(cal, cfg.calibrate));
}

void stage_synth(Ctx& c) {
  const auto& cfg = c.cfg;
  const auto setup = load_setup(c);
  const std::uint64_t seed = derive_seed(cfg.seed, "corpus");
  std::ostringstream manifest;
  manifest << "app,class,index,beam_file,power_file\n";
  for (const auto& p : setup.profiles) {
    for (std::size_t i = 0; i < cfg.corpus.traces_per_app; ++i) {
      const auto [beam, power] = corpus_trace(p, setup.gain, cfg.walk, cfg.corpus.duration_ms, cfg.dt_ms, seed, i);
      const auto bname = corpus_name("beam", p.name, i), pname = corpus_name("power", p.name, i);
      write_beam_csv(c.out.file(bname).string(), beam);
      write_power_csv(c.out.file(pname).string(), power);
      manifest << p.name << ',' << to_string(p.class_label) << ',' << i << ',' << bname << ',' << pname << '\n';
    }
  }
  write_text(c.out.file("corpus/manifest.csv"), manifest.str());
}

void stage_features(Ctx& c) {
  const auto& cfg = c.cfg;
  const auto corpus = load_corpus(c);

  std::ostringstream fcsv;
  fcsv << "app,slope,mean,variance,v100,stft_sum,lag1\n";
  for (const auto& g : corpus)
    for (const auto& tr : g.traces) {
      const auto fv = extract_features(tr, cfg.features.window, cfg.features.stft);
      fcsv << g.label;
      for (double v : fv.as_array()) fcsv << ',' << num(v);
      fcsv << '\n';
    }
  write_text(c.out.file("features.csv"), fcsv.str());

  std::ostringstream explained;
  explained << "window,pc1_ratio,pc2_ratio\n";
  for (const auto& w : cfg.features.pca_windows) {
    const auto d = feature_dataset(corpus, cfg.profiles, w, cfg.features.stft, LabelLevel::app);
    const auto pca = pca2(d.rows);
    std::ostringstream s;
    s << "app,pc1,pc2\n";
    for (std::size_t i = 0; i < d.size(); ++i)
      s << d.class_names[d.labels[i]] << ',' << num(pca.projection[i][0]) << ',' << num(pca.projection[i][1]) << '\n';
    write_text(c.out.file("pca_" + window_tag(w) + ".csv"), s.str());
    explained << window_tag(w) << ',' << num(pca.explained_ratio[0]) << ',' << num(pca.explained_ratio[1]) << '\n';
  }
  write_text(c.out.file("pca_explained.csv"), explained.str());

  std::ostringstream slopes;
  slopes << "app,window_end_ms,slope_mean,slope_std\n";
  for (const auto& g : corpus)
    for (double end : cfg.features.slope_window_ends) {
      std::vector<double> v;
      for (const auto& tr : g.traces) v.push_back(lsf_slope(tr, {0.0, end}));
      const auto s = stats_of(v);
      slopes << g.label << ',' << num(end) << ',' << num(s.mean) << ',' << num(s.std) << '\n';
    }
  write_text(c.out.file("plot_slope_window.csv"), slopes.str());

  // Ensemble dynamics and fall times come from a separate, longer simulation.
  const auto setup = load_setup(c);
  const auto& dyn = cfg.dynamics;
  const double gamma = cfg.track.controller.detect_gamma;
  std::vector<EnsembleDynamics> ens;
  for (const auto& p : setup.profiles) {
    const double duration = p.name == "video" ? dyn.video_duration_ms : dyn.duration_ms;
    ens.push_back(simulate_dynamics(p, setup.gain, cfg.walk, cfg.dt_ms, dyn.traces_per_app, duration,
                                    dyn.grid_step_ms, dyn.thresholds_db, gamma, derive_seed(cfg.seed, "dynamics")));
  }

  std::ostringstream ecsv;
  ecsv << "app,t_ms,mean_db,std_db\n";
  for (const auto& e : ens)
    for (std::size_t g = 0; g < e.t_ms.size(); ++g)
      ecsv << e.app << ',' << num(e.t_ms[g]) << ',' << num(e.mean_db[g]) << ',' << num(e.std_db[g]) << '\n';
  write_text(c.out.file("plot_ensemble.csv"), ecsv.str());

  std::ostringstream tcsv;
  tcsv << "threshold_db,app,min_ms,mean_ms,max_ms,restricted_mean_ms,crossing_fraction,n_crossed,n_traces\n";
  oj table = oj::array();
  for (std::size_t t = 0; t < dyn.thresholds_db.size(); ++t) {
    oj row;
    row["threshold_db"] = dyn.thresholds_db[t];
    oj apps;
    for (const auto& e : ens) {
      const auto& r = e.falls.rows[t];
      tcsv << num(r.threshold_db) << ',' << e.app << ',' << num(r.min) << ',' << num(r.mean) << ',' << num(r.max)
           << ',' << num(r.restricted_mean) << ',' << num(r.crossing_fraction) << ',' << r.n_crossed << ','
           << r.n_traces << '\n';
      apps[e.app] = {{"min", opt_json(r.min)},
                     {"mean", opt_json(r.mean)},
                     {"max", opt_json(r.max)},
                     {"restricted_mean", r.restricted_mean},
                     {"crossing_fraction", r.crossing_fraction},
                     {"n_crossed", r.n_crossed},
                     {"n_traces", r.n_traces},
                     {"horizon_ms", r.horizon_ms},
                     {"survival_quantile_0.95", opt_json(r.quantile(0.95, QuantileMode::survival))}};
    }
    row["apps"] = apps;
    table.push_back(row);
  }
  write_text(c.out.file("fall_times.csv"), tcsv.str());
  oj fj;
  fj["unit"] = "ms";
  fj["smoothing_gamma"] = gamma;
  fj["traces_per_app"] = dyn.traces_per_app;
  fj["thresholds"] = table;
  oj drops = oj::array();
  for (const auto& e : ens) {
    drops.push_back({{"app", e.app},
                     {"duration_ms", e.t_ms.back()},
                     {"mean_drop_db_at_2s", e.t_ms.back() >= 2000.0 ? oj(e.mean_drop_at(2000.0)) : oj(nullptr)},
                     {"mean_drop_db_at_6s", e.t_ms.back() >= 6000.0 ? oj(e.mean_drop_at(6000.0)) : oj(nullptr)},
                     {"mean_drop_db_at_end", e.mean_drop_at(e.t_ms.back())}});
  }
  fj["ensemble"] = drops;
  write_json(c.out.file("fall_times.json"), fj);
}

void stage_mwtest(Ctx& c) {
  const auto& cfg = c.cfg;
  const auto apps = load_corpus(c);
  const auto classes = group_by_class(apps, cfg.profiles);
  std::uint64_t idx = 0;
  for (const auto& w : cfg.mwtest.windows)
    for (auto n : cfg.mwtest.n_series) {
      const std::string tag = window_tag(w) + "_n" + std::to_string(n);
      write_matrix_csv(c.out.file("mw_app_" + tag + ".csv").string(),
                       pairwise_slope_matrix(apps, w, n, derive_seed(cfg.seed, "mwtest-app", idx)));
      write_matrix_csv(c.out.file("mw_class_" + tag + ".csv").string(),
                       pairwise_slope_matrix(classes, w, n, derive_seed(cfg.seed, "mwtest-class", idx)));
      ++idx;
    }
}

Dataset load_features(const Ctx& c, LabelLevel level) {
  if (!c.out.exists("features.csv")) throw StageError(c.stage, "features.csv not found; run features first");
  const fs::path path = c.out.final_path("features.csv");
  const auto rows = read_csv(path, "app,slope,mean,variance,v100,stft_sum,lag1");
  Dataset d;
  for (const char* n : FeatureVector::names()) d.feature_names.push_back(n);
  // Class indices follow profile order so both label levels are stable.
  for (const auto& p : c.cfg.profiles) {
    const std::string label = level == LabelLevel::app ? p.name : std::string(to_string(p.class_label));
    if (std::find(d.class_names.begin(), d.class_names.end(), label) == d.class_names.end())
      d.class_names.push_back(label);
  }
  for (const auto& r : rows) {
    const auto& p = profile_named(c.cfg.profiles, r[0]);
    const std::string label = level == LabelLevel::app ? p.name : std::string(to_string(p.class_label));
    d.labels.push_back(static_cast<int>(std::find(d.class_names.begin(), d.class_names.end(), label) -
                                        d.class_names.begin()));
    std::vector<double> x;
    for (std::size_t k = 1; k < r.size(); ++k) x.push_back(parse_double(r[k], path));
    d.rows.push_back(std::move(x));
  }
  return d;
}

oj report_json(const ClassificationReport& r) {
  oj j;
  j["level"] = r.level;
  j["class_names"] = r.class_names;
  oj cs = oj::array();
  for (const auto& s : r.scores)
    cs.push_back({{"classifier", s.classifier},
                  {"accuracy", stats_json(s.accuracy)},
                  {"precision", stats_json(s.precision)},
                  {"recall", stats_json(s.recall)},
                  {"f1", stats_json(s.f1)},
                  {"accuracy_runs", s.accuracy_runs}});
  j["classifiers"] = cs;
  return j;
}

void stage_classify(Ctx& c) {
  const auto& cfg = c.cfg;
  const Dataset by_app = load_features(c, LabelLevel::app);
  const Dataset by_class = load_features(c, LabelLevel::cls);
  const auto splits = stratified_splits(by_app.labels, cfg.classify.repetitions, cfg.classify.train_fraction,
                                        derive_seed(cfg.seed, "classify-split"));
  const std::uint64_t seed = derive_seed(cfg.seed, "classify");
  const auto rc = run_classification(by_class, splits, cfg.classify, seed, "class");
  const auto ra = run_classification(by_app, splits, cfg.classify, seed, "app");

  oj mj;
  mj["repetitions"] = cfg.classify.repetitions;
  mj["train_fraction"] = cfg.classify.train_fraction;
  mj["n_samples"] = by_app.size();
  mj["levels"] = oj::array({report_json(rc), report_json(ra)});
  write_json(c.out.file("metrics.json"), mj);

  std::ostringstream mcsv;
  mcsv << "level,classifier,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,"
          "f1_std\n";
  for (const auto* r : {&rc, &ra})
    for (const auto& s : r->scores)
      mcsv << r->level << ',' << s.classifier << ',' << num(s.accuracy.mean) << ',' << num(s.accuracy.std) << ','
           << num(s.precision.mean) << ',' << num(s.precision.std) << ',' << num(s.recall.mean) << ','
           << num(s.recall.std) << ',' << num(s.f1.mean) << ',' << num(s.f1.std) << '\n';
  write_text(c.out.file("metrics.csv"), mcsv.str());

  std::ostringstream icsv;
  icsv << "feature,class_level,app_level\n";
  for (std::size_t f = 0; f < by_app.n_features(); ++f)
    icsv << by_app.feature_names[f] << ',' << num(rc.importance[f]) << ',' << num(ra.importance[f]) << '\n';
  write_text(c.out.file("importance.csv"), icsv.str());

  // Models fitted on the whole corpus.
  ForestParams fp;
  fp.n_trees = cfg.classify.forest_trees;
  fp.aggregation = cfg.classify.forest_aggregation;
  write_text(c.out.file("models/forest_class.json"),
             to_json(train_forest(by_class, fp, derive_seed(seed, "final-forest:class"))).dump() + "\n");
  write_text(c.out.file("models/forest_app.json"),
             to_json(train_forest(by_app, fp, derive_seed(seed, "final-forest:app"))).dump() + "\n");
  write_text(c.out.file("models/tree_class.json"), to_json(train_tree(by_class, cfg.classify.tree_depth)).dump() + "\n");
  write_text(c.out.file("models/knn_class.json"), to_json(train_knn(by_class, cfg.classify.knn_k)).dump() + "\n");
  write_text(c.out.file("models/gnb_class.json"), to_json(train_gnb(by_class)).dump() + "\n");
}

oj run_summary(const std::string& app, const std::string& cls, const SimResult& r) {
  std::size_t resets = 0, realigns = 0;
  for (const auto& e : r.events) {
    resets += e.action == Action::reset_to_warmup;
    realigns += e.action == Action::realign_now;
  }
  oj j;
  j["app"] = app;
  j["class"] = cls;
  j["intervals"] = r.events.size();
  j["final_phase"] = to_string(r.final_state.phase);
  j["final_interval_ms"] = r.final_state.current_interval_ms;
  j["final_detected_class"] =
      r.final_state.detected ? oj(std::string(to_string(r.final_state.detected->cls))) : oj(nullptr);
  j["outages_total"] = r.outages_total;
  j["outages_active"] = r.outages_active;
  j["resets"] = resets;
  j["realigns"] = realigns;
  if (r.selected_intervals.empty()) {
    j["selected_interval_min_ms"] = nullptr;
    j["selected_interval_max_ms"] = nullptr;
  } else {
    j["selected_interval_min_ms"] = *std::min_element(r.selected_intervals.begin(), r.selected_intervals.end());
    j["selected_interval_max_ms"] = *std::max_element(r.selected_intervals.begin(), r.selected_intervals.end());
  }
  return j;
}

void stage_track(Ctx& c) {
  const auto& cfg = c.cfg;
  const auto setup = load_setup(c);
  TrackerConfig tc = cfg.track.controller;
  tc.dt_ms = cfg.dt_ms;
  PopulationConfig pc = cfg.track.population;
  pc.dt_ms = cfg.dt_ms;
  const auto pop = build_population(setup.profiles, setup.gain, cfg.walk, tc, pc, derive_seed(cfg.seed, "population"));

  oj sj;
  oj popj = oj::array();
  for (const auto& [label, summary] : pop.class_falls) {
    const auto& row = summary.rows.front();
    popj.push_back({{"class", label},
                    {"outage_threshold_db", row.threshold_db},
                    {"crossing_fraction", row.crossing_fraction},
                    {"quantile_ms", opt_json(row.quantile(tc.quantile_x, tc.quantile_mode))},
                    {"estimated_interval_ms", estimate_interval(summary, tc)}});
  }
  sj["population"] = popj;

  oj runs = oj::array();
  for (std::size_t a = 0; a < setup.profiles.size(); ++a) {
    const auto& p = setup.profiles[a];
    const auto r = simulate_tracker(tc, pop, setup.profiles, setup.gain, cfg.walk, {{0, p.name}},
                                    cfg.track.intervals_per_app, derive_seed(cfg.seed, "track:" + p.name));
    write_tracking_jsonl(c.out.file("tracking_" + p.name + ".jsonl").string(), r.events);
    runs.push_back(run_summary(p.name, std::string(to_string(p.class_label)), r));
  }
  sj["runs"] = runs;

  const auto& t = cfg.track;
  const auto r = simulate_tracker(tc, pop, setup.profiles, setup.gain, cfg.walk,
                                  {{0, t.switch_from}, {t.switch_at, t.switch_to}}, t.switch_intervals,
                                  derive_seed(cfg.seed, "track-switch"));
  write_tracking_jsonl(c.out.file("tracking_switch.jsonl").string(), r.events);
  std::optional<std::size_t> latency;
  for (std::size_t i = t.switch_at; i < r.events.size() && !latency; ++i)
    if (r.events[i].action == Action::reset_to_warmup) latency = i - t.switch_at + 1;
  const auto& before = r.events[t.switch_at - (t.switch_at > 0)];
  sj["switch"] = {{"from", t.switch_from},
                  {"to", t.switch_to},
                  {"switch_at_interval", t.switch_at},
                  {"phase_before_switch", to_string(before.phase)},
                  {"interval_before_switch_ms", before.interval_ms},
                  {"reset_after_intervals", latency ? oj(*latency) : oj(nullptr)}};
  write_json(c.out.file("tracking_summary.json"), sj);
}

std::string md_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string md_cell(const oj& v) {
  if (v.is_null()) return "N/A";
  if (v.is_number()) return md_num(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void stage_report(Ctx& c) {
  const auto& cfg = c.cfg;
  std::ostringstream md;
  oj rj;
  md << "# beamsense report\n\nMaster seed: " << cfg.seed << "\n";

  md << "\n## Calibration\n\n";
  if (c.out.exists("calibration.json")) {
    const auto j = read_json_file<oj>(c.out.final_path("calibration.json"));
    rj["calibration"] = j;
    md << "Fitted: " << (j.at("fitted").get<bool>() ? "yes" : "no") << ", beamwidth " << md_cell(j.at("hpbw_deg"))
       << " deg\n\n| app | deg per plane m | 3 dB restricted mean, ms | 10 dB restricted mean, ms | constraint |\n"
          "|---|---|---|---|---|\n";
    for (const auto& p : j.at("profiles"))
      md << "| " << md_cell(p.at("app")) << " | " << md_cell(p.at("plane_to_angle")) << " | "
         << md_cell(p.at("restricted_mean_3db")) << " | " << md_cell(p.at("restricted_mean_10db")) << " | "
         << (p.at("constraint").is_null() ? std::string("-") : md_cell(p.at("constraint")) +
                                                                   (p.at("constraint_binding").get<bool>() ? " (binding)" : ""))
         << " |\n";
  } else {
    md << "Not run.\n";
  }

  md << "\n## Fall times (min / mean / max, ms)\n\n";
  if (c.out.exists("fall_times.json")) {
    const auto j = read_json_file<oj>(c.out.final_path("fall_times.json"));
    rj["fall_times"] = j;
    const auto& rows = j.at("thresholds");
    std::vector<std::string> apps;
    for (const auto& [k, v] : rows.front().at("apps").items()) apps.push_back(k);
    md << "| threshold, dB |";
    for (const auto& a : apps) md << ' ' << a << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < apps.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& r : rows) {
      md << "| " << md_cell(r.at("threshold_db")) << " |";
      for (const auto& a : apps) {
        const auto& v = r.at("apps").at(a);
        md << ' ' << md_cell(v.at("min")) << " / " << md_cell(v.at("mean")) << " / " << md_cell(v.at("max")) << " |";
      }
      md << '\n';
    }
    md << "\n| app | mean drop at 2 s, dB | at 6 s, dB | at end, dB |\n|---|---|---|---|\n";
    for (const auto& e : j.at("ensemble"))
      md << "| " << md_cell(e.at("app")) << " | " << md_cell(e.at("mean_drop_db_at_2s")) << " | "
         << md_cell(e.at("mean_drop_db_at_6s")) << " | " << md_cell(e.at("mean_drop_db_at_end")) << " |\n";
  } else {
    md << "Not run.\n";
  }

  md << "\n## Mann-Whitney p-values\n";
  oj mw = oj::array();
  for (const auto& w : cfg.mwtest.windows)
    for (auto n : cfg.mwtest.n_series)
      for (const char* level : {"class", "app"}) {
        const std::string name = std::string("mw_") + level + "_" + window_tag(w) + "_n" + std::to_string(n) + ".csv";
        if (!c.out.exists(name)) continue;
        std::ifstream f(c.out.final_path(name));
        std::string header, line;
        std::getline(f, header);
        const auto labels = split_csv(header);
        md << "\n" << level << " level, slopes over " << num(w.start_ms) << "-" << num(w.end_ms) << " ms, " << n
           << " series\n\n|";
        for (const auto& l : labels) md << ' ' << l << " |";
        md << "\n|";
        for (std::size_t i = 0; i < labels.size(); ++i) md << "---|";
        md << '\n';
        oj mat = oj::array();
        while (std::getline(f, line)) {
          const auto cells = split_csv(line);
          md << "| " << cells[0] << " |";
          oj row = oj::array();
          for (std::size_t k = 1; k < cells.size(); ++k) {
            const double v = parse_double(cells[k], name);
            md << ' ' << md_num(v) << " |";
            row.push_back(v);
          }
          md << '\n';
          mat.push_back(row);
        }
        mw.push_back({{"file", name},
                      {"labels", std::vector<std::string>(labels.begin() + 1, labels.end())},
                      {"p", mat}});
      }
  if (mw.empty()) md << "\nNot run.\n";
  rj["mwtest"] = mw;

  md << "\n## Classification (mean over splits)\n\n";
  if (c.out.exists("metrics.json")) {
    const auto j = read_json_file<oj>(c.out.final_path("metrics.json"));
    rj["classification"] = j;
    md << "| labels | classifier | accuracy | precision | recall | F1 |\n|---|---|---|---|---|---|\n";
    for (const auto& l : j.at("levels"))
      for (const auto& s : l.at("classifiers"))
        md << "| " << md_cell(l.at("level")) << " | " << md_cell(s.at("classifier")) << " | "
           << md_cell(s.at("accuracy").at("mean")) << " | " << md_cell(s.at("precision").at("mean")) << " | "
           << md_cell(s.at("recall").at("mean")) << " | " << md_cell(s.at("f1").at("mean")) << " |\n";
  } else {
    md << "Not run.\n";
  }
  if (c.out.exists("importance.csv")) {
    const fs::path path = c.out.final_path("importance.csv");
    const auto rows = read_csv(path, "feature,class_level,app_level");
    md << "\n| feature | importance (class) | importance (app) |\n|---|---|---|\n";
    oj imp = oj::array();
    for (const auto& r : rows) {
      md << "| " << r[0] << " | " << md_num(parse_double(r[1], path)) << " | " << md_num(parse_double(r[2], path))
         << " |\n";
      imp.push_back({{"feature", r[0]}, {"class_level", parse_double(r[1], path)}, {"app_level", parse_double(r[2], path)}});
    }
    rj["importance"] = imp;
  }

  md << "\n## Tracking\n\n";
  if (c.out.exists("tracking_summary.json")) {
    const auto j = read_json_file<oj>(c.out.final_path("tracking_summary.json"));
    rj["tracking"] = j;
    md << "| class | crossing fraction | quantile, ms | interval, ms |\n|---|---|---|---|\n";
    for (const auto& p : j.at("population"))
      md << "| " << md_cell(p.at("class")) << " | " << md_cell(p.at("crossing_fraction")) << " | "
         << md_cell(p.at("quantile_ms")) << " | " << md_cell(p.at("estimated_interval_ms")) << " |\n";
    md << "\n| app | intervals | final phase | final interval, ms | outages | outages while active | resets |\n"
          "|---|---|---|---|---|---|---|\n";
    for (const auto& r : j.at("runs"))
      md << "| " << md_cell(r.at("app")) << " | " << md_cell(r.at("intervals")) << " | " << md_cell(r.at("final_phase"))
         << " | " << md_cell(r.at("final_interval_ms")) << " | " << md_cell(r.at("outages_total")) << " | "
         << md_cell(r.at("outages_active")) << " | " << md_cell(r.at("resets")) << " |\n";
    const auto& s = j.at("switch");
    md << "\nSwitch " << md_cell(s.at("from")) << " -> " << md_cell(s.at("to")) << " at interval "
       << md_cell(s.at("switch_at_interval")) << ": reset after " << md_cell(s.at("reset_after_intervals"))
       << " intervals.\n";
  } else {
    md << "Not run.\n";
  }

  write_text(c.out.file("report.md"), md.str());
  write_json(c.out.file("report.json"), rj);
}

}  // namespace

void run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opts) {
  try {
    validate(cfg);
  } catch (const ValidationError& e) {
    throw StageError("config", e.what());
  }
  const auto stages = opts.stages.empty() ? pipeline_stages() : opts.stages;
  fs::create_directories(opts.out_dir);
  Outputs out(opts.out_dir, opts.force);

  // The config record may be rewritten unchanged; a different one needs --force.
  const std::string cfg_text = to_json(cfg).dump(2) + "\n";
  const fs::path cfg_path = opts.out_dir / "config.json";
  if (fs::exists(cfg_path) && !opts.force) {
    std::ifstream f(cfg_path, std::ios::binary);
    const std::string existing((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (existing != cfg_text)
      throw StageError("config", "refusing to overwrite " + cfg_path.string() + " written with another config (use --force)");
  }

  static const std::map<std::string, void (*)(Ctx&)> run{
      {"calibrate", stage_calibrate}, {"synth", stage_synth},       {"features", stage_features},
      {"mwtest", stage_mwtest},       {"classify", stage_classify}, {"track", stage_track},
      {"report", stage_report}};
  static const std::map<std::string, std::string> marker{
      {"calibrate", "calibration.json"}, {"synth", "corpus/manifest.csv"}, {"features", "features.csv"},
      {"mwtest", ""},                    {"classify", "metrics.json"},     {"track", "tracking_summary.json"},
      {"report", "report.md"}};
  if (!opts.force)
    for (const auto& s : stages) {
      const auto& m = marker.at(s);
      if (!m.empty() && out.exists(m))
        throw StageError(s, "refusing to overwrite " + out.final_path(m).string() + " (use --force)");
    }

  std::string current = "config";
  try {
    if (!fs::exists(cfg_path) || opts.force) {
      write_text(out.file("config.json"), cfg_text);
      out.commit(current);
    }
    for (const auto& s : stages) {
      current = s;
      Ctx ctx{cfg, out, s};
      run.at(s)(ctx);
      out.commit(s);
    }
  } catch (const StageError&) {
    out.rollback();
    throw;
  } catch (const std::exception& e) {
    out.rollback();
    throw StageError(current, e.what());
  }
}

}  // namespace beamsense
