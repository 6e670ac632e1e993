#include "bmvc/data.hpp"
#include "bmvc/eval.hpp"
#include "bmvc/train.hpp"
#include "bmvc/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace bmvc;

namespace {

struct RunFlags {
  std::string data;
  std::string out;
  int clusters = 0;
  double lambda = 10.0;
  double lr = 0.001;
  int epochs = 3000;
  int k_neighbors = 10;
  std::string fusion = "cat";
  std::string mode = "rec+vcr";
  int graph_refresh = 1;
  std::uint64_t seed = 0;
  int restarts = 10;
  std::vector<int> hidden = {196, 128};
  int latent = 64;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--data", f.data, "Dataset directory (views.txt layout)")->required();
  cmd->add_option("--clusters", f.clusters, "Number of clusters")->required();
  cmd->add_option("--lambda", f.lambda, "VCR weight")->capture_default_str();
  cmd->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--k-neighbors", f.k_neighbors, "Adaptive-neighbor count")->capture_default_str();
  cmd->add_option("--fusion", f.fusion, "Fusion mode: cat|asum|wsum")->capture_default_str();
  cmd->add_option("--mode", f.mode, "Loss mode: rec|vcr|rec+vcr")->capture_default_str();
  cmd->add_option("--graph-refresh", f.graph_refresh, "Joint-graph refresh interval (epochs)")->capture_default_str();
  cmd->add_option("--seed", f.seed, "Random seed")->capture_default_str();
  cmd->add_option("--restarts", f.restarts, "K-means restarts for evaluation")->capture_default_str();
  cmd->add_option("--hidden", f.hidden, "Encoder hidden widths")->expected(-1);
  cmd->add_option("--latent", f.latent, "Latent width")->capture_default_str();
  cmd->add_option("--out", f.out, "Output directory")->required();
}

TrainConfig to_train_config(const RunFlags& f) {
  TrainConfig cfg;
  cfg.lambda = f.lambda;
  cfg.learning_rate = f.lr;
  cfg.epochs = f.epochs;
  cfg.k_neighbors = f.k_neighbors;
  cfg.n_clusters = f.clusters;
  cfg.fusion = parse_fusion(f.fusion);
  cfg.mode = parse_loss_mode(f.mode);
  cfg.graph_refresh = f.graph_refresh;
  cfg.seed = f.seed;
  cfg.hidden = f.hidden;
  cfg.latent = f.latent;
  return cfg;
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path + " for fingerprinting");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json config_json(const RunFlags& f) {
  json c;
  c["data"] = f.data;
  c["clusters"] = f.clusters;
  c["lambda"] = f.lambda;
  c["epochs"] = f.epochs;
  c["lr"] = f.lr;
  c["k_neighbors"] = f.k_neighbors;
  c["fusion"] = f.fusion;
  c["mode"] = f.mode;
  c["graph_refresh"] = f.graph_refresh;
  c["seed"] = f.seed;
  c["restarts"] = f.restarts;
  c["hidden"] = f.hidden;
  c["latent"] = f.latent;
  c["out"] = f.out;
  return c;
}

json dataset_fingerprint(const std::string& dir, const ViewDataset& ds) {
  json files;
  files["views.txt"] = hex64(fnv1a_file(detail::join_path(dir, "views.txt")));
  for (const std::string& name : ds.names) {
    files[name] = hex64(fnv1a_file(detail::join_path(dir, name)));
  }
  const std::string labels = detail::join_path(dir, "labels.csv");
  if (fs::exists(labels)) files["labels.csv"] = hex64(fnv1a_file(labels));
  json d;
  d["dir"] = dir;
  d["files"] = std::move(files);
  return d;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

// Written before any training starts so a run is reconstructible from its
// manifest alone.
void write_manifest(const std::string& command, const RunFlags& f, const ViewDataset& ds,
                    const std::vector<std::string>& outputs) {
  json m;
  m["version"] = kVersion;
  m["command"] = command;
  m["started_at"] = utc_now();
  m["config"] = config_json(f);
  if (!f.data.empty()) m["dataset"] = dataset_fingerprint(f.data, ds);
  json outs = json::array();
  for (const std::string& o : outputs) outs.push_back(o);
  m["outputs"] = std::move(outs);
  write_json(m, detail::join_path(f.out, "manifest.json"));
}

double round2(double x) { return std::round(x * 10000.0) / 100.0; }

json metrics_json(const MetricsReport& r) {
  json j;
  j["acc"] = {{"pct", round2(r.acc)}, {"raw", r.acc}};
  j["nmi"] = {{"pct", round2(r.nmi)}, {"raw", r.nmi}};
  j["ari"] = {{"pct", round2(r.ari)}, {"raw", r.ari}};
  j["fscore"] = {{"pct", round2(r.fscore)}, {"raw", r.fscore}};
  return j;
}

void require_labels(const ViewDataset& ds, const char* what) {
  if (!ds.has_labels()) {
    throw std::runtime_error(std::string(what) + " needs labels.csv in the dataset directory");
  }
}

int cmd_train(const RunFlags& f) {
  ViewDataset ds = load_dataset(f.data);
  fs::create_directories(f.out);
  std::vector<std::string> outputs = {"manifest.json", "history.csv", "checkpoint.bin"};
  if (ds.has_labels()) outputs.push_back("metrics.json");
  write_manifest("train", f, ds, outputs);

  TrainConfig cfg = to_train_config(f);
  const std::string ckpt = detail::join_path(f.out, "checkpoint.bin");
  cfg.epoch_callback = [&](int epoch, const ModelParams& p) {
    if (epoch % 500 == 0 && epoch < cfg.epochs) save_checkpoint(p, ckpt);
  };
  TrainResult res = train(ds, cfg);
  write_history_csv(res.history, ds.view_count(), detail::join_path(f.out, "history.csv"));
  save_checkpoint(res.params, ckpt);
  std::printf("trained %d epochs, final total loss %.6g\n", f.epochs,
              res.history.epochs.back().loss.total);

  if (ds.has_labels()) {
    ForwardSnapshot snap = forward_snapshot(res.params, ds.views);
    const MetricsReport r = evaluate(snap.f, ds.labels, f.clusters, f.restarts, f.seed);
    write_json(metrics_json(r), detail::join_path(f.out, "metrics.json"));
    std::printf("acc %.2f nmi %.2f ari %.2f fscore %.2f\n", round2(r.acc), round2(r.nmi),
                round2(r.ari), round2(r.fscore));
  }
  return 0;
}

struct AblateRow {
  std::string mode;
  std::string fusion;
  std::uint64_t seed = 0;
  bool ok = false;
  MetricsReport metrics;
  std::string error;
};

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

int cmd_ablate(const RunFlags& f, const std::vector<std::uint64_t>& seeds) {
  ViewDataset ds = load_dataset(f.data);
  require_labels(ds, "ablate");
  fs::create_directories(f.out);
  write_manifest("ablate", f, ds, {"manifest.json", "ablation.csv"});

  const std::vector<std::string> modes = {"rec", "vcr", "rec+vcr"};
  const std::vector<std::string> fusions = {"cat", "asum", "wsum"};
  std::vector<AblateRow> rows;
  for (const std::string& mode : modes) {
    for (const std::string& fusion : fusions) {
      for (std::uint64_t seed : seeds) {
        AblateRow row;
        row.mode = mode;
        row.fusion = fusion;
        row.seed = seed;
        try {
          RunFlags rf = f;
          rf.mode = mode;
          rf.fusion = fusion;
          rf.seed = seed;
          TrainConfig cfg = to_train_config(rf);
          TrainResult res = train(ds, cfg);
          ForwardSnapshot snap = forward_snapshot(res.params, ds.views);
          row.metrics = evaluate(snap.f, ds.labels, f.clusters, f.restarts, seed);
          row.ok = true;
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        std::printf("%s %s seed %llu: %s\n", mode.c_str(), fusion.c_str(),
                    static_cast<unsigned long long>(seed),
                    row.ok ? format_g17(row.metrics.acc).c_str() : row.error.c_str());
        rows.push_back(std::move(row));
      }
    }
  }

  const std::string path = detail::join_path(f.out, "ablation.csv");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "mode,fusion,seed,acc,nmi,ari,fscore,status\n";
  for (const AblateRow& r : rows) {
    out << r.mode << "," << r.fusion << "," << r.seed << ",";
    if (r.ok) {
      out << format_g17(r.metrics.acc) << "," << format_g17(r.metrics.nmi) << ","
          << format_g17(r.metrics.ari) << "," << format_g17(r.metrics.fscore) << ",ok\n";
    } else {
      out << ",,,,error: " << csv_safe(r.error) << "\n";
    }
  }
  out << "\n";
  out << "mode,fusion,n,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std,fscore_mean,fscore_std\n";
  for (const std::string& mode : modes) {
    for (const std::string& fusion : fusions) {
      std::vector<const MetricsReport*> ok;
      for (const AblateRow& r : rows) {
        if (r.ok && r.mode == mode && r.fusion == fusion) ok.push_back(&r.metrics);
      }
      if (ok.empty()) continue;
      auto stat = [&](double MetricsReport::* field, double* mean, double* sd) {
        double s = 0.0;
        for (const MetricsReport* r : ok) s += r->*field;
        *mean = s / static_cast<double>(ok.size());
        double v = 0.0;
        for (const MetricsReport* r : ok) v += (r->*field - *mean) * (r->*field - *mean);
        *sd = std::sqrt(v / static_cast<double>(ok.size()));
      };
      double am, as, nm, ns, rm, rs, fm, fsd;
      stat(&MetricsReport::acc, &am, &as);
      stat(&MetricsReport::nmi, &nm, &ns);
      stat(&MetricsReport::ari, &rm, &rs);
      stat(&MetricsReport::fscore, &fm, &fsd);
      out << mode << "," << fusion << "," << ok.size() << "," << format_g17(am) << ","
          << format_g17(as) << "," << format_g17(nm) << "," << format_g17(ns) << ","
          << format_g17(rm) << "," << format_g17(rs) << "," << format_g17(fm) << ","
          << format_g17(fsd) << "\n";
    }
  }
  if (!out.good()) throw std::runtime_error("write failed for " + path);
  return 0;
}

int cmd_grid(const RunFlags& f, std::vector<double> lambdas, std::vector<std::uint64_t> seeds) {
  ViewDataset ds = load_dataset(f.data);
  require_labels(ds, "grid");
  fs::create_directories(f.out);
  write_manifest("grid", f, ds, {"manifest.json", "grid.csv"});

  if (lambdas.empty()) {
    for (int e = -5; e <= 5; ++e) lambdas.push_back(std::pow(10.0, e));
  }
  for (double l : lambdas) {
    if (l < 0.0) throw std::runtime_error("grid: lambda values must be >= 0");
  }
  std::sort(lambdas.begin(), lambdas.end());
  lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());
  if (seeds.empty()) seeds.push_back(f.seed);

  const std::string path = detail::join_path(f.out, "grid.csv");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "lambda,seed,acc,nmi,ari,fscore,status\n";
  for (double lambda : lambdas) {
    for (std::uint64_t seed : seeds) {
      out << format_g17(lambda) << "," << seed << ",";
      try {
        RunFlags rf = f;
        rf.lambda = lambda;
        rf.seed = seed;
        TrainConfig cfg = to_train_config(rf);
        TrainResult res = train(ds, cfg);
        ForwardSnapshot snap = forward_snapshot(res.params, ds.views);
        const MetricsReport r = evaluate(snap.f, ds.labels, f.clusters, f.restarts, seed);
        out << format_g17(r.acc) << "," << format_g17(r.nmi) << "," << format_g17(r.ari) << ","
            << format_g17(r.fscore) << ",ok\n";
        std::printf("lambda %g seed %llu: acc %.4f\n", lambda,
                    static_cast<unsigned long long>(seed), r.acc);
      } catch (const std::exception& e) {
        out << ",,,,error: " << csv_safe(e.what()) << "\n";
        std::printf("lambda %g seed %llu: error %s\n", lambda,
                    static_cast<unsigned long long>(seed), e.what());
      }
    }
  }
  if (!out.good()) throw std::runtime_error("write failed for " + path);
  return 0;
}

int cmd_diagnose(const RunFlags& f) {
  ViewDataset ds = load_dataset(f.data);
  require_labels(ds, "diagnose");
  fs::create_directories(f.out);
  write_manifest("diagnose", f, ds, {"manifest.json", "diagnose.json"});
  const int m = ds.view_count();

  auto eval_of = [&](const Matrix& x) {
    return metrics_json(evaluate(x, ds.labels, f.clusters, f.restarts, f.seed));
  };
  auto regime_json = [&](const std::vector<Matrix>& zs, const Matrix& fused) {
    json r;
    r["z"] = json::array();
    for (const Matrix& z : zs) r["z"].push_back(eval_of(z));
    r["f"] = eval_of(fused);
    return r;
  };

  // Regime 1: each view trained alone, reconstruction only. The joint
  // embedding for this regime is the concatenation of the independent
  // latents (late fusion of solely-trained views).
  std::vector<Matrix> single_z;
  std::vector<ModelParams> single_params;
  for (int r = 0; r < m; ++r) {
    ViewDataset one;
    one.views = {ds.views[static_cast<size_t>(r)]};
    one.names = {ds.names[static_cast<size_t>(r)]};
    one.labels = ds.labels;
    RunFlags rf = f;
    rf.mode = "rec";
    TrainConfig cfg = to_train_config(rf);
    TrainResult res = train(one, cfg);
    single_z.push_back(forward_snapshot(res.params, one.views).z[0]);
    single_params.push_back(std::move(res.params));
  }
  Matrix single_f(ds.samples(), static_cast<Eigen::Index>(m) * f.latent);
  for (int r = 0; r < m; ++r) {
    single_f.middleCols(static_cast<Eigen::Index>(r) * f.latent, f.latent) =
        single_z[static_cast<size_t>(r)];
  }

  // Regime 2: joint training, reconstruction only.
  RunFlags rec_flags = f;
  rec_flags.mode = "rec";
  TrainResult rec_res = train(ds, to_train_config(rec_flags));
  ForwardSnapshot rec_snap = forward_snapshot(rec_res.params, ds.views);

  // Regime 3: joint training with VCR.
  RunFlags full_flags = f;
  full_flags.mode = "rec+vcr";
  TrainResult full_res = train(ds, to_train_config(full_flags));
  ForwardSnapshot full_snap = forward_snapshot(full_res.params, ds.views);

  json report;
  report["version"] = kVersion;
  report["views"] = m;
  json regimes;
  regimes["single"] = regime_json(single_z, single_f);
  regimes["joint_rec"] = regime_json(rec_snap.z, rec_snap.f);
  regimes["rec_vcr"] = regime_json(full_snap.z, full_snap.f);
  report["regimes"] = std::move(regimes);

  json zeta;
  zeta["joint_rec"] = per_view_vcr_values(rec_res.params, ds.views, f.k_neighbors);
  zeta["rec_vcr"] = per_view_vcr_values(full_res.params, ds.views, f.k_neighbors);
  report["zeta"] = std::move(zeta);

  auto traces_json = [&](const TrainHistory& h) {
    json t;
    json rec_trace = json::array();
    json vcr_trace = json::array();
    for (int r = 0; r < m; ++r) {
      json a = json::array(), b = json::array();
      for (const EpochRecord& e : h.epochs) {
        a.push_back(e.gnorm_rec[static_cast<size_t>(r)]);
        b.push_back(e.gnorm_vcr[static_cast<size_t>(r)]);
      }
      rec_trace.push_back(std::move(a));
      vcr_trace.push_back(std::move(b));
    }
    t["gnorm_rec"] = std::move(rec_trace);
    t["gnorm_vcr"] = std::move(vcr_trace);
    return t;
  };
  json traces;
  traces["joint_rec"] = traces_json(rec_res.history);
  traces["rec_vcr"] = traces_json(full_res.history);
  report["traces"] = std::move(traces);

  write_json(report, detail::join_path(f.out, "diagnose.json"));
  std::printf("diagnose report written for %d views x 3 regimes\n", m);
  return 0;
}

int cmd_synth(int n, int clusters, const std::vector<std::string>& view_specs, std::uint64_t seed,
              const std::string& out) {
  SynthSpec spec;
  spec.n_samples = n;
  spec.n_clusters = clusters;
  spec.seed = seed;
  for (const std::string& s : view_specs) {
    SynthView v;
    if (std::sscanf(s.c_str(), "%d:%lf:%lf", &v.dim, &v.separation, &v.noise_sigma) != 3) {
      throw std::runtime_error("synth: --view expects dim:separation:sigma, got '" + s + "'");
    }
    spec.views.push_back(v);
  }
  ViewDataset ds = synth_generate(spec);
  fs::create_directories(out);
  save_dataset(ds, out);

  json m;
  m["version"] = kVersion;
  m["command"] = "synth";
  m["started_at"] = utc_now();
  json c;
  c["n"] = n;
  c["clusters"] = clusters;
  c["views"] = view_specs;
  c["seed"] = seed;
  c["out"] = out;
  m["config"] = std::move(c);
  json files;
  files["views.txt"] = hex64(fnv1a_file(detail::join_path(out, "views.txt")));
  for (const std::string& name : ds.names) {
    files[name] = hex64(fnv1a_file(detail::join_path(out, name)));
  }
  files["labels.csv"] = hex64(fnv1a_file(detail::join_path(out, "labels.csv")));
  m["outputs"] = std::move(files);
  write_json(m, detail::join_path(out, "manifest.json"));
  std::printf("wrote %d-view dataset, %d samples, %d clusters\n", ds.view_count(), n, clusters);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced multi-view clustering trainer and diagnostics"};
  app.require_subcommand(1);

  RunFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one model and evaluate");
  add_run_flags(train_cmd, train_flags);

  RunFlags ablate_flags;
  std::vector<std::uint64_t> ablate_seeds;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Mode x fusion ablation grid");
  add_run_flags(ablate_cmd, ablate_flags);
  ablate_cmd->add_option("--seeds", ablate_seeds, "Seeds, one run per seed")
      ->required()
      ->expected(-1);

  RunFlags grid_flags;
  std::vector<double> grid_lambdas;
  std::vector<std::uint64_t> grid_seeds;
  CLI::App* grid_cmd = app.add_subcommand("grid", "Lambda sweep");
  add_run_flags(grid_cmd, grid_flags);
  grid_cmd->add_option("--lambdas", grid_lambdas, "Lambda values (default 1e-5..1e5 decades)")
      ->expected(-1);
  grid_cmd->add_option("--seeds", grid_seeds, "Seeds (default: --seed)")->expected(-1);

  RunFlags diag_flags;
  CLI::App* diag_cmd = app.add_subcommand("diagnose", "Single-view vs joint vs balanced report");
  add_run_flags(diag_cmd, diag_flags);

  int synth_n = 300;
  int synth_clusters = 0;
  std::vector<std::string> synth_views;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multi-view dataset");
  synth_cmd->add_option("--n", synth_n, "Samples")->capture_default_str();
  synth_cmd->add_option("--clusters", synth_clusters, "Clusters")->required();
  synth_cmd->add_option("--view", synth_views, "View spec dim:separation:sigma (repeatable)")
      ->required();
  synth_cmd->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_flags);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_flags, ablate_seeds);
    if (grid_cmd->parsed()) return cmd_grid(grid_flags, grid_lambdas, grid_seeds);
    if (diag_cmd->parsed()) return cmd_diagnose(diag_flags);
    if (synth_cmd->parsed()) {
      return cmd_synth(synth_n, synth_clusters, synth_views, synth_seed, synth_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
