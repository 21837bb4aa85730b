#include "agsv/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "agsv/analytics.hpp"
#include "agsv/checkpoint.hpp"
#include "agsv/downstream.hpp"
#include "agsv/errors.hpp"
#include "agsv/service.hpp"
#include "agsv/store.hpp"
#include "agsv/trainer.hpp"

namespace agsv::cli {

namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Every PNG/JPEG directly inside dir, by file name.
std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no PNG or JPEG images in " + dir.string());
  return files;
}

Image load_for(const EncoderCheckpoint& ckpt, const fs::path& path) {
  const ModelConfig& m = ckpt.model();
  return read_image(path, m.input_height, m.input_width, m.channels);
}

// Row-wise encode in fixed batches so memory stays flat on big manifests.
Matrix encode_all(const EncoderCheckpoint& ckpt, const std::vector<Image>& images) {
  constexpr std::size_t kBatch = 64;
  Matrix out(static_cast<Eigen::Index>(images.size()), ckpt.embed_dim());
  for (std::size_t start = 0; start < images.size(); start += kBatch) {
    const std::size_t n = std::min(kBatch, images.size() - start);
    const Matrix rows = encode(ckpt, std::span<const Image>(images).subspan(start, n));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = rows;
  }
  return out;
}

struct StoreMatrix {
  Matrix points;
  std::vector<std::string> ids;
  std::vector<Metadata> metadata;
};

StoreMatrix store_matrix(const fs::path& path) {
  const EmbeddingStore store = EmbeddingStore::load(path);
  const auto records = store.records();
  if (records.empty()) throw EmptyStore();
  StoreMatrix m;
  m.points.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(records[0].vector.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = 0; j < records[i].vector.size(); ++j)
      m.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records[i].vector[j];
    m.ids.push_back(records[i].id);
    m.metadata.push_back(records[i].metadata);
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("cannot write " + path.string());
}

// Dense group index per distinct value, in sorted value order.
std::vector<int> group_by(const std::vector<std::string>& values) {
  const std::set<std::string> distinct(values.begin(), values.end());
  std::vector<int> groups;
  for (const auto& v : values)
    groups.push_back(static_cast<int>(std::distance(distinct.begin(), distinct.find(v))));
  return groups;
}

void write_plot(const fs::path& path, const Projection3D& proj, const std::vector<int>& groups) {
  std::vector<double> x(proj.coordinates.rows()), y(proj.coordinates.rows());
  for (Eigen::Index i = 0; i < proj.coordinates.rows(); ++i) {
    x[i] = proj.coordinates(i, 0);
    y[i] = proj.coordinates(i, 1);
  }
  write_png(path, scatter_plot(x, y, groups));
}

// ---------------------------------------------------------------- options

struct PretrainArgs {
  fs::path data, config, out, loss_csv;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

struct EmbedArgs {
  fs::path ckpt, images, out;
  bool skip_bad = false;
};

struct SearchArgs {
  fs::path store, query, ckpt;
  std::size_t k = 10;
  bool ann = false;
  std::optional<std::size_t> beam;
  std::uint64_t seed = 0;
};

struct OutlierArgs {
  fs::path store, out, plot;
  std::string method = kCentroidDistance;
  std::size_t clusters = 1;
  double sigma = 3.0;
  double minority_fraction = 0.15;
  std::optional<double> threshold;
  std::uint64_t seed = 0;
};

struct ProjectArgs {
  fs::path store, out, plot;
  std::string color_by;
};

struct FramesArgs {
  fs::path store, out;
  std::string keep = "larger";
  std::optional<double> dedup_threshold;
  std::uint64_t seed = 0;
};

struct BalanceArgs {
  fs::path store;
  std::string key;
  std::optional<std::size_t> clusters;
  std::uint64_t seed = 0;
};

struct FinetuneArgs {
  fs::path ckpt, data, report;
  double fraction = 1.0;
  std::string label_key = "label";
  int hidden = 0;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double threshold = 0.5;
  double test_fraction = 0.2;
  bool compare_scratch = false;
  bool whole_network = false;
  double encoder_lr = 1e-4;
  std::uint64_t seed = 0;
};

struct ServeArgs {
  fs::path config, port_file;
};

struct SynthArgs {
  fs::path out;
  std::size_t per_family = 50;
  int size = 16;
  int channels = 3;
  std::uint64_t seed = 0;
};

void add_seed(CLI::App* sub, std::uint64_t& seed) {
  sub->add_option("--seed", seed, "Random seed (also read from SEED)")->envname("SEED")->capture_default_str();
}

// ---------------------------------------------------------------- commands

int cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
  TrainConfig config;
  if (!a.config.empty()) {
    std::ifstream f(a.config);
    if (!f) throw DataError("cannot read config " + a.config.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("config " + a.config.string() + ": " + e.what());
    }
    config = train_config_from_json(j);
  }
  if (a.epochs) config.epochs = *a.epochs;
  if (a.seed) config.seed = *a.seed;
  config.validate();

  std::vector<Image> images;
  const ModelConfig& m = config.model;
  for (const auto& p : image_files(a.data)) images.push_back(read_image(p, m.input_height, m.input_width, m.channels));

  const PretrainResult result = pretrain(images, config);
  save_checkpoint(result.checkpoint, a.out);
  fs::path loss_csv = a.loss_csv;
  if (loss_csv.empty()) loss_csv = fs::path(a.out).replace_extension(".loss.csv");
  write_loss_curve_csv(result.loss_curve, loss_csv);

  out << "images=" << images.size() << " epochs=" << result.loss_curve.size();
  if (!result.loss_curve.empty())
    out << " first_loss=" << fixed(result.loss_curve.front()) << " final_loss=" << fixed(result.loss_curve.back());
  out << "\ncheckpoint " << a.out.string() << "\nloss curve " << loss_csv.string() << "\n";
  return kExitOk;
}

int cmd_embed(const EmbedArgs& a, std::ostream& out, std::ostream& err) {
  const EncoderCheckpoint ckpt = load_checkpoint(a.ckpt);
  const auto entries = read_manifest(a.images);
  std::vector<Image> images;
  std::vector<const ManifestEntry*> kept;
  for (const auto& e : entries) {
    try {
      images.push_back(load_for(ckpt, e.path));
      kept.push_back(&e);
    } catch (const DecodeError& ex) {
      if (!a.skip_bad) throw DecodeError("entry '" + e.id + "': " + ex.what());
      err << "warning: skipping '" << e.id << "': " << ex.what() << "\n";
    }
  }
  EmbeddingStore store;
  if (!images.empty()) {
    const Matrix h = encode_all(ckpt, images);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const Vector row = h.row(static_cast<Eigen::Index>(i)).transpose();
      try {
        store.insert(kept[i]->id, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                     kept[i]->metadata);
      } catch (const NormalizationError&) {
        throw DataError("entry '" + kept[i]->id + "' has a zero embedding");
      }
    }
  }
  store.save(a.out);
  out << "records=" << store.size() << " skipped=" << entries.size() - kept.size() << " dim=" << ckpt.embed_dim()
      << "\nstore " << a.out.string() << "\n";
  return kExitOk;
}

int cmd_search(const SearchArgs& a, std::ostream& out) {
  EmbeddingStore store = EmbeddingStore::load(a.store);
  if (store.size() == 0) throw EmptyStore();
  const EncoderCheckpoint ckpt = load_checkpoint(a.ckpt);
  const std::vector<Image> query{load_for(ckpt, a.query)};
  const Matrix h = encode(ckpt, query);
  const Vector q = h.row(0).transpose();
  const std::span<const double> qs(q.data(), static_cast<std::size_t>(q.size()));

  std::vector<SearchHit> hits;
  if (a.ann) {
    AnnParams params;
    params.seed = a.seed;
    store.build_index(params);
    hits = store.ann_search(qs, a.k, a.beam);
  } else {
    hits = store.exact_search(qs, a.k);
  }
  out << "rank\tid\tsimilarity\n";
  for (std::size_t i = 0; i < hits.size(); ++i)
    out << i + 1 << "\t" << hits[i].id << "\t" << fixed(hits[i].similarity) << "\n";
  return kExitOk;
}

int cmd_outliers(const OutlierArgs& a, std::ostream& out) {
  OutlierConfig cfg;
  cfg.method = a.method;
  cfg.clusters = a.clusters;
  cfg.sigma = a.sigma;
  cfg.minority_fraction = a.minority_fraction;
  cfg.threshold = a.threshold;
  cfg.seed = a.seed;
  cfg.validate();
  const StoreMatrix m = store_matrix(a.store);
  const OutlierReport report = detect_outliers(m.points, cfg, m.ids);
  const std::string jsonl = outlier_report_jsonl(report);
  if (a.out.empty()) {
    out << jsonl;
  } else {
    write_text(a.out, jsonl);
    out << "flagged=" << report.flagged.size() << " of " << m.ids.size() << " threshold=" << fixed(report.threshold)
        << "\n";
  }
  if (!a.plot.empty()) {
    std::vector<int> groups(m.ids.size(), 0);
    for (std::size_t i : report.flagged) groups[i] = 1;
    write_plot(a.plot, project_3d(m.points), groups);
  }
  return kExitOk;
}

int cmd_project(const ProjectArgs& a, std::ostream& out) {
  const StoreMatrix m = store_matrix(a.store);
  const Projection3D proj = project_3d(m.points);
  const std::string jsonl = projection_jsonl(proj, m.ids, m.metadata);
  if (a.out.empty()) {
    out << jsonl;
  } else {
    write_text(a.out, jsonl);
    out << "points=" << m.ids.size() << " explained=" << fixed(proj.explained_variance.sum())
        << " discarded=" << fixed(proj.discarded_variance) << "\n";
  }
  if (!a.plot.empty()) {
    std::vector<int> groups(m.ids.size(), 0);
    if (!a.color_by.empty()) {
      std::vector<std::string> values;
      for (const auto& md : m.metadata) {
        const auto it = md.find(a.color_by);
        values.push_back(it == md.end() ? std::string() : it->second);
      }
      groups = group_by(values);
    }
    write_plot(a.plot, proj, groups);
  }
  return kExitOk;
}

KeepGroup keep_from_string(const std::string& s) {
  if (s == "larger") return KeepGroup::kLarger;
  if (s == "smaller") return KeepGroup::kSmaller;
  if (s == "first") return KeepGroup::kFirst;
  if (s == "second") return KeepGroup::kSecond;
  throw ParameterError("--keep must be larger, smaller, first or second");
}

int cmd_frames(const FramesArgs& a, std::ostream& out) {
  const KeepGroup keep = keep_from_string(a.keep);
  const StoreMatrix m = store_matrix(a.store);
  const FramePartition part = partition_frames(m.points, keep, a.seed);

  const auto& kept = part.groups[part.kept];
  std::vector<bool> selected(m.ids.size(), false);
  if (a.dedup_threshold) {
    Matrix frames(static_cast<Eigen::Index>(kept.size()), m.points.cols());
    for (std::size_t i = 0; i < kept.size(); ++i)
      frames.row(static_cast<Eigen::Index>(i)) = m.points.row(static_cast<Eigen::Index>(kept[i]));
    for (std::size_t i : dedup_frames(frames, *a.dedup_threshold)) selected[kept[i]] = true;
  } else {
    for (std::size_t i : kept) selected[i] = true;
  }

  std::ostringstream csv;
  csv << "id,group,kept,selected\n";
  std::size_t n_selected = 0;
  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    n_selected += selected[i];
    csv << m.ids[i] << "," << part.labels[i] << "," << (part.labels[i] == part.kept) << "," << selected[i] << "\n";
  }
  csv << "# groups=" << part.groups[0].size() << "/" << part.groups[1].size() << ",kept=" << part.kept
      << ",selected=" << n_selected << ",degenerate=" << part.degenerate << "\n";
  if (a.out.empty()) {
    out << csv.str();
  } else {
    write_text(a.out, csv.str());
    out << "kept group " << part.kept << " (" << kept.size() << " frames), selected " << n_selected << "\n";
  }
  return kExitOk;
}

int cmd_balance(const BalanceArgs& a, std::ostream& out) {
  if (a.key.empty() == !a.clusters) throw ParameterError("give exactly one of --key or --clusters");
  const StoreMatrix m = store_matrix(a.store);
  BalanceReport report;
  if (a.clusters) {
    KMeansConfig cfg;
    cfg.k = *a.clusters;
    cfg.seed = a.seed;
    cfg.restarts = 4;
    const ClusterModel model = kmeans(m.points, cfg);
    report = balance_report(std::span<const std::size_t>(model.assignments));
  } else {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < m.ids.size(); ++i) {
      const auto it = m.metadata[i].find(a.key);
      if (it == m.metadata[i].end()) throw DataError("record '" + m.ids[i] + "' has no '" + a.key + "' metadata");
      labels.push_back(it->second);
    }
    report = balance_report(std::span<const std::string>(labels));
  }
  out << "label,count\n";
  for (const auto& [label, count] : report.counts) out << label << "," << count << "\n";
  out << "# total=" << report.total << ",imbalance_ratio=" << fixed(report.imbalance_ratio) << "\n";
  return kExitOk;
}

std::string threshold_cell(const RunReport& r) {
  return r.epochs_to_threshold ? std::to_string(*r.epochs_to_threshold) : "none";
}

int cmd_finetune(const FinetuneArgs& a, std::ostream& out) {
  if (!(a.fraction > 0.0 && a.fraction <= 1.0)) throw ParameterError("--fraction must be in (0, 1]");
  FinetuneConfig cfg;
  cfg.hidden = a.hidden;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.adam.learning_rate = a.lr;
  cfg.loss_threshold = a.threshold;
  cfg.seed = a.seed;
  cfg.validate();
  const WholeNetworkConfig whole{cfg, a.encoder_lr};
  if (a.whole_network) whole.validate();

  const EncoderCheckpoint ckpt = load_checkpoint(a.ckpt);
  const auto entries = read_manifest(a.data);
  std::vector<Image> images;
  std::vector<std::string> names;
  for (const auto& e : entries) {
    const auto it = e.metadata.find(a.label_key);
    if (it == e.metadata.end()) throw DataError("entry '" + e.id + "' has no '" + a.label_key + "' metadata");
    names.push_back(it->second);
    images.push_back(load_for(ckpt, e.path));
  }
  const std::vector<int> labels = group_by(names);
  const int classes = static_cast<int>(std::set<std::string>(names.begin(), names.end()).size());
  const double fractions[] = {a.fraction};

  auto run = [&](const EncoderCheckpoint& encoder) {
    if (a.whole_network)
      return whole_network_label_efficiency(encoder, images, labels, classes, fractions, whole, a.test_fraction)
          .front();
    LabeledEmbeddingSet set{encode_all(encoder, images), labels, classes};
    return label_efficiency_experiment(set, fractions, cfg, a.test_fraction).front();
  };

  out << "encoder\tfraction\ttrain\ttest\taccuracy\tepochs_to_threshold\n";
  const FractionResult ssl = run(ckpt);
  out << "ssl\t" << a.fraction << "\t" << ssl.train_size << "\t" << ssl.test_size << "\t" << fixed(ssl.accuracy)
      << "\t" << threshold_cell(ssl.report) << "\n";
  if (a.compare_scratch) {
    // Same architecture and initialization seed, no pretraining.
    const FractionResult scratch = run(initial_checkpoint(ckpt.config));
    out << "scratch\t" << a.fraction << "\t" << scratch.train_size << "\t" << scratch.test_size << "\t"
        << fixed(scratch.accuracy) << "\t" << threshold_cell(scratch.report) << "\n";
  }
  if (!a.report.empty()) write_text(a.report, run_report_csv(ssl.report));
  return kExitOk;
}

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  const ServiceConfig cfg = load_service_config(a.config);
  auto service = Service::open(cfg);
  HttpServer server(*service);
  const int port = server.bind();

  g_stop = false;
  const auto prev_int = std::signal(SIGINT, on_signal);
  const auto prev_term = std::signal(SIGTERM, on_signal);
  if (!a.port_file.empty()) {
    const fs::path tmp = fs::path(a.port_file).concat(".tmp");
    write_text(tmp, std::to_string(port) + "\n");
    fs::rename(tmp, a.port_file);
  }
  out << "listening on http://" << cfg.host << ":" << port << " (" << service->store().size() << " records)"
      << std::endl;

  // stop() is a no-op until the listener is up, so keep asking until run()
  // has returned.
  std::atomic<bool> finished{false};
  std::thread watcher([&] {
    while (!finished) {
      if (g_stop) server.stop();
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  });
  server.run();
  finished = true;
  watcher.join();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);

  service->persist();
  out << "stopped; " << service->store().size() << " records";
  if (!cfg.store_path.empty()) out << " saved to " << cfg.store_path.string();
  out << "\n";
  return kExitOk;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const SyntheticCorpus corpus = two_family_corpus(a.per_family, a.size, a.size, a.channels, a.seed);
  fs::create_directories(a.out);
  std::ostringstream manifest;
  manifest << "# id\tpath\tmetadata\n";
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu", i);
    write_png(a.out / (std::string(name) + ".png"), corpus.images[i]);
    manifest << name << "\t" << name << ".png\tlabel=" << (corpus.labels[i] == 0 ? "textured" : "smooth") << "\n";
  }
  write_text(a.out / "manifest.tsv", manifest.str());
  out << "images=" << corpus.images.size() << "\nmanifest " << (a.out / "manifest.tsv").string() << "\n";
  return kExitOk;
}

}  // namespace

void request_shutdown() { g_stop = true; }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised image embeddings: pretrain, embed, search, analyze and serve.", "agsv"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 usage, 2 data error, 3 internal or bind failure.");

  PretrainArgs pa;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Contrastive pretraining on a directory of images");
  pretrain_cmd->add_option("--data", pa.data, "Directory of PNG/JPEG images")->required();
  pretrain_cmd->add_option("--config", pa.config, "Training config (JSON); defaults apply when omitted");
  pretrain_cmd->add_option("--out", pa.out, "Checkpoint to write")->required();
  pretrain_cmd->add_option("--loss-csv", pa.loss_csv, "Loss curve CSV (default: <out> with .loss.csv)");
  pretrain_cmd->add_option("--epochs", pa.epochs, "Override the config's epoch count; 0 writes the initial weights");
  pretrain_cmd->add_option("--seed", pa.seed, "Override the config's seed (also read from SEED)")->envname("SEED");

  EmbedArgs ea;
  auto* embed_cmd = app.add_subcommand("embed", "Encode every image of a manifest into a new store");
  embed_cmd->add_option("--ckpt", ea.ckpt, "Encoder checkpoint")->required();
  embed_cmd->add_option("--images", ea.images, "Manifest: id<TAB>path<TAB>key=value... per line")->required();
  embed_cmd->add_option("--out", ea.out, "Store file to write")->required();
  embed_cmd->add_flag("--skip-bad", ea.skip_bad, "Warn and skip undecodable images instead of failing");

  SearchArgs sa;
  auto* search_cmd = app.add_subcommand("search", "Rank store records by cosine similarity to a query image");
  search_cmd->add_option("--store", sa.store, "Store file")->required();
  search_cmd->add_option("--query", sa.query, "Query image (PNG/JPEG)")->required();
  search_cmd->add_option("--ckpt", sa.ckpt, "Encoder checkpoint used to embed the query")->required();
  search_cmd->add_option("-k,--k", sa.k, "Number of hits")->capture_default_str();
  search_cmd->add_flag("--ann", sa.ann, "Approximate search through a freshly built graph index");
  search_cmd->add_option("--beam", sa.beam, "ANN search beam (default: index setting)");
  add_seed(search_cmd, sa.seed);

  OutlierArgs oa;
  auto* outliers_cmd = app.add_subcommand("outliers", "Score and flag outlying store records");
  outliers_cmd->add_option("--store", oa.store, "Store file")->required();
  outliers_cmd->add_option("--method", oa.method, "centroid-distance or minority-cluster")->capture_default_str();
  outliers_cmd->add_option("--clusters", oa.clusters, "k-means clusters")->capture_default_str();
  outliers_cmd->add_option("--sigma", oa.sigma, "centroid-distance: flag above mean + sigma * sd")->capture_default_str();
  outliers_cmd->add_option("--minority-fraction", oa.minority_fraction,
                           "minority-cluster: flag clusters below this share")->capture_default_str();
  outliers_cmd->add_option("--threshold", oa.threshold, "Fixed score threshold, replacing the method's rule");
  outliers_cmd->add_option("--out", oa.out, "Write the JSONL report here instead of stdout");
  outliers_cmd->add_option("--plot", oa.plot, "Scatter plot PNG of the projection, outliers highlighted");
  add_seed(outliers_cmd, oa.seed);

  ProjectArgs pr;
  auto* project_cmd = app.add_subcommand("project", "Project store records to 3D principal components");
  project_cmd->add_option("--store", pr.store, "Store file")->required();
  project_cmd->add_option("--out", pr.out, "Write the JSONL points here instead of stdout");
  project_cmd->add_option("--plot", pr.plot, "Scatter plot PNG of the first two components");
  project_cmd->add_option("--color-by", pr.color_by, "Metadata key that colors the plot");

  FramesArgs fa;
  auto* frames_cmd = app.add_subcommand("frames", "Split a frame sequence into two groups and keep one");
  frames_cmd->add_option("--store", fa.store, "Store of frame embeddings, in frame order")->required();
  frames_cmd->add_option("--keep", fa.keep, "larger, smaller, first or second")->capture_default_str();
  frames_cmd->add_option("--dedup-threshold", fa.dedup_threshold,
                         "Drop kept frames whose cosine to the last selected frame exceeds this");
  frames_cmd->add_option("--out", fa.out, "Write the CSV here instead of stdout");
  add_seed(frames_cmd, fa.seed);

  BalanceArgs ba;
  auto* balance_cmd = app.add_subcommand("balance", "Count records per label or per cluster");
  balance_cmd->add_option("--store", ba.store, "Store file")->required();
  balance_cmd->add_option("--key", ba.key, "Metadata key holding the label");
  balance_cmd->add_option("--clusters", ba.clusters, "Use k-means assignments with this many clusters");
  add_seed(balance_cmd, ba.seed);

  FinetuneArgs fta;
  auto* finetune_cmd = app.add_subcommand("finetune", "Train a classifier head on frozen embeddings, or the whole network");
  finetune_cmd->add_option("--ckpt", fta.ckpt, "Encoder checkpoint")->required();
  finetune_cmd->add_option("--data", fta.data, "Labeled manifest")->required();
  finetune_cmd->add_option("--fraction", fta.fraction, "Share of the training pool to use, in (0, 1]")->required();
  finetune_cmd->add_option("--label-key", fta.label_key, "Metadata key holding the label")->capture_default_str();
  finetune_cmd->add_option("--hidden", fta.hidden, "Hidden units of the head; 0 is a linear probe")->capture_default_str();
  finetune_cmd->add_option("--epochs", fta.epochs, "Training epochs")->capture_default_str();
  finetune_cmd->add_option("--batch-size", fta.batch_size, "Minibatch size")->capture_default_str();
  finetune_cmd->add_option("--lr", fta.lr, "Adam learning rate")->capture_default_str();
  finetune_cmd->add_option("--threshold", fta.threshold, "Loss threshold for epochs-to-threshold")->capture_default_str();
  finetune_cmd->add_option("--test-fraction", fta.test_fraction, "Held-out share per class")->capture_default_str();
  finetune_cmd->add_flag("--compare-scratch", fta.compare_scratch,
                         "Also run on the untrained encoder with the same initialization");
  finetune_cmd->add_flag("--whole-network", fta.whole_network,
                         "Also train the encoder, with its own small learning rate");
  finetune_cmd->add_option("--encoder-lr", fta.encoder_lr, "Encoder Adam learning rate in whole-network mode")
      ->capture_default_str()
      ->needs("--whole-network");
  finetune_cmd->add_option("--report", fta.report, "Write the loss curve CSV of the pretrained run here");
  add_seed(finetune_cmd, fta.seed);

  ServeArgs sva;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service until interrupted");
  serve_cmd->add_option("--config", sva.config, "Service config (JSON)")->required();
  serve_cmd->add_option("--port-file", sva.port_file, "Write the bound port here once listening");

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Write a two-family synthetic image corpus with a manifest");
  synth_cmd->add_option("--out", sy.out, "Output directory")->required();
  synth_cmd->add_option("--per-family", sy.per_family, "Images per family")->capture_default_str();
  synth_cmd->add_option("--size", sy.size, "Image side in pixels")->capture_default_str();
  synth_cmd->add_option("--channels", sy.channels, "1 or 3")->capture_default_str();
  add_seed(synth_cmd, sy.seed);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (pretrain_cmd->parsed()) return cmd_pretrain(pa, out);
    if (embed_cmd->parsed()) return cmd_embed(ea, out, err);
    if (search_cmd->parsed()) return cmd_search(sa, out);
    if (outliers_cmd->parsed()) return cmd_outliers(oa, out);
    if (project_cmd->parsed()) return cmd_project(pr, out);
    if (frames_cmd->parsed()) return cmd_frames(fa, out);
    if (balance_cmd->parsed()) return cmd_balance(ba, out);
    if (finetune_cmd->parsed()) return cmd_finetune(fta, out);
    if (serve_cmd->parsed()) return cmd_serve(sva, out);
    if (synth_cmd->parsed()) return cmd_synth(sy, out);
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const BindError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace agsv::cli
